use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{CameraPath, Motion, SynthConfig, Terrain};
use crate::body::{lbs_forward, rodrigues, BodyParams, BodyTemplate, CameraPose};
use crate::io::{BodyTrack, BundleMeta, SequenceBundle, Track};
use crate::scene::{Anchor, PointFrame, PointIndex, Pointmap};
use crate::{Error, Result, UP_AXIS};

/// Lateral spacing between persons, metres.
const PERSON_SPACING: f64 = 1.5;
/// Radius of the walking and drift arcs, metres.
const ARC_RADIUS: f64 = 3.0;
const WALK_SPEED: f64 = 1.2;
const WALK_SWING: f64 = 0.35;
const WALK_HZ: f64 = 1.0;
const HOP_BEND: f64 = 0.25;
const HOP_HZ: f64 = 1.5;
/// Sampling pitch of the terrain patch used for contact labels, metres.
const CONTACT_PITCH: f64 = 0.01;
/// Margin of the pointmap around the travelled area, metres.
const SCENE_MARGIN: f64 = 1.5;

/// `1` where the nearest scene point lies within `tau`.
pub fn contact_oracle(vertices: &[Vector3<f64>], scene: &PointIndex, tau: f64) -> Result<Vec<u8>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg(format!("contact distance must be positive, got {tau}")));
    }
    Ok(vertices.iter().map(|v| u8::from(scene.nearest(v).0 <= tau)).collect())
}

/// As [`contact_oracle`] over a raw point set; an empty scene is an error.
pub fn contact_oracle_points(vertices: &[Vector3<f64>], scene: &[Vector3<f64>], tau: f64) -> Result<Vec<u8>> {
    if scene.is_empty() {
        return Err(Error::arg("contact oracle needs a nonempty scene"));
    }
    contact_oracle(vertices, &PointIndex::build(scene)?, tau)
}

/// Terrain samples on a regular grid covering the horizontal extent of
/// `vertices` plus `margin`.
pub fn terrain_patch(terrain: &Terrain, vertices: &[Vector3<f64>], margin: f64, pitch: f64) -> Vec<Vector3<f64>> {
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let x0 = ((lo.x - margin) / pitch).floor() as i64;
    let x1 = ((hi.x + margin) / pitch).ceil() as i64;
    let y0 = ((lo.y - margin) / pitch).floor() as i64;
    let y1 = ((hi.y + margin) / pitch).ceil() as i64;
    let mut pts = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
    for i in x0..=x1 {
        for j in y0..=y1 {
            let (x, y) = (i as f64 * pitch, j as f64 * pitch);
            pts.push(Vector3::new(x, y, terrain.height_at(x, y)));
        }
    }
    pts
}

/// Horizontal position and heading of person `n` at frame `t`.
fn placement(cfg: &SynthConfig, n: usize, t: usize) -> (f64, f64, f64) {
    let lane = PERSON_SPACING * n as f64;
    let arc = |theta: f64| (ARC_RADIUS * theta.sin(), ARC_RADIUS * (1.0 - theta.cos()) + lane);
    match cfg.motion {
        Motion::Stand | Motion::Hop => (0.0, lane, 0.0),
        Motion::Walk => {
            let theta = WALK_SPEED * t as f64 / cfg.fps / ARC_RADIUS;
            let (x, y) = arc(theta);
            (x, y, theta)
        }
        Motion::Drift => {
            // palindromic: frame t and frame T - 1 - t coincide
            let s = if cfg.frames > 1 {
                1.0 - (2.0 * t as f64 / (cfg.frames - 1) as f64 - 1.0).abs()
            } else {
                0.0
            };
            let (x, y) = arc(s * PI / 2.0);
            (x, y, 0.0)
        }
    }
}

/// Joint rotations (root excluded) for person `n` at frame `t`.
fn articulation(cfg: &SynthConfig, joints: usize, n: usize, t: usize) -> Vec<Vector3<f64>> {
    let time = t as f64 / cfg.fps;
    let phase = 0.7 * n as f64;
    (0..joints)
        .map(|k| {
            let angle = match cfg.motion {
                Motion::Stand | Motion::Drift => 0.0,
                Motion::Walk if k > 0 => {
                    let alt = if k % 2 == 0 { 0.0 } else { PI };
                    WALK_SWING * (2.0 * PI * WALK_HZ * time + alt + phase).sin()
                }
                Motion::Hop if k > 0 => HOP_BEND * (0.5 - 0.5 * (2.0 * PI * HOP_HZ * time + phase).cos()),
                _ => 0.0,
            };
            Vector3::new(angle, 0.0, 0.0)
        })
        .collect()
}

/// Camera-frame parameters of a body posed in the world with root rotation
/// `root_world` (axis-angle) and world translation `trans_world`.
fn to_camera_params(
    template: &BodyTemplate,
    world: &BodyParams,
    cam: &CameraPose,
) -> BodyParams {
    let rt = cam.rotation.transpose();
    let root_rot = rt * rodrigues(&world.pose[0]);
    let root_aa = Rotation3::from_matrix_unchecked(root_rot).scaled_axis();
    let j0 = template.rest_joints[0];
    let mut pose = world.pose.clone();
    pose[0] = root_aa;
    BodyParams {
        pose,
        shape: world.shape.clone(),
        expression: world.expression.clone(),
        root_trans_cam: rt * (j0 + world.root_trans_cam - cam.translation) - j0,
    }
}

struct PersonFrame {
    params: BodyParams,
    joints: Vec<Vector3<f64>>,
    vertices: Vec<Vector3<f64>>,
}

/// World-posed body resting on the terrain: the vertex closest to (or
/// deepest below) the terrain touches it.
fn grounded(
    template: &BodyTemplate,
    terrain: &Terrain,
    world: &BodyParams,
    offset: Option<f64>,
) -> Result<(PersonFrame, f64)> {
    let posed = lbs_forward(template, world)?;
    let off = offset.unwrap_or_else(|| {
        posed
            .vertices
            .iter()
            .map(|v| v[UP_AXIS] - terrain.height_at(v.x, v.y))
            .fold(f64::INFINITY, f64::min)
    });
    let drop = |p: &Vector3<f64>| Vector3::new(p.x, p.y, p.z - off);
    let mut params = world.clone();
    params.root_trans_cam.z -= off;
    Ok((
        PersonFrame {
            params,
            joints: posed.joints.iter().map(drop).collect(),
            vertices: posed.vertices.iter().map(drop).collect(),
        },
        off,
    ))
}

/// Deterministic synthetic sequence: grounded bodies, a fixed terrain
/// pointmap, contact labels from [`contact_oracle`] and a prediction
/// channel corrupted by the configured noise and drift.
pub fn gen_sequence(cfg: &SynthConfig, template: &BodyTemplate) -> Result<SequenceBundle> {
    cfg.validate()?;
    template.validate()?;
    let (t_count, n_count, j_count, v_count) =
        (cfg.frames, cfg.persons, template.num_joints(), template.num_vertices());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pose_noise = Normal::new(0.0, cfg.noise.pose_rad).map_err(|e| Error::arg(e.to_string()))?;
    let trans_noise = Normal::new(0.0, cfg.noise.translation_m).map_err(|e| Error::arg(e.to_string()))?;
    let shapes: Vec<Vec<f64>> = (0..n_count)
        .map(|_| (0..j_count).map(|_| rng.random_range(-0.05..0.05)).collect())
        .collect();

    // scene extent and camera path
    let places: Vec<Vec<(f64, f64, f64)>> =
        (0..t_count).map(|t| (0..n_count).map(|n| placement(cfg, n, t)).collect()).collect();
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for &(x, y, _) in places.iter().flatten() {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let (x0, y0) = (lo.0 - SCENE_MARGIN, lo.1 - SCENE_MARGIN);
    let [rows, cols] = cfg.pointmap;
    let dx = (hi.0 + SCENE_MARGIN - x0) / (cols - 1) as f64;
    let dy = (hi.1 + SCENE_MARGIN - y0) / (rows - 1) as f64;
    let centre = Vector3::new(0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1), 0.0);
    let ground_c = cfg.terrain.height_at(centre.x, centre.y);
    let camera_at = |t: usize| -> Result<CameraPose> {
        let angle = match cfg.camera {
            CameraPath::Static => 0.0,
            CameraPath::Orbit { deg_per_frame } => (deg_per_frame * t as f64).to_radians(),
        };
        let base = Vector3::new(-6.0, -6.0, 0.0);
        let eye = centre + Rotation3::from_axis_angle(&Vector3::z_axis(), angle) * base
            + Vector3::new(0.0, 0.0, ground_c + 3.0);
        CameraPose::look_at(eye, centre + Vector3::new(0.0, 0.0, ground_c + 1.0))
    };
    let terrain = cfg.terrain;
    let pointmap = Pointmap::from_fn(rows, cols, PointFrame::World, |r, c| {
        let (x, y) = (x0 + c as f64 * dx, y0 + r as f64 * dy);
        Vector3::new(x, y, terrain.height_at(x, y))
    })?;

    let mut cameras = Vec::with_capacity(t_count);
    let mut gt_params = Vec::with_capacity(t_count);
    let mut pred_params = Vec::with_capacity(t_count);
    let (mut gt_j, mut gt_v, mut pr_j, mut pr_v): (Track, Track, Track, Track) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut anchors = Vec::with_capacity(t_count);
    let mut contact_gt = Vec::with_capacity(t_count);
    let mut contact_pred = Vec::with_capacity(t_count);

    for t in 0..t_count {
        let cam = camera_at(t)?;
        let mut frame = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        let (mut gp, mut pp, mut fa) = (Vec::new(), Vec::new(), Vec::new());
        let mut labels = Array2::<u8>::zeros((n_count, v_count));
        let mut probs = Array2::<f64>::zeros((n_count, v_count));
        for n in 0..n_count {
            let (x, y, yaw) = places[t][n];
            let mut pose = articulation(cfg, j_count, n, t);
            pose[0] = Vector3::new(0.0, 0.0, yaw);
            let world = BodyParams {
                pose,
                shape: shapes[n].clone(),
                expression: Vec::new(),
                root_trans_cam: Vector3::new(x, y, 0.0),
            };
            let (gt, off) = grounded(template, &cfg.terrain, &world, None)?;

            let mut noisy = world.clone();
            for p in &mut noisy.pose {
                *p += Vector3::from_fn(|_, _| pose_noise.sample(&mut rng));
            }
            let tn = Vector3::from_fn(|_, _| trans_noise.sample(&mut rng));
            noisy.root_trans_cam.x += tn.x;
            noisy.root_trans_cam.y += tn.y;
            let (mut pred, _) = grounded(template, &cfg.terrain, &noisy, Some(off))?;
            let mut shift = Vector3::new(0.0, 0.0, tn.z);
            if cfg.motion == Motion::Drift {
                shift.x += cfg.drift_m_per_frame * t as f64;
            }
            for p in pred.joints.iter_mut().chain(pred.vertices.iter_mut()) {
                *p += shift;
            }
            pred.params.root_trans_cam += shift;

            let patch = terrain_patch(&cfg.terrain, &gt.vertices, cfg.tau + 0.02, CONTACT_PITCH);
            let lab = contact_oracle(&gt.vertices, &PointIndex::build(&patch)?, cfg.tau)?;
            for (v, &l) in lab.iter().enumerate() {
                labels[[n, v]] = l;
                let flip = cfg.noise.contact_flip > 0.0 && rng.random_bool(cfg.noise.contact_flip);
                probs[[n, v]] = if (l == 1) != flip { 1.0 } else { 0.0 };
            }

            let root = gt.joints[0];
            fa.push(Anchor::new(
                ((root.x - x0) / dx).clamp(0.0, (cols - 1) as f64),
                ((root.y - y0) / dy).clamp(0.0, (rows - 1) as f64),
                n,
            ));
            gp.push(to_camera_params(template, &gt.params, &cam));
            pp.push(to_camera_params(template, &pred.params, &cam));
            frame[0].push(gt.joints);
            frame[1].push(gt.vertices);
            frame[2].push(pred.joints);
            frame[3].push(pred.vertices);
        }
        let [a, b, c, d] = frame;
        gt_j.push(a);
        gt_v.push(b);
        pr_j.push(c);
        pr_v.push(d);
        cameras.push(cam);
        gt_params.push(gp);
        pred_params.push(pp);
        anchors.push(fa);
        contact_gt.push(labels);
        contact_pred.push(probs);
    }

    let name = format!("{}_{}_s{}", cfg.motion.name(), cfg.terrain.name(), cfg.seed);
    let mut meta = BundleMeta::new(&name, cfg.fps, t_count, n_count, template);
    meta.tau = cfg.tau;
    meta.terrain = Some(cfg.terrain.name().into());
    meta.motion = Some(cfg.motion.name().into());
    meta.seed = Some(cfg.seed);
    let bundle = SequenceBundle {
        meta,
        template: template.clone(),
        gt: BodyTrack {
            params: Some(gt_params),
            joints: Some(gt_j),
            vertices: Some(gt_v),
        },
        pred: BodyTrack {
            params: Some(pred_params),
            joints: Some(pr_j),
            vertices: Some(pr_v),
        },
        cameras,
        pointmaps: Some(vec![pointmap; t_count]),
        anchors: Some(anchors),
        contact_gt: Some(contact_gt),
        contact_pred: Some(contact_pred),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Bundles `seed, seed + 1, ...` of one configuration.
pub fn gen_bundles(cfg: &SynthConfig) -> Result<Vec<SequenceBundle>> {
    let template = cfg.template.build()?;
    (0..cfg.bundles as u64)
        .map(|k| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(k);
            gen_sequence(&c, &template)
        })
        .collect()
}
