use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::BodyTemplate;
use crate::{Error, Result};

/// Per-frame body parameters: axis-angle pose per joint, per-bone shape
/// offsets, expression (inert for the procedural body) and the root
/// translation in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub pose: Vec<Vector3<f64>>,
    pub shape: Vec<f64>,
    #[serde(default)]
    pub expression: Vec<f64>,
    pub root_trans_cam: Vector3<f64>,
}

impl BodyParams {
    /// Rest pose, zero shape, at the origin.
    pub fn zeros(joints: usize) -> Self {
        BodyParams {
            pose: vec![Vector3::zeros(); joints],
            shape: vec![0.0; joints],
            expression: Vec::new(),
            root_trans_cam: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.shape.iter().all(|v| v.is_finite())
            && self.expression.iter().all(|v| v.is_finite())
            && self.root_trans_cam.iter().all(|v| v.is_finite())
    }

    /// Copy with every joint rotation brought to an angle in `[0, pi]`.
    pub fn canonicalized(&self) -> Self {
        BodyParams {
            pose: self.pose.iter().map(canonical_axis_angle).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedBody {
    pub vertices: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

/// Wraps the rotation angle into `[0, pi]`, flipping the axis when needed.
pub fn canonical_axis_angle(w: &Vector3<f64>) -> Vector3<f64> {
    let angle = w.norm();
    if angle == 0.0 || !angle.is_finite() {
        return *w;
    }
    let axis = w / angle;
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        -axis * (2.0 * PI - wrapped)
    } else {
        axis * wrapped
    }
}

/// Rotation matrix of an axis-angle vector. A zero vector maps to the exact
/// identity.
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let angle = w.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    let k = w / angle;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Linear blend skinning of the template.
///
/// Shape scales each bone isotropically by `clamp(1 + beta_j, 0.5, 2)`.
/// Joint transforms are accumulated as affine maps `x -> M x + b` so that a
/// zero pose yields `M = I`, `b = 0` without rounding, which keeps the rest
/// geometry bit-exact.
pub fn lbs_forward(template: &BodyTemplate, params: &BodyParams) -> Result<PosedBody> {
    let nj = template.num_joints();
    if params.pose.len() != nj {
        return Err(Error::arg(format!(
            "pose has {} joints, template has {nj}",
            params.pose.len()
        )));
    }
    if !(params.shape.is_empty() || params.shape.len() == nj) {
        return Err(Error::arg(format!(
            "shape has {} entries, expected 0 or {nj}",
            params.shape.len()
        )));
    }
    if !params.is_finite() {
        return Err(Error::arg("body parameters must be finite"));
    }

    let scale: Vec<f64> = (0..nj)
        .map(|j| (1.0 + params.shape.get(j).copied().unwrap_or(0.0)).clamp(0.5, 2.0))
        .collect();

    // shaped rest joints as offsets from the template joints
    let mut delta = vec![Vector3::<f64>::zeros(); nj];
    for k in 1..nj {
        let p = template.parent[k].ok_or_else(|| Error::arg("non-root joint without parent"))?;
        delta[k] = delta[p] + (template.rest_joints[k] - template.rest_joints[p]) * (scale[p] - 1.0);
    }
    let shaped_joints: Vec<Vector3<f64>> = template
        .rest_joints
        .iter()
        .zip(&delta)
        .map(|(j, d)| j + d)
        .collect();

    let mut lin = Vec::with_capacity(nj);
    let mut off = Vec::with_capacity(nj);
    for k in 0..nj {
        let r = rodrigues(&canonical_axis_angle(&params.pose[k]));
        let local_off = shaped_joints[k] - r * shaped_joints[k];
        match template.parent[k] {
            None => {
                lin.push(r);
                off.push(local_off);
            }
            Some(p) => {
                let m: Matrix3<f64> = lin[p] * r;
                let b: Vector3<f64> = lin[p] * local_off + off[p];
                lin.push(m);
                off.push(b);
            }
        }
    }

    let trans = params.root_trans_cam;
    let joints = (0..nj)
        .map(|k| lin[k] * shaped_joints[k] + off[k] + trans)
        .collect();

    let mut vertices = Vec::with_capacity(template.num_vertices());
    for (i, v) in template.rest_vertices.iter().enumerate() {
        let b = template.part_map[i];
        let shaped = v + delta[b] + (v - template.rest_joints[b]) * (scale[b] - 1.0);
        let mut m = Matrix3::<f64>::zeros();
        let mut o = Vector3::<f64>::zeros();
        for (j, &w) in template.skin_weights.row(i).iter().enumerate() {
            if w != 0.0 {
                m += lin[j] * w;
                o += off[j] * w;
            }
        }
        vertices.push(m * shaped + o + trans);
    }

    Ok(PosedBody { vertices, joints })
}

/// Joints as the regressor-weighted combination of vertices.
pub fn regress_joints(template: &BodyTemplate, vertices: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    if vertices.len() != template.num_vertices() {
        return Err(Error::arg(format!(
            "{} vertices given, template has {}",
            vertices.len(),
            template.num_vertices()
        )));
    }
    Ok(template
        .joint_regressor
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(vertices)
                .filter(|(w, _)| **w != 0.0)
                .fold(Vector3::zeros(), |acc, (w, v)| acc + v * *w)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::build_template;
    use nalgebra::Matrix4;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_vertex_chain() -> BodyTemplate {
        let mut skin = Array2::zeros((2, 2));
        skin[[0, 0]] = 1.0;
        skin[[1, 1]] = 1.0;
        let mut reg = Array2::zeros((2, 2));
        reg[[0, 0]] = 1.0;
        reg[[1, 1]] = 1.0;
        BodyTemplate {
            rest_vertices: vec![Vector3::new(0.5, 0.0, 0.0), Vector3::new(1.5, 0.2, 0.0)],
            rest_joints: vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)],
            parent: vec![None, Some(0)],
            skin_weights: skin,
            part_map: vec![0, 1],
            foot_vertex_ids: vec![1],
            joint_regressor: reg,
        }
    }

    fn homogeneous(r: Matrix3<f64>, t: Vector3<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }

    #[test]
    fn zero_pose_is_rest_geometry_exactly() {
        for seed in 0..4 {
            let t = build_template(5, 24, seed).unwrap();
            let posed = lbs_forward(&t, &BodyParams::zeros(24)).unwrap();
            assert_eq!(posed.vertices, t.rest_vertices);
            assert_eq!(posed.joints, t.rest_joints);
        }
    }

    #[test]
    fn zero_pose_with_translation() {
        let t = build_template(3, 24, 1).unwrap();
        let mut p = BodyParams::zeros(24);
        p.root_trans_cam = Vector3::new(1.0, 2.0, 3.0);
        let posed = lbs_forward(&t, &p).unwrap();
        for (a, b) in posed.vertices.iter().zip(&t.rest_vertices) {
            assert_eq!(*a, b + Vector3::new(1.0, 2.0, 3.0));
        }
    }

    #[test]
    fn child_rotation_matches_matrix_chain() {
        let t = two_vertex_chain();
        let mut p = BodyParams::zeros(2);
        p.pose[1] = Vector3::new(0.0, 0.0, PI / 2.0);
        let posed = lbs_forward(&t, &p).unwrap();

        // T(j1) * Rz(90) * T(-j1), built by hand
        let rz = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let j1 = t.rest_joints[1];
        let chain = homogeneous(Matrix3::identity(), j1)
            * homogeneous(rz, Vector3::zeros())
            * homogeneous(Matrix3::identity(), -j1);
        let v = t.rest_vertices[1];
        let expected = chain * nalgebra::Vector4::new(v.x, v.y, v.z, 1.0);
        assert!((posed.vertices[1] - expected.xyz()).norm() < 1e-12);
        // (1.5, 0.2) about (1, 0) by +90 degrees -> (0.8, 0.5)
        assert!((posed.vertices[1] - Vector3::new(0.8, 0.5, 0.0)).norm() < 1e-12);
        assert_eq!(posed.vertices[0], t.rest_vertices[0]);
    }

    #[test]
    fn one_hot_weights_give_rigid_bone_transform() {
        let t = two_vertex_chain();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = BodyParams::zeros(2);
        p.pose[0] = Vector3::new(rng.random(), rng.random(), rng.random());
        p.pose[1] = Vector3::new(rng.random(), rng.random(), rng.random());
        p.root_trans_cam = Vector3::new(0.3, -0.1, 2.0);
        let posed = lbs_forward(&t, &p).unwrap();
        let r0 = rodrigues(&p.pose[0]);
        let r1 = rodrigues(&p.pose[1]);
        let j0 = t.rest_joints[0];
        let j1 = t.rest_joints[1];
        let g0 = homogeneous(Matrix3::identity(), p.root_trans_cam)
            * homogeneous(Matrix3::identity(), j0)
            * homogeneous(r0, Vector3::zeros())
            * homogeneous(Matrix3::identity(), -j0);
        let g1 = g0
            * homogeneous(Matrix3::identity(), j1)
            * homogeneous(r1, Vector3::zeros())
            * homogeneous(Matrix3::identity(), -j1);
        for (k, g) in [g0, g1].iter().enumerate() {
            let v = t.rest_vertices[k];
            let e = g * nalgebra::Vector4::new(v.x, v.y, v.z, 1.0);
            assert!((posed.vertices[k] - e.xyz()).norm() < 1e-12);
        }
    }

    #[test]
    fn shape_scales_bone_lengths() {
        let t = two_vertex_chain();
        let mut p = BodyParams::zeros(2);
        p.shape = vec![1.0, 0.0];
        let posed = lbs_forward(&t, &p).unwrap();
        // bone 0 doubled: joint 1 moves from x=1 to x=2
        assert!((posed.joints[1] - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((posed.vertices[0] - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        // huge beta is clipped to a factor of 2
        p.shape = vec![10.0, 0.0];
        let clipped = lbs_forward(&t, &p).unwrap();
        assert_eq!(clipped.joints, posed.joints);
    }

    #[test]
    fn canonicalization_bounds_angle() {
        let w = Vector3::new(0.0, 0.0, 1.5 * PI);
        let c = canonical_axis_angle(&w);
        assert!((c - Vector3::new(0.0, 0.0, -0.5 * PI)).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let w = Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            let c = canonical_axis_angle(&w);
            assert!(c.norm() <= PI + 1e-6);
            assert!((rodrigues(&w) - rodrigues(&c)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn rejects_mismatched_or_non_finite_params() {
        let t = two_vertex_chain();
        assert!(lbs_forward(&t, &BodyParams::zeros(3)).is_err());
        let mut p = BodyParams::zeros(2);
        p.root_trans_cam.x = f64::NAN;
        assert!(lbs_forward(&t, &p).is_err());
        let mut p = BodyParams::zeros(2);
        p.shape = vec![0.0; 5];
        assert!(lbs_forward(&t, &p).is_err());
    }

    #[test]
    fn regressor_one_hot_and_uniform() {
        let t = two_vertex_chain();
        let j = regress_joints(&t, &t.rest_vertices).unwrap();
        assert_eq!(j, t.rest_vertices);

        let mut u = t.clone();
        u.joint_regressor = Array2::from_elem((2, 2), 0.5);
        let j = regress_joints(&u, &u.rest_vertices).unwrap();
        let centroid = (u.rest_vertices[0] + u.rest_vertices[1]) * 0.5;
        assert!(j.iter().all(|x| (x - centroid).norm() < 1e-15));
        assert!(regress_joints(&t, &t.rest_vertices[..1]).is_err());
    }

    #[test]
    fn regressor_matches_naive_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut t = build_template(1, 5, 2).unwrap();
        let mut reg = Array2::<f64>::zeros((5, 5));
        for mut row in reg.rows_mut() {
            let raw: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            for (dst, r) in row.iter_mut().zip(raw) {
                *dst = r / s;
            }
        }
        t.joint_regressor = reg.clone();
        let verts: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let got = regress_joints(&t, &verts).unwrap();
        for j in 0..5 {
            for c in 0..3 {
                let mut acc = 0.0;
                for v in 0..5 {
                    acc += reg[[j, v]] * verts[v][c];
                }
                assert!((got[j][c] - acc).abs() < 1e-14);
            }
        }
    }
}
