//! Sequence bundles: everything the evaluation protocol and the streaming
//! demo consume, in world coordinates and metres.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::arrays::{ArrayData, ArrayStore, DType, NamedArray};
use crate::body::{BodyParams, BodyTemplate, CameraPose};
use crate::scene::{Anchor, PointFrame, Pointmap};
use crate::{Error, Result};

pub const BUNDLE_FORMAT: &str = "contact4d-bundle";

/// Frame `t`, person `n`, element `k`.
pub type Track = Vec<Vec<Vec<Vector3<f64>>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub name: String,
    pub fps: f64,
    pub frames: usize,
    pub persons: usize,
    pub vertices: usize,
    pub joints: usize,
    /// Contact distance threshold of the ground-truth labels, metres.
    pub tau: f64,
    pub units: String,
    pub angles: String,
    pub up_axis: String,
    pub camera_convention: String,
    #[serde(default)]
    pub contact_prob_dtype: DType,
    #[serde(default)]
    pub terrain: Option<String>,
    #[serde(default)]
    pub motion: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl BundleMeta {
    pub fn new(name: &str, fps: f64, frames: usize, persons: usize, template: &BodyTemplate) -> Self {
        BundleMeta {
            name: name.into(),
            fps,
            frames,
            persons,
            vertices: template.num_vertices(),
            joints: template.num_joints(),
            tau: 0.025,
            units: "meters".into(),
            angles: "radians".into(),
            up_axis: "z".into(),
            camera_convention: "camera-to-world; camera axes x right, y down, z forward".into(),
            contact_prob_dtype: DType::F64,
            terrain: None,
            motion: None,
            seed: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Schema("fps must be positive".into()));
        }
        if self.frames == 0 || self.persons == 0 {
            return Err(Error::Schema("bundles need at least one frame and one person".into()));
        }
        if self.units != "meters" || self.angles != "radians" || self.up_axis != "z" {
            return Err(Error::Schema("bundles are stored in meters and radians with z up".into()));
        }
        if !matches!(self.contact_prob_dtype, DType::F64 | DType::F32) {
            return Err(Error::Schema("contact probabilities must be f64 or f32".into()));
        }
        Ok(())
    }
}

/// Body parameters and world-frame geometry of every person over time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BodyTrack {
    /// `[T][N]`.
    pub params: Option<Vec<Vec<BodyParams>>>,
    pub joints: Option<Track>,
    pub vertices: Option<Track>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBundle {
    pub meta: BundleMeta,
    pub template: BodyTemplate,
    pub gt: BodyTrack,
    pub pred: BodyTrack,
    /// Camera-to-world pose per frame.
    pub cameras: Vec<CameraPose>,
    /// World-frame pointmaps, one per frame.
    pub pointmaps: Option<Vec<Pointmap>>,
    /// `[T][N]`, person index equal to the position.
    pub anchors: Option<Vec<Vec<Anchor>>>,
    /// `[T]` of `N x V`.
    pub contact_gt: Option<Vec<Array2<u8>>>,
    pub contact_pred: Option<Vec<Array2<f64>>>,
}

fn flat_track(track: &Track) -> Vec<f64> {
    track.iter().flatten().flatten().flat_map(|p| p.iter().copied().collect::<Vec<_>>()).collect()
}

fn unflat_track(data: &[f64], t: usize, n: usize, k: usize) -> Track {
    let mut it = data.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2]));
    (0..t)
        .map(|_| (0..n).map(|_| it.by_ref().take(k).collect()).collect())
        .collect()
}

fn check_track(name: &str, track: &Track, t: usize, n: usize, k: usize) -> Result<()> {
    if track.len() != t || track.iter().any(|f| f.len() != n || f.iter().any(|p| p.len() != k)) {
        return Err(Error::Schema(format!("{name} must have shape [{t}][{n}][{k}]")));
    }
    Ok(())
}

impl SequenceBundle {
    pub fn frames(&self) -> usize {
        self.meta.frames
    }

    pub fn persons(&self) -> usize {
        self.meta.persons
    }

    /// Checks every present field against the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.template.validate()?;
        let (t, n, v, j) = (self.meta.frames, self.meta.persons, self.meta.vertices, self.meta.joints);
        if self.template.num_vertices() != v || self.template.num_joints() != j {
            return Err(Error::Schema("template size differs from the declared V and J".into()));
        }
        if self.cameras.len() != t {
            return Err(Error::Schema(format!("{} cameras for {t} frames", self.cameras.len())));
        }
        for cam in &self.cameras {
            cam.validate()?;
        }
        for (label, track) in [("gt", &self.gt), ("pred", &self.pred)] {
            if let Some(p) = &track.params {
                if p.len() != t || p.iter().any(|f| f.len() != n) {
                    return Err(Error::Schema(format!("{label}.params must have shape [{t}][{n}]")));
                }
                let shape_len = p[0][0].shape.len();
                let expr_len = p[0][0].expression.len();
                if p.iter().flatten().any(|b| {
                    b.pose.len() != j || b.shape.len() != shape_len || b.expression.len() != expr_len
                }) {
                    return Err(Error::Schema(format!("{label}.params have inconsistent sizes")));
                }
            }
            if let Some(x) = &track.joints {
                check_track(&format!("{label}.joints"), x, t, n, j)?;
            }
            if let Some(x) = &track.vertices {
                check_track(&format!("{label}.vertices"), x, t, n, v)?;
            }
        }
        if let Some(pms) = &self.pointmaps {
            if pms.len() != t {
                return Err(Error::Schema(format!("{} pointmaps for {t} frames", pms.len())));
            }
            let (h, w) = (pms[0].height(), pms[0].width());
            if pms.iter().any(|p| p.height() != h || p.width() != w || p.frame() != PointFrame::World) {
                return Err(Error::Schema("pointmaps must share one size and be in world coordinates".into()));
            }
        }
        if let Some(a) = &self.anchors {
            if a.len() != t || a.iter().any(|f| f.len() != n || f.iter().enumerate().any(|(k, x)| x.person != k)) {
                return Err(Error::Schema(format!("anchors must have shape [{t}][{n}] in person order")));
            }
        }
        if let Some(c) = &self.contact_gt {
            if c.len() != t || c.iter().any(|f| f.dim() != (n, v)) {
                return Err(Error::Schema(format!("contact_gt must have shape [{t}][{n}][{v}]")));
            }
        }
        if let Some(c) = &self.contact_pred {
            if c.len() != t || c.iter().any(|f| f.dim() != (n, v)) {
                return Err(Error::Schema(format!("contact_pred must have shape [{t}][{n}][{v}]")));
            }
        }
        Ok(())
    }

    /// Keeps the first `frames` frames.
    pub fn truncated(&self, frames: usize) -> Result<Self> {
        if frames == 0 || frames > self.meta.frames {
            return Err(Error::arg(format!("cannot truncate {} frames to {frames}", self.meta.frames)));
        }
        let cut_track = |b: &BodyTrack| BodyTrack {
            params: b.params.as_ref().map(|p| p[..frames].to_vec()),
            joints: b.joints.as_ref().map(|p| p[..frames].to_vec()),
            vertices: b.vertices.as_ref().map(|p| p[..frames].to_vec()),
        };
        let mut out = SequenceBundle {
            meta: self.meta.clone(),
            template: self.template.clone(),
            gt: cut_track(&self.gt),
            pred: cut_track(&self.pred),
            cameras: self.cameras[..frames].to_vec(),
            pointmaps: self.pointmaps.as_ref().map(|p| p[..frames].to_vec()),
            anchors: self.anchors.as_ref().map(|p| p[..frames].to_vec()),
            contact_gt: self.contact_gt.as_ref().map(|p| p[..frames].to_vec()),
            contact_pred: self.contact_pred.as_ref().map(|p| p[..frames].to_vec()),
        };
        out.meta.frames = frames;
        Ok(out)
    }

    fn to_store(&self) -> Result<ArrayStore> {
        self.validate()?;
        let (t, n, v, j) = (self.meta.frames, self.meta.persons, self.meta.vertices, self.meta.joints);
        let mut s = ArrayStore::default();
        let tpl = &self.template;
        let vec3s = |pts: &[Vector3<f64>]| pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>();
        s.insert("template.rest_vertices", NamedArray::f64(vec![v, 3], vec3s(&tpl.rest_vertices))?);
        s.insert("template.rest_joints", NamedArray::f64(vec![j, 3], vec3s(&tpl.rest_joints))?);
        s.insert(
            "template.parent",
            NamedArray::u32(vec![j], tpl.parent.iter().map(|p| p.map_or(u32::MAX, |p| p as u32)).collect())?,
        );
        s.insert("template.skin_weights", NamedArray::f64(vec![v, j], tpl.skin_weights.iter().copied().collect())?);
        s.insert(
            "template.joint_regressor",
            NamedArray::f64(vec![j, v], tpl.joint_regressor.iter().copied().collect())?,
        );
        s.insert("template.part_map", NamedArray::u32(vec![v], tpl.part_map.iter().map(|&p| p as u32).collect())?);
        s.insert(
            "template.foot_ids",
            NamedArray::u32(vec![tpl.foot_vertex_ids.len()], tpl.foot_vertex_ids.iter().map(|&p| p as u32).collect())?,
        );

        s.insert(
            "cameras.rotation",
            NamedArray::f64(
                vec![t, 3, 3],
                self.cameras.iter().flat_map(|c| c.rotation.transpose().iter().copied().collect::<Vec<_>>()).collect(),
            )?,
        );
        s.insert(
            "cameras.translation",
            NamedArray::f64(vec![t, 3], self.cameras.iter().flat_map(|c| c.translation.iter().copied().collect::<Vec<_>>()).collect())?,
        );

        for (label, track) in [("gt", &self.gt), ("pred", &self.pred)] {
            if let Some(p) = &track.params {
                let bodies: Vec<&BodyParams> = p.iter().flatten().collect();
                let (sl, el) = (bodies[0].shape.len(), bodies[0].expression.len());
                s.insert(
                    &format!("{label}.pose"),
                    NamedArray::f64(vec![t, n, j, 3], bodies.iter().flat_map(|b| vec3s(&b.pose)).collect())?,
                );
                s.insert(
                    &format!("{label}.shape"),
                    NamedArray::f64(vec![t, n, sl], bodies.iter().flat_map(|b| b.shape.clone()).collect())?,
                );
                s.insert(
                    &format!("{label}.expression"),
                    NamedArray::f64(vec![t, n, el], bodies.iter().flat_map(|b| b.expression.clone()).collect())?,
                );
                s.insert(
                    &format!("{label}.root_trans_cam"),
                    NamedArray::f64(vec![t, n, 3], bodies.iter().flat_map(|b| [b.root_trans_cam.x, b.root_trans_cam.y, b.root_trans_cam.z]).collect())?,
                );
            }
            if let Some(x) = &track.joints {
                s.insert(&format!("{label}.joints"), NamedArray::f64(vec![t, n, j, 3], flat_track(x))?);
            }
            if let Some(x) = &track.vertices {
                s.insert(&format!("{label}.vertices"), NamedArray::f64(vec![t, n, v, 3], flat_track(x))?);
            }
        }

        if let Some(pms) = &self.pointmaps {
            let (h, w) = (pms[0].height(), pms[0].width());
            s.insert(
                "pointmaps.points",
                NamedArray::f64(vec![t, h, w, 3], pms.iter().flat_map(|p| vec3s(p.points())).collect())?,
            );
            s.insert(
                "pointmaps.valid",
                NamedArray::u8(vec![t, h, w], pms.iter().flat_map(|p| p.valid_mask().iter().map(|&b| u8::from(b))).collect())?,
            );
        }
        if let Some(a) = &self.anchors {
            s.insert("anchors", NamedArray::f64(vec![t, n, 2], a.iter().flatten().flat_map(|x| x.u).collect())?);
        }
        if let Some(c) = &self.contact_gt {
            s.insert("contact.gt", NamedArray::u8(vec![t, n, v], c.iter().flat_map(|f| f.iter().copied()).collect())?);
        }
        if let Some(c) = &self.contact_pred {
            let values = c.iter().flat_map(|f| f.iter().copied());
            let data = match self.meta.contact_prob_dtype {
                DType::F32 => ArrayData::F32(values.map(|x| x as f32).collect()),
                _ => ArrayData::F64(values.collect()),
            };
            s.insert("contact.pred", NamedArray::new(vec![t, n, v], data)?);
        }
        Ok(s)
    }

    fn from_store(meta: BundleMeta, s: &ArrayStore) -> Result<Self> {
        meta.validate()?;
        let (t, n, v, j) = (meta.frames, meta.persons, meta.vertices, meta.joints);
        let vec3s = |d: &[f64]| d.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
        let usizes = |d: Vec<u32>| d.into_iter().map(|x| x as usize).collect::<Vec<_>>();

        let (_, rv) = s.floats("template.rest_vertices", &[Some(v), Some(3)])?;
        let (_, rj) = s.floats("template.rest_joints", &[Some(j), Some(3)])?;
        let (_, parent) = s.indices("template.parent", &[Some(j)])?;
        let (_, skin) = s.floats("template.skin_weights", &[Some(v), Some(j)])?;
        let (_, reg) = s.floats("template.joint_regressor", &[Some(j), Some(v)])?;
        let (_, part_map) = s.indices("template.part_map", &[Some(v)])?;
        let (_, feet) = s.indices("template.foot_ids", &[None])?;
        let template = BodyTemplate {
            rest_vertices: vec3s(&rv),
            rest_joints: vec3s(&rj),
            parent: parent.into_iter().map(|p| (p != u32::MAX).then_some(p as usize)).collect(),
            skin_weights: Array2::from_shape_vec((v, j), skin).map_err(|e| Error::Schema(e.to_string()))?,
            part_map: usizes(part_map),
            foot_vertex_ids: usizes(feet),
            joint_regressor: Array2::from_shape_vec((j, v), reg).map_err(|e| Error::Schema(e.to_string()))?,
        };
        template.validate().map_err(|e| Error::Schema(format!("template: {e}")))?;

        let (_, rot) = s.floats("cameras.rotation", &[Some(t), Some(3), Some(3)])?;
        let (_, tr) = s.floats("cameras.translation", &[Some(t), Some(3)])?;
        let cameras = rot
            .chunks_exact(9)
            .zip(tr.chunks_exact(3))
            .map(|(r, x)| CameraPose {
                rotation: Matrix3::from_row_slice(r),
                translation: Vector3::new(x[0], x[1], x[2]),
            })
            .collect();

        let track = |label: &str| -> Result<BodyTrack> {
            let params = if s.contains(&format!("{label}.pose")) {
                let (_, pose) = s.floats(&format!("{label}.pose"), &[Some(t), Some(n), Some(j), Some(3)])?;
                let (sh, shape) = s.floats(&format!("{label}.shape"), &[Some(t), Some(n), None])?;
                let (eh, expr) = s.floats(&format!("{label}.expression"), &[Some(t), Some(n), None])?;
                let (_, root) = s.floats(&format!("{label}.root_trans_cam"), &[Some(t), Some(n), Some(3)])?;
                let (sl, el) = (sh[2], eh[2]);
                let bodies: Vec<BodyParams> = (0..t * n)
                    .map(|i| BodyParams {
                        pose: vec3s(&pose[i * j * 3..(i + 1) * j * 3]),
                        shape: shape[i * sl..(i + 1) * sl].to_vec(),
                        expression: expr[i * el..(i + 1) * el].to_vec(),
                        root_trans_cam: Vector3::new(root[3 * i], root[3 * i + 1], root[3 * i + 2]),
                    })
                    .collect();
                Some(bodies.chunks(n).map(<[BodyParams]>::to_vec).collect())
            } else {
                None
            };
            let read = |name: &str, k: usize| -> Result<Option<Track>> {
                let full = format!("{label}.{name}");
                if !s.contains(&full) {
                    return Ok(None);
                }
                let (_, d) = s.floats(&full, &[Some(t), Some(n), Some(k), Some(3)])?;
                Ok(Some(unflat_track(&d, t, n, k)))
            };
            Ok(BodyTrack {
                params,
                joints: read("joints", j)?,
                vertices: read("vertices", v)?,
            })
        };
        let gt = track("gt")?;
        let pred = track("pred")?;

        let pointmaps = if s.contains("pointmaps.points") {
            let (shape, pts) = s.floats("pointmaps.points", &[Some(t), None, None, Some(3)])?;
            let (h, w) = (shape[1], shape[2]);
            let (_, valid) = s.bytes("pointmaps.valid", &[Some(t), Some(h), Some(w)])?;
            let per = h * w;
            let maps = (0..t)
                .map(|k| {
                    Pointmap::new(
                        h,
                        w,
                        vec3s(&pts[k * per * 3..(k + 1) * per * 3]),
                        valid[k * per..(k + 1) * per].iter().map(|&b| b != 0).collect(),
                        PointFrame::World,
                    )
                    .map_err(|e| Error::Schema(format!("pointmap {k}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(maps)
        } else {
            None
        };
        let anchors = if s.contains("anchors") {
            let (_, a) = s.floats("anchors", &[Some(t), Some(n), Some(2)])?;
            Some(
                (0..t)
                    .map(|k| (0..n).map(|p| Anchor::new(a[(k * n + p) * 2], a[(k * n + p) * 2 + 1], p)).collect())
                    .collect(),
            )
        } else {
            None
        };
        let frames_of = |d: Vec<u8>| -> Vec<Array2<u8>> {
            d.chunks_exact(n * v).map(|c| Array2::from_shape_vec((n, v), c.to_vec()).expect("sized chunk")).collect()
        };
        let contact_gt = if s.contains("contact.gt") {
            Some(frames_of(s.bytes("contact.gt", &[Some(t), Some(n), Some(v)])?.1))
        } else {
            None
        };
        let contact_pred = if s.contains("contact.pred") {
            let a = s.get("contact.pred")?;
            if a.data.dtype() != meta.contact_prob_dtype {
                return Err(Error::Schema("contact.pred dtype differs from the declared one".into()));
            }
            let (_, d) = s.floats("contact.pred", &[Some(t), Some(n), Some(v)])?;
            Some(
                d.chunks_exact(n * v)
                    .map(|c| Array2::from_shape_vec((n, v), c.to_vec()).expect("sized chunk"))
                    .collect(),
            )
        } else {
            None
        };
        let bundle = SequenceBundle {
            meta,
            template,
            gt,
            pred,
            cameras,
            pointmaps,
            anchors,
            contact_gt,
            contact_pred,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let store = self.to_store()?;
        store.save(dir, BUNDLE_FORMAT, serde_json::to_value(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, store) = ArrayStore::load(dir, BUNDLE_FORMAT)?;
        let meta: BundleMeta =
            serde_json::from_value(manifest.meta).map_err(|e| Error::Schema(format!("bundle meta: {e}")))?;
        SequenceBundle::from_store(meta, &store)
    }
}
