//! Ground interaction and temporal stability.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::motion::{Sequence, M_TO_MM};
use crate::scene::PointIndex;
use crate::{Error, Result, UP_AXIS};

pub const M_TO_CM: f64 = 100.0;

/// Default ground tolerance, metres.
pub const DEFAULT_TOLERANCE: f64 = 0.005;

/// Default foot-contact distance, metres.
pub const DEFAULT_FOOT_CONTACT_TOL: f64 = 0.025;

/// Smallest sequence with a third finite difference.
pub const MIN_JITTER_FRAMES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroundMode {
    #[default]
    Plane,
    Points,
}

/// Scene support as seen from above: every scene point keyed by its
/// horizontal position.
#[derive(Debug, Clone)]
pub struct GroundPoints {
    index: PointIndex,
    heights: Vec<f64>,
}

impl GroundPoints {
    pub fn new(points: &[Vector3<f64>]) -> Result<Self> {
        let flat: Vec<Vector3<f64>> = points.iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect();
        let index = PointIndex::build(&flat).map_err(|_| Error::arg("ground point set is empty or non-finite"))?;
        Ok(GroundPoints {
            index,
            heights: points.iter().map(|p| p[UP_AXIS]).collect(),
        })
    }

    /// Height of the horizontally nearest scene point.
    pub fn support_height(&self, x: f64, y: f64) -> f64 {
        let (_, i) = self.index.nearest(&Vector3::new(x, y, 0.0));
        self.heights[i]
    }
}

#[derive(Debug, Clone)]
pub enum Ground {
    Plane(f64),
    Points(GroundPoints),
}

impl Ground {
    pub fn mode(&self) -> GroundMode {
        match self {
            Ground::Plane(_) => GroundMode::Plane,
            Ground::Points(_) => GroundMode::Points,
        }
    }

    /// Signed height of `v` above the support.
    pub fn signed_height(&self, v: &Vector3<f64>) -> f64 {
        match self {
            Ground::Plane(h) => v[UP_AXIS] - h,
            Ground::Points(g) => v[UP_AXIS] - g.support_height(v.x, v.y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plausibility {
    pub coll_pct: f64,
    pub pen_cm: f64,
    pub float_cm: f64,
    pub pen_max_cm: f64,
}

/// Collision ratio, penetration depth, floating height and maximum
/// penetration over `frames` (one entry per body instance and frame).
///
/// A frame penetrates when some vertex lies more than `tol` below the
/// support. Pen averages, over penetrating frames, the mean depth of the
/// penetrating vertices. Float averages, over the other frames, the gap of
/// the lowest vertex beyond `tol`. PenMax is the deepest penetrating vertex.
pub fn plausibility(frames: &Sequence, ground: &Ground, tol: f64) -> Result<Plausibility> {
    if frames.is_empty() || frames.iter().any(|f| f.is_empty()) {
        return Err(Error::arg("plausibility needs at least one frame with vertices"));
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::arg("tolerance must be finite and non-negative"));
    }
    let mut penetrating = 0usize;
    let mut pen_sum = 0.0;
    let mut float_sum = 0.0;
    let mut pen_max = 0.0f64;
    for frame in frames {
        let mut depth_sum = 0.0;
        let mut depth_count = 0usize;
        let mut lowest = f64::INFINITY;
        for v in frame {
            let d = ground.signed_height(v);
            lowest = lowest.min(d);
            if d < -tol {
                depth_sum += -d;
                depth_count += 1;
                pen_max = pen_max.max(-d);
            }
        }
        if depth_count > 0 {
            penetrating += 1;
            pen_sum += depth_sum / depth_count as f64;
        } else {
            float_sum += (lowest - tol).max(0.0);
        }
    }
    let t = frames.len();
    let resting = t - penetrating;
    Ok(Plausibility {
        coll_pct: 100.0 * penetrating as f64 / t as f64,
        pen_cm: if penetrating > 0 { M_TO_CM * pen_sum / penetrating as f64 } else { 0.0 },
        float_cm: if resting > 0 { M_TO_CM * float_sum / resting as f64 } else { 0.0 },
        pen_max_cm: M_TO_CM * pen_max,
    })
}

/// Sum of horizontal foot displacements (metres) and the number of
/// consecutive contact pairs they were taken over.
pub(crate) fn sliding_sums(
    frames: &Sequence,
    foot_ids: &[usize],
    ground: &Ground,
    contact_tol: f64,
) -> Result<(f64, usize)> {
    if foot_ids.is_empty() {
        return Err(Error::arg("foot vertex list is empty"));
    }
    if let Some(f) = frames.iter().find(|f| foot_ids.iter().any(|&i| i >= f.len())) {
        return Err(Error::arg(format!("foot vertex id out of range for {} vertices", f.len())));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for w in frames.windows(2) {
        for &i in foot_ids {
            let (a, b) = (&w[0][i], &w[1][i]);
            if ground.signed_height(a) <= contact_tol && ground.signed_height(b) <= contact_tol {
                sum += (b.xy() - a.xy()).norm();
                pairs += 1;
            }
        }
    }
    Ok((sum, pairs))
}

/// Mean horizontal displacement (mm) of foot vertices between consecutive
/// frames in which both ends are within `contact_tol` of the support.
/// `None` when no such pair exists.
pub fn foot_sliding(
    frames: &Sequence,
    foot_ids: &[usize],
    ground: &Ground,
    contact_tol: f64,
) -> Result<Option<f64>> {
    let (sum, pairs) = sliding_sums(frames, foot_ids, ground, contact_tol)?;
    Ok((pairs > 0).then(|| M_TO_MM * sum / pairs as f64))
}

/// Sum of third-difference magnitudes (metres per frame cubed) and their count.
pub(crate) fn jerk_sums(joints: &Sequence) -> Result<(f64, usize)> {
    let j = joints.first().map_or(0, Vec::len);
    if joints.iter().any(|f| f.len() != j) {
        return Err(Error::arg("joint count changes between frames"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in joints.windows(MIN_JITTER_FRAMES) {
        for k in 0..j {
            sum += (w[3][k] - 3.0 * w[2][k] + 3.0 * w[1][k] - w[0][k]).norm();
            count += 1;
        }
    }
    Ok((sum, count))
}

/// Converts a mean third difference to units of 10 m/s^3.
pub(crate) fn jerk_scale(fps: f64) -> f64 {
    fps.powi(3) / 10.0
}

/// Mean jerk magnitude in units of 10 m/s^3; `None` below four frames.
pub fn jitter(joints: &Sequence, fps: f64) -> Result<Option<f64>> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::arg("fps must be positive"));
    }
    if joints.len() < MIN_JITTER_FRAMES {
        return Ok(None);
    }
    let (sum, count) = jerk_sums(joints)?;
    if count == 0 {
        return Err(Error::arg("jitter needs at least one joint"));
    }
    Ok(Some(sum / count as f64 * jerk_scale(fps)))
}
