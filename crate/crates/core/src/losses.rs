//! Contact and body supervision terms.
//!
//! Contact labels are `u8` arrays holding 0 or 1. All contact losses are
//! means over persons and vertices (or parts) so their scale does not
//! depend on the vertex count.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::body::BodyParams;
use crate::nn::{sigmoid, softplus};
use crate::{Error, Result};

/// Probability clamp used inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Depth below which a projected joint is treated as behind the camera.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub smplx: SmplxTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_c: 1.0,
            lambda_p: 0.5,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            smplx: SmplxTerms::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.smplx;
        let weights = [
            self.lambda_c,
            self.lambda_p,
            w.param_weight,
            w.mesh_weight,
            w.joint_weight,
            w.reprojection_weight,
        ];
        if weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::arg("loss weights must be finite and nonnegative"));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::arg("focal_gamma must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::arg("focal_alpha must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Weights and toggles of the body supervision terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmplxTerms {
    pub param: bool,
    pub mesh: bool,
    pub joint: bool,
    pub reprojection: bool,
    pub param_weight: f64,
    pub mesh_weight: f64,
    pub joint_weight: f64,
    /// Pixels are far larger than metres; the default keeps terms comparable.
    pub reprojection_weight: f64,
}

impl Default for SmplxTerms {
    fn default() -> Self {
        SmplxTerms {
            param: true,
            mesh: true,
            joint: true,
            reprojection: true,
            param_weight: 1.0,
            mesh_weight: 1.0,
            joint_weight: 1.0,
            reprojection_weight: 1e-3,
        }
    }
}

impl SmplxTerms {
    /// Only the named term enabled, with unit weight.
    pub fn only(term: &str) -> Self {
        SmplxTerms {
            param: term == "param",
            mesh: term == "mesh",
            joint: term == "joint",
            reprojection: term == "reprojection",
            param_weight: 1.0,
            mesh_weight: 1.0,
            joint_weight: 1.0,
            reprojection_weight: 1.0,
        }
    }
}

fn check_contact_shapes(logits: &Array2<f64>, labels: &Array2<u8>) -> Result<()> {
    if logits.dim() != labels.dim() {
        return Err(Error::arg(format!(
            "logits {:?} and labels {:?} differ in shape",
            logits.dim(),
            labels.dim()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::arg("contact labels must be 0 or 1"));
    }
    Ok(())
}

/// Alpha-balanced focal binary cross-entropy, averaged over all entries.
pub fn focal_bce(logits: &Array2<f64>, labels: &Array2<u8>, gamma: f64, alpha: f64) -> Result<f64> {
    Ok(focal_bce_with_grad(logits, labels, gamma, alpha)?.0)
}

/// Focal loss together with its gradient with respect to the logits.
///
/// With `p = sigmoid(s)`, `log p = -softplus(-s)` and
/// `log(1 - p) = -softplus(s)`, so no probability is ever logged directly.
pub fn focal_bce_with_grad(
    logits: &Array2<f64>,
    labels: &Array2<u8>,
    gamma: f64,
    alpha: f64,
) -> Result<(f64, Array2<f64>)> {
    check_contact_shapes(logits, labels)?;
    let n = logits.len();
    if n == 0 {
        return Ok((0.0, Array2::zeros(logits.raw_dim())));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((s, &y), g) in logits.iter().zip(labels.iter()).zip(grad.iter_mut()) {
        let p = sigmoid(*s);
        if y == 1 {
            let nll = softplus(-s);
            let w = (1.0 - p).powf(gamma);
            total += alpha * w * nll;
            // d/ds: alpha (1-p)^g [ -g p nll - (1 - p) ]
            *g = alpha * w * (-gamma * p * nll - (1.0 - p)) * inv_n;
        } else {
            let nll = softplus(*s);
            let w = p.powf(gamma);
            total += (1.0 - alpha) * w * nll;
            *g = (1.0 - alpha) * w * (gamma * (1.0 - p) * nll + p) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

fn clamped_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn check_part_map(part_map: &[usize], vertices: usize, num_parts: usize) -> Result<()> {
    if part_map.len() != vertices {
        return Err(Error::arg(format!(
            "part map has {} entries for {vertices} vertices",
            part_map.len()
        )));
    }
    if let Some(&bad) = part_map.iter().find(|&&p| p >= num_parts) {
        return Err(Error::arg(format!("part index {bad} not below {num_parts}")));
    }
    Ok(())
}

/// Max-pooled per-part contact loss.
///
/// For every person and non-empty part, the part prediction is the maximum
/// vertex probability and the part label the maximum vertex label. The
/// result is the mean clamped BCE over those pooled pairs.
pub fn part_level_loss(
    probs: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
) -> Result<f64> {
    check_contact_shapes(probs, labels)?;
    check_part_map(part_map, probs.ncols(), num_parts)?;
    let pooled = pool_parts(probs, labels, part_map, num_parts);
    if pooled.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pooled.iter().map(|q| clamped_bce(q.prob, q.label)).sum();
    Ok(sum / pooled.len() as f64)
}

struct PooledPart {
    person: usize,
    vertex: usize,
    prob: f64,
    label: f64,
}

fn pool_parts(
    probs: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
) -> Vec<PooledPart> {
    let mut out = Vec::new();
    for n in 0..probs.nrows() {
        let mut best: Vec<Option<(usize, f64)>> = vec![None; num_parts];
        let mut lab = vec![0u8; num_parts];
        for (v, &part) in part_map.iter().enumerate() {
            let p = probs[[n, v]];
            // first maximal vertex wins ties
            match best[part] {
                Some((_, b)) if b >= p => {}
                _ => best[part] = Some((v, p)),
            }
            lab[part] = lab[part].max(labels[[n, v]]);
        }
        for (part, b) in best.into_iter().enumerate() {
            if let Some((vertex, prob)) = b {
                out.push(PooledPart {
                    person: n,
                    vertex,
                    prob,
                    label: f64::from(lab[part]),
                });
            }
        }
    }
    out
}

/// Arg-max vertex of every non-empty part as `(person, vertex)` pairs,
/// person-major and in part order.
pub fn part_selection(
    logits: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
) -> Result<Vec<(usize, usize)>> {
    let probs = logits.mapv(sigmoid);
    check_contact_shapes(&probs, labels)?;
    check_part_map(part_map, probs.ncols(), num_parts)?;
    Ok(pool_parts(&probs, labels, part_map, num_parts)
        .iter()
        .map(|q| (q.person, q.vertex))
        .collect())
}

/// Part loss evaluated from logits, with its gradient with respect to them.
/// The max pooling routes the gradient to the arg-max vertex of each part.
pub fn part_level_loss_with_grad(
    logits: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
) -> Result<(f64, Array2<f64>)> {
    part_level_loss_with_grad_at(logits, labels, part_map, num_parts, None)
}

/// As [`part_level_loss_with_grad`]; a given selection replaces the
/// arg-max, which makes the loss smooth in the logits.
pub fn part_level_loss_with_grad_at(
    logits: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
    selection: Option<&[(usize, usize)]>,
) -> Result<(f64, Array2<f64>)> {
    let probs = logits.mapv(sigmoid);
    check_contact_shapes(&probs, labels)?;
    check_part_map(part_map, probs.ncols(), num_parts)?;
    let mut pooled = pool_parts(&probs, labels, part_map, num_parts);
    if let Some(sel) = selection {
        if sel.len() != pooled.len() {
            return Err(Error::arg(format!("selection has {} parts, expected {}", sel.len(), pooled.len())));
        }
        for (q, &(n, v)) in pooled.iter_mut().zip(sel) {
            if n != q.person || v >= part_map.len() || part_map[v] != part_map[q.vertex] {
                return Err(Error::arg("selection does not match the part layout"));
            }
            q.vertex = v;
            q.prob = probs[[n, v]];
        }
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    if pooled.is_empty() {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / pooled.len() as f64;
    let mut sum = 0.0;
    for q in &pooled {
        sum += clamped_bce(q.prob, q.label);
        if q.prob > PROB_EPS && q.prob < 1.0 - PROB_EPS {
            let dbce = -q.label / q.prob + (1.0 - q.label) / (1.0 - q.prob);
            grad[[q.person, q.vertex]] += dbce * q.prob * (1.0 - q.prob) * inv;
        }
    }
    Ok((sum * inv, grad))
}

/// Dense focal term plus `lambda_p` times the part term.
pub fn contact_loss(
    logits: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(contact_loss_with_grad(logits, labels, part_map, num_parts, cfg)?.0)
}

pub fn contact_loss_with_grad(
    logits: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
    cfg: &LossConfig,
) -> Result<(f64, Array2<f64>)> {
    contact_loss_with_grad_at(logits, labels, part_map, num_parts, cfg, None)
}

/// As [`contact_loss_with_grad`] with an optional fixed part selection.
pub fn contact_loss_with_grad_at(
    logits: &Array2<f64>,
    labels: &Array2<u8>,
    part_map: &[usize],
    num_parts: usize,
    cfg: &LossConfig,
    selection: Option<&[(usize, usize)]>,
) -> Result<(f64, Array2<f64>)> {
    let (focal, g_focal) = focal_bce_with_grad(logits, labels, cfg.focal_gamma, cfg.focal_alpha)?;
    let (part, g_part) = part_level_loss_with_grad_at(logits, labels, part_map, num_parts, selection)?;
    Ok((focal + cfg.lambda_p * part, g_focal + g_part * cfg.lambda_p))
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 500.0,
        }
    }
}

impl Intrinsics {
    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= MIN_PROJECTION_DEPTH {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }
}

/// Body parameters with the camera-frame geometry they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyEstimate {
    pub params: BodyParams,
    pub vertices: Vec<Vector3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SmplxLoss {
    pub total: f64,
    pub param: f64,
    pub mesh: f64,
    pub joint: f64,
    pub reprojection: f64,
    /// Joints dropped from the reprojection term for lying behind the camera.
    pub skipped_joints: usize,
}

fn param_vector(p: &BodyParams) -> Vec<f64> {
    p.pose
        .iter()
        .flat_map(|r| r.iter().copied())
        .chain(p.shape.iter().copied())
        .chain(p.root_trans_cam.iter().copied())
        .collect()
}

fn mean_sq_dist(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64
}

/// Body supervision: parameter L2, vertex L2, joint L2 and joint
/// reprojection L1, each a mean over its elements.
pub fn smplx_loss(
    pred: &BodyEstimate,
    gt: &BodyEstimate,
    intrinsics: &Intrinsics,
    terms: &SmplxTerms,
) -> Result<SmplxLoss> {
    let pp = param_vector(&pred.params);
    let gp = param_vector(&gt.params);
    if pp.len() != gp.len()
        || pred.vertices.len() != gt.vertices.len()
        || pred.joints.len() != gt.joints.len()
    {
        return Err(Error::arg("prediction and target come from different templates"));
    }
    let mut out = SmplxLoss::default();
    if terms.param && !pp.is_empty() {
        out.param = pp.iter().zip(&gp).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pp.len() as f64;
    }
    if terms.mesh {
        out.mesh = mean_sq_dist(&pred.vertices, &gt.vertices);
    }
    if terms.joint {
        out.joint = mean_sq_dist(&pred.joints, &gt.joints);
    }
    if terms.reprojection {
        let mut sum = 0.0;
        let mut used = 0usize;
        for (a, b) in pred.joints.iter().zip(&gt.joints) {
            match (intrinsics.project(a), intrinsics.project(b)) {
                (Some(pa), Some(pb)) => {
                    sum += (pa[0] - pb[0]).abs() + (pa[1] - pb[1]).abs();
                    used += 1;
                }
                _ => out.skipped_joints += 1,
            }
        }
        if used > 0 {
            out.reprojection = sum / used as f64;
        }
    }
    out.total = terms.param_weight * out.param
        + terms.mesh_weight * out.mesh
        + terms.joint_weight * out.joint
        + terms.reprojection_weight * out.reprojection;
    Ok(out)
}

/// Predictions of one frame: per-person bodies and contact logits (`N x V`).
#[derive(Debug, Clone)]
pub struct FramePrediction {
    pub bodies: Vec<BodyEstimate>,
    pub contact_logits: Array2<f64>,
}

/// Targets of one frame plus the part segmentation for the part loss.
#[derive(Debug, Clone)]
pub struct FrameTarget {
    pub bodies: Vec<BodyEstimate>,
    pub contact_labels: Array2<u8>,
    pub part_map: Vec<usize>,
    pub num_parts: usize,
    pub intrinsics: Intrinsics,
}

/// Reconstruction loss slot for pointmap, camera and appearance terms.
pub trait FourDLoss {
    fn loss(&self, pred: &FramePrediction, gt: &FrameTarget) -> f64;
}

/// Default slot: contributes nothing.
pub struct NoFourDLoss;

impl FourDLoss for NoFourDLoss {
    fn loss(&self, _: &FramePrediction, _: &FrameTarget) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    /// Summands of `total`: `l4d`, `smplx` and `contact` (already weighted).
    pub breakdown: BTreeMap<String, f64>,
    pub skipped_joints: usize,
}

pub fn total_loss(pred: &FramePrediction, gt: &FrameTarget, cfg: &LossConfig) -> Result<TotalLoss> {
    total_loss_with(pred, gt, cfg, &NoFourDLoss)
}

pub fn total_loss_with(
    pred: &FramePrediction,
    gt: &FrameTarget,
    cfg: &LossConfig,
    four_d: &dyn FourDLoss,
) -> Result<TotalLoss> {
    cfg.validate()?;
    if pred.bodies.len() != gt.bodies.len() {
        return Err(Error::arg("prediction and target person counts differ"));
    }
    let mut smplx = 0.0;
    let mut skipped = 0;
    for (p, g) in pred.bodies.iter().zip(&gt.bodies) {
        let l = smplx_loss(p, g, &gt.intrinsics, &cfg.smplx)?;
        smplx += l.total;
        skipped += l.skipped_joints;
    }
    if !pred.bodies.is_empty() {
        smplx /= pred.bodies.len() as f64;
    }
    let contact = if cfg.lambda_c == 0.0 {
        0.0
    } else {
        cfg.lambda_c
            * contact_loss(&pred.contact_logits, &gt.contact_labels, &gt.part_map, gt.num_parts, cfg)?
    };
    let l4d = four_d.loss(pred, gt);
    let breakdown = BTreeMap::from([
        ("l4d".to_string(), l4d),
        ("smplx".to_string(), smplx),
        ("contact".to_string(), contact),
    ]);
    let total = breakdown.values().sum();
    Ok(TotalLoss {
        total,
        breakdown,
        skipped_joints: skipped,
    })
}
