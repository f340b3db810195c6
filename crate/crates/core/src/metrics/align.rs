use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative singular-value floor below which the cross-covariance is
/// treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// `x -> s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_all(&self, pts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    /// Sum of squared distances between the mapped `src` and `dst`.
    pub fn residual(&self, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        src.iter().zip(dst).map(|(s, d)| (self.apply(s) - d).norm_squared()).sum()
    }
}

fn mean(pts: &[Vector3<f64>]) -> Vector3<f64> {
    pts.iter().fold(Vector3::zeros(), |a, p| a + p) / pts.len() as f64
}

/// Least-squares similarity (or rigid, without scale) transform taking
/// `src` onto `dst`.
///
/// The cross-covariance must have rank at least two; otherwise the
/// rotation is not unique and a degenerate-configuration error is returned.
/// Identical non-degenerate sets map by the exact identity.
pub fn umeyama_align(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::arg(format!(
            "alignment needs equal point counts, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    if src.is_empty() {
        return Err(Error::Degenerate("alignment of an empty point set".into()));
    }
    if src.iter().chain(dst).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::arg("alignment points must be finite"));
    }
    let m = src.len() as f64;
    let (mu_s, mu_d) = (mean(src), mean(dst));
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (sc, dc) = (s - mu_s, d - mu_d);
        cov += dc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= m;
    var_s /= m;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (largest, middle, smallest) = (sv[order[0]], sv[order[1]], order[2]);
    if largest <= 0.0 || middle <= RANK_TOLERANCE * largest || var_s <= 0.0 {
        return Err(Error::Degenerate(
            "point sets span fewer than two dimensions".into(),
        ));
    }
    if src == dst {
        return Ok(SimilarityTransform::identity());
    }
    let mut sign = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[(smallest, smallest)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let scale = if with_scale {
        (0..3).map(|i| sv[i] * sign[(i, i)]).sum::<f64>() / var_s
    } else {
        1.0
    };
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation: mu_d - scale * (rotation * mu_s),
    })
}
