use crate::{Error, Result};

/// Percentile of per-frame lowest-vertex heights taken as the ground.
pub const GROUND_PERCENTILE: f64 = 10.0;

/// Percentile with linear interpolation between closest ranks
/// (rank = q/100 * (n - 1) on the sorted values).
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::arg(format!("percentile {q} outside [0, 100]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("percentile input must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Robust ground height from the lowest body vertex of every frame.
pub fn estimate_ground_height(lowest_vertex_per_frame: &[f64]) -> Result<f64> {
    percentile(lowest_vertex_per_frame, GROUND_PERCENTILE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_and_constant() {
        assert_eq!(estimate_ground_height(&[0.0; 7]).unwrap(), 0.0);
        assert_eq!(estimate_ground_height(&[1.25; 4]).unwrap(), 1.25);
        assert_eq!(estimate_ground_height(&[-0.3]).unwrap(), -0.3);
    }

    #[test]
    fn ignores_single_outlier() {
        let mut h = vec![0.0; 9];
        h.push(1.0);
        // rank 0.9 falls between the two lowest zeros
        assert_eq!(estimate_ground_height(&h).unwrap(), 0.0);
    }

    #[test]
    fn interpolates_between_ranks() {
        // rank 0.1 * 10 = 1.0 -> second smallest
        let v: Vec<f64> = (0..11).map(f64::from).collect();
        assert!((estimate_ground_height(&v).unwrap() - 1.0).abs() < 1e-15);
        // rank 0.5 -> halfway between 0 and 1
        let v = [3.0, 0.0, 1.0, 2.0, 4.0, 5.0];
        assert!((estimate_ground_height(&v).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shift_equivariant() {
        let v = [0.3, -0.1, 0.05, 0.2, 0.0, 0.7, 0.01];
        let base = estimate_ground_height(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + 2.5).collect();
        assert!((estimate_ground_height(&shifted).unwrap() - base - 2.5).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert!(estimate_ground_height(&[]).is_err());
    }
}
