//! Global and local motion accuracy. Inputs are in metres, outputs in
//! millimetres (or percent for the trajectory error).

use std::ops::Range;

use nalgebra::Vector3;

use super::align::umeyama_align;
use crate::{Error, Result};

/// Frames of points: `seq[t][j]`.
pub type Sequence = [Vec<Vector3<f64>>];

pub const M_TO_MM: f64 = 1000.0;

/// Smallest remainder segment that is kept.
pub const MIN_SEGMENT: usize = 2;

pub(crate) fn check_pair(pred: &Sequence, gt: &Sequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::arg(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("empty sequence"));
    }
    for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
        if p.len() != g.len() || p.is_empty() {
            return Err(Error::arg(format!("frame {t}: point counts differ or are zero")));
        }
    }
    Ok(())
}

/// Consecutive non-overlapping frame ranges of `seg_len`; a trailing
/// remainder is kept when it has at least two frames.
pub fn split_segments(frames: usize, seg_len: usize) -> Result<Vec<Range<usize>>> {
    if seg_len < MIN_SEGMENT {
        return Err(Error::arg("segment length must be at least 2"));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < frames {
        let end = (start + seg_len).min(frames);
        if end - start >= MIN_SEGMENT {
            out.push(start..end);
        }
        start = end;
    }
    Ok(out)
}

/// Segment pairs of a prediction and ground truth of equal length.
pub fn split_segment_pairs<'a>(
    pred: &'a Sequence,
    gt: &'a Sequence,
    seg_len: usize,
) -> Result<Vec<(&'a Sequence, &'a Sequence)>> {
    if pred.len() != gt.len() {
        return Err(Error::arg("prediction and ground truth differ in length"));
    }
    Ok(split_segments(pred.len(), seg_len)?
        .into_iter()
        .map(|r| (&pred[r.clone()], &gt[r]))
        .collect())
}

fn mean_error(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

fn flatten(seq: &Sequence) -> Vec<Vector3<f64>> {
    seq.iter().flatten().copied().collect()
}

/// Per-frame similarity-aligned mean joint error, averaged over frames.
pub fn pa_mpjpe(pred: &Sequence, gt: &Sequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let t = umeyama_align(p, g, true)?;
        total += mean_error(&t.apply_all(p), g);
    }
    Ok(M_TO_MM * total / pred.len() as f64)
}

/// One similarity alignment over all joints of the segment.
pub fn wa_mpjpe(pred: &Sequence, gt: &Sequence) -> Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = (flatten(pred), flatten(gt));
    let t = umeyama_align(&p, &g, true)?;
    Ok(M_TO_MM * mean_error(&t.apply_all(&p), &g))
}

/// Rigid alignment fitted on the first two frames, applied to the segment.
pub fn w_mpjpe(pred: &Sequence, gt: &Sequence) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.len() < 2 {
        return Err(Error::arg("W-MPJPE needs at least two frames"));
    }
    let t = umeyama_align(&flatten(&pred[..2]), &flatten(&gt[..2]), false)?;
    let (p, g) = (flatten(pred), flatten(gt));
    Ok(M_TO_MM * mean_error(&t.apply_all(&p), &g))
}

/// Total length of a polyline.
pub fn path_length(points: &[Vector3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Root trajectory error in percent of the ground-truth path length,
/// after rigid alignment of the whole trajectory.
pub fn rte(root_pred: &[Vector3<f64>], root_gt: &[Vector3<f64>]) -> Result<f64> {
    if root_pred.len() != root_gt.len() || root_pred.is_empty() {
        return Err(Error::arg("root trajectories must be nonempty and equally long"));
    }
    let length = path_length(root_gt);
    if length <= 0.0 {
        return Err(Error::UndefinedMetric(
            "ground-truth root path has zero length".into(),
        ));
    }
    let t = umeyama_align(root_pred, root_gt, false)?;
    Ok(100.0 * mean_error(&t.apply_all(root_pred), root_gt) / length)
}

/// Mean per-joint and per-vertex errors in millimetres, after subtracting
/// joint 0 from every point of the frame when `root_centered`.
pub fn mpjpe_pve(
    joints_pred: &Sequence,
    joints_gt: &Sequence,
    vertices: Option<(&Sequence, &Sequence)>,
    root_centered: bool,
) -> Result<(f64, Option<f64>)> {
    check_pair(joints_pred, joints_gt)?;
    if let Some((vp, vg)) = vertices {
        check_pair(vp, vg)?;
        if vp.len() != joints_pred.len() {
            return Err(Error::arg("vertex and joint sequences differ in length"));
        }
    }
    let frames = joints_pred.len() as f64;
    let root = |seq: &Sequence, t: usize| {
        if root_centered {
            seq[t][0]
        } else {
            Vector3::zeros()
        }
    };
    let centred_error = |a: &[Vector3<f64>], b: &[Vector3<f64>], ra: Vector3<f64>, rb: Vector3<f64>| {
        a.iter().zip(b).map(|(p, q)| ((p - ra) - (q - rb)).norm()).sum::<f64>() / a.len() as f64
    };
    let mut mpjpe = 0.0;
    let mut pve = 0.0;
    for t in 0..joints_pred.len() {
        let (rp, rg) = (root(joints_pred, t), root(joints_gt, t));
        mpjpe += centred_error(&joints_pred[t], &joints_gt[t], rp, rg);
        if let Some((vp, vg)) = vertices {
            pve += centred_error(&vp[t], &vg[t], rp, rg);
        }
    }
    Ok((
        M_TO_MM * mpjpe / frames,
        vertices.map(|_| M_TO_MM * pve / frames),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(t: usize, j: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Vector3<f64>>> {
        (0..t)
            .map(|_| {
                (0..j)
                    .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)))
                    .collect()
            })
            .collect()
    }

    fn rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
        let axis = Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0))
    }

    #[test]
    fn segment_rules() {
        assert_eq!(split_segments(250, 100).unwrap(), vec![0..100, 100..200, 200..250]);
        assert_eq!(split_segments(100, 100).unwrap(), vec![0..100]);
        assert_eq!(split_segments(101, 100).unwrap(), vec![0..100]);
        assert_eq!(split_segments(1, 100).unwrap(), Vec::<Range<usize>>::new());
        assert!(split_segments(10, 1).is_err());
    }

    #[test]
    fn zero_for_identical_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_seq(5, 4, &mut rng);
        assert!(pa_mpjpe(&s, &s).unwrap() < 1e-9);
        assert!(wa_mpjpe(&s, &s).unwrap() < 1e-9);
        assert!(w_mpjpe(&s, &s).unwrap() < 1e-9);
        assert_eq!(mpjpe_pve(&s, &s, Some((&s, &s)), true).unwrap(), (0.0, Some(0.0)));
    }

    #[test]
    fn pa_invariant_to_similarity_of_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_seq(4, 5, &mut rng);
        let pred: Vec<Vec<Vector3<f64>>> = gt
            .iter()
            .map(|f| f.iter().map(|p| p + Vector3::new(rng.random_range(-0.05..0.05), 0.01, 0.0)).collect())
            .collect();
        let base = pa_mpjpe(&pred, &gt).unwrap();
        let r = rotation(&mut rng);
        let moved: Vec<Vec<Vector3<f64>>> = pred
            .iter()
            .map(|f| f.iter().map(|p| 3.0 * (r * p) + Vector3::new(1.0, 2.0, 3.0)).collect())
            .collect();
        assert!((pa_mpjpe(&moved, &gt).unwrap() - base).abs() < 1e-6);
    }

    #[test]
    fn pa_two_joint_hand_case() {
        // With two points the similarity maps pred exactly onto gt.
        let gt = vec![vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)]];
        // pred: gt scaled by 2 and one joint pushed out of plane by 0.3
        let mut pred = vec![gt[0].iter().map(|p| p * 2.0).collect::<Vec<_>>()];
        pred[0][2].z = 0.3;
        // planar gt: the optimal alignment projects the out-of-plane offset
        // away, and the in-plane fit is a shrink of the triangle; check the
        // error equals the brute residual of the returned transform
        let t = umeyama_align(&pred[0], &gt[0], true).unwrap();
        let mapped = t.apply_all(&pred[0]);
        let expected = 1000.0 * (0..3).map(|j| (mapped[j] - gt[0][j]).norm()).sum::<f64>() / 3.0;
        assert!((pa_mpjpe(&pred, &gt).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn wa_invariant_to_segment_similarity_but_not_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_seq(6, 4, &mut rng);
        let r = rotation(&mut rng);
        let moved: Vec<Vec<Vector3<f64>>> =
            gt.iter().map(|f| f.iter().map(|p| 0.5 * (r * p) + Vector3::new(3.0, 0.0, 1.0)).collect()).collect();
        assert!(wa_mpjpe(&moved, &gt).unwrap() < 1e-6);

        let independent: Vec<Vec<Vector3<f64>>> = gt
            .iter()
            .map(|f| {
                let r = rotation(&mut rng);
                f.iter().map(|p| r * p).collect()
            })
            .collect();
        assert!(wa_mpjpe(&independent, &gt).unwrap() > 1.0);
        // per-frame alignment has more freedom than a segment alignment
        assert!(pa_mpjpe(&independent, &gt).unwrap() <= wa_mpjpe(&independent, &gt).unwrap() + 1e-9);
    }

    #[test]
    fn w_mpjpe_grows_with_tail_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gt = random_seq(6, 4, &mut rng);
        let r = rotation(&mut rng);
        // a rigid motion the two-frame fit removes, plus drift from frame 2 on
        let pred: Vec<Vec<Vector3<f64>>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let drift = Vector3::new(0.01 * t.saturating_sub(1) as f64, 0.0, 0.0);
                f.iter().map(|p| r * (p + drift) + Vector3::new(0.0, 1.0, 0.0)).collect()
            })
            .collect();
        // the fit frames have zero drift, so the tail error is the drift itself
        let expected = 1000.0 * (2..6).map(|t| 0.01 * (t - 1) as f64).sum::<f64>() / 6.0;
        assert!((w_mpjpe(&pred, &gt).unwrap() - expected).abs() < 1e-6);
        // two-frame segment: same as a rigid fit over both frames
        let two = &pred[..2];
        assert!(w_mpjpe(two, &gt[..2]).unwrap() < 1e-6);
    }

    /// L-shaped walk, two legs of equal length.
    fn l_walk(total: f64, per_leg: usize) -> Vec<Vector3<f64>> {
        let h = total / (2 * per_leg - 1) as f64;
        let leg = per_leg as f64 * h;
        let mut pts: Vec<Vector3<f64>> = (0..per_leg).map(|i| Vector3::new(i as f64 * h, 0.0, 0.9)).collect();
        pts.extend((0..per_leg).map(|i| Vector3::new(leg - h + h, (i as f64 + 0.0) * h, 0.9)));
        pts
    }

    #[test]
    fn rte_zero_and_guards() {
        let path = l_walk(10.0, 52);
        assert!(rte(&path, &path).unwrap() < 1e-12);
        let still = vec![Vector3::new(1.0, 1.0, 0.9); 10];
        assert!(matches!(rte(&still, &still), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn rte_constant_lateral_error() {
        // 0.1 m lateral error whose sign pattern (+,-,-,+) along each leg
        // leaves no cross-covariance, so the optimal alignment is the
        // identity and the error stays 0.1 m everywhere.
        let per_leg = 52;
        let gt = {
            let h = 10.0 / (2 * per_leg - 1) as f64;
            let mut pts: Vec<Vector3<f64>> = (0..per_leg).map(|i| Vector3::new(i as f64 * h, 0.0, 0.9)).collect();
            let corner = (per_leg - 1) as f64 * h;
            pts.extend((1..=per_leg).map(|i| Vector3::new(corner, i as f64 * h, 0.9)));
            pts
        };
        assert!((path_length(&gt) - 10.0).abs() < 1e-12);
        let sign = |i: usize| if matches!(i % 4, 0 | 3) { 1.0 } else { -1.0 };
        let pred: Vec<Vector3<f64>> = gt
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let lateral = if i < per_leg { Vector3::y() } else { Vector3::x() };
                p + 0.1 * sign(i % per_leg) * lateral
            })
            .collect();
        assert!((rte(&pred, &gt).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn root_centering_removes_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_seq(3, 4, &mut rng);
        let shifted: Vec<Vec<Vector3<f64>>> =
            gt.iter().map(|f| f.iter().map(|p| p + Vector3::new(0.05, 0.0, 0.0)).collect()).collect();
        let (j, v) = mpjpe_pve(&shifted, &gt, Some((&shifted, &gt)), true).unwrap();
        assert!(j < 1e-9 && v.unwrap() < 1e-9);
        let (j, v) = mpjpe_pve(&shifted, &gt, None, false).unwrap();
        assert!((j - 50.0).abs() < 1e-9);
        assert!(v.is_none());
    }

    #[test]
    fn mpjpe_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_seq(4, 3, &mut rng);
        let b = random_seq(4, 3, &mut rng);
        let mut acc = 0.0;
        for t in 0..4 {
            let mut f = 0.0;
            for j in 0..3 {
                let d = (a[t][j] - a[t][0]) - (b[t][j] - b[t][0]);
                f += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            }
            acc += f / 3.0;
        }
        let (j, _) = mpjpe_pve(&a, &b, None, true).unwrap();
        assert!((j - 1000.0 * acc / 4.0).abs() < 1e-9);
    }

    #[test]
    fn mismatched_lengths_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_seq(4, 3, &mut rng);
        assert!(pa_mpjpe(&a, &a[..3]).is_err());
        assert!(split_segment_pairs(&a, &a[..2], 100).is_err());
        assert_eq!(split_segment_pairs(&a, &a, 2).unwrap().len(), 2);
    }
}
