use nalgebra::Vector3;

use crate::{Error, Result};

/// Balanced KD-tree over a fixed point set.
///
/// Nodes are stored implicitly: the subtree over `perm[lo..hi]` keeps its
/// splitting point at `(lo + hi) / 2`. Queries return the exact nearest
/// point; equal distances resolve to the lowest point index.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vector3<f64>>,
    perm: Vec<usize>,
    axes: Vec<u8>,
    boxes: Vec<Bounds>,
}

impl PointIndex {
    pub fn build(points: &[Vector3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::arg("cannot index an empty point set"));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::arg("indexed points must be finite"));
        }
        let mut perm: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        let mut boxes = vec![(Vector3::zeros(), Vector3::zeros()); points.len()];
        split(points, &mut perm, &mut axes, &mut boxes, 0);
        Ok(PointIndex {
            points: points.to_vec(),
            perm,
            axes,
            boxes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Distance to, and index of, the nearest indexed point.
    pub fn nearest(&self, q: &Vector3<f64>) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(q, 0, self.perm.len(), &mut best);
        (best.0.sqrt(), best.1)
    }

    /// Subtrees whose bounding box lies strictly farther than the best
    /// distance are skipped; equal distances are still visited so ties
    /// reach the lowest index.
    fn search(&self, q: &Vector3<f64>, lo: usize, hi: usize, best: &mut (f64, usize)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let (bmin, bmax) = &self.boxes[mid];
        let gap = (bmin - q).sup(&(q - bmax)).sup(&Vector3::zeros());
        if gap.norm_squared() > best.0 {
            return;
        }
        let idx = self.perm[mid];
        let p = &self.points[idx];
        let d2 = (q - p).norm_squared();
        if d2 < best.0 || (d2 == best.0 && idx < best.1) {
            *best = (d2, idx);
        }
        if hi - lo == 1 {
            return;
        }
        let axis = self.axes[mid] as usize;
        if q[axis] < p[axis] {
            self.search(q, lo, mid, best);
            self.search(q, mid + 1, hi, best);
        } else {
            self.search(q, mid + 1, hi, best);
            self.search(q, lo, mid, best);
        }
    }
}

type Bounds = (Vector3<f64>, Vector3<f64>);

fn split(points: &[Vector3<f64>], perm: &mut [usize], axes: &mut [u8], boxes: &mut [Bounds], offset: usize) {
    let n = perm.len();
    if n == 0 {
        return;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in perm.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let mid = n / 2;
    boxes[offset + mid] = (lo, hi);
    if n == 1 {
        return;
    }
    let axis = (hi - lo).imax();
    perm.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    axes[offset + mid] = axis as u8;
    let (left, rest) = perm.split_at_mut(mid);
    split(points, left, axes, boxes, offset);
    split(points, &mut rest[1..], axes, boxes, offset + mid + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for (i, p) in points.iter().enumerate() {
            let d2 = (q - p).norm_squared();
            if d2 < best.0 {
                best = (d2, i);
            }
        }
        (best.0.sqrt(), best.1)
    }

    #[test]
    fn single_point() {
        let idx = PointIndex::build(&[Vector3::new(1.0, 2.0, 3.0)]).unwrap();
        let (d, i) = idx.nearest(&Vector3::new(1.0, 2.0, 4.0));
        assert_eq!(i, 0);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(PointIndex::build(&[]).is_err());
    }

    #[test]
    fn exact_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let pts: Vec<_> = (0..100)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let idx = PointIndex::build(&pts).unwrap();
            for _ in 0..100 {
                let q = Vector3::new(rng.random(), rng.random(), rng.random()) * 1.5;
                assert_eq!(idx.nearest(&q), brute(&pts, &q));
            }
        }
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let pts = vec![
            Vector3::new(9.0, 9.0, 9.0),
            Vector3::new(5.0, 5.0, 5.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(7.0, 7.0, 7.0),
            Vector3::new(8.0, 8.0, 8.0),
            Vector3::new(-1.0, 0.0, 0.0),
        ];
        let idx = PointIndex::build(&pts).unwrap();
        assert_eq!(idx.nearest(&Vector3::zeros()), (1.0, 2));
    }

    #[test]
    fn duplicates_have_zero_distance() {
        let p = Vector3::new(0.5, 0.5, 0.5);
        let pts = vec![p, Vector3::new(0.0, 1.0, 0.0), p, p];
        let idx = PointIndex::build(&pts).unwrap();
        assert_eq!(idx.nearest(&p), (0.0, 0));
    }

    #[test]
    fn query_far_above_a_plane() {
        let pts: Vec<_> = (0..40)
            .flat_map(|i| (0..40).map(move |j| Vector3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0)))
            .collect();
        let idx = PointIndex::build(&pts).unwrap();
        for k in 0..50 {
            let q = Vector3::new(0.007 * k as f64, 0.39 - 0.005 * k as f64, 1.7);
            assert_eq!(idx.nearest(&q), brute(&pts, &q));
        }
    }

    #[test]
    fn grid_with_many_ties() {
        let pts: Vec<_> = (0..5)
            .flat_map(|i| (0..5).map(move |j| Vector3::new(i as f64, j as f64, 0.0)))
            .collect();
        let idx = PointIndex::build(&pts).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let q = Vector3::new(i as f64 * 0.5, j as f64 * 0.5, 0.0);
                assert_eq!(idx.nearest(&q), brute(&pts, &q));
            }
        }
    }
}
