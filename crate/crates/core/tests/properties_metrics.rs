//! Metric invariances under alignment, reordering and ground placement.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contact4d::metrics::{
    contact_prf, geo_contact_error, jitter, pa_mpjpe, plausibility, w_mpjpe, wa_mpjpe, GeoTemplate, Ground,
    DEFAULT_TOLERANCE,
};

fn vec3(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = Quaternion::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

fn sequence(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> Vec<Vec<Vector3<f64>>> {
    (0..frames).map(|_| (0..joints).map(|_| vec3(rng, 1.0)).collect()).collect()
}

fn map(seq: &[Vec<Vector3<f64>>], f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Vec<Vec<Vector3<f64>>> {
    seq.iter().map(|fr| fr.iter().map(&f).collect()).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_errors_ignore_a_moved_prediction(seed: u64, frames in 2usize..8, joints in 3usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = sequence(&mut rng, frames, joints);
        let pred = sequence(&mut rng, frames, joints);
        let (r, t, s) = (rotation(&mut rng), vec3(&mut rng, 5.0), rng.random_range(0.3..3.0));
        let rigid = map(&pred, |p| r * p + t);
        let similar = map(&pred, |p| s * (r * p) + t);
        prop_assert!(close(w_mpjpe(&pred, &gt).unwrap(), w_mpjpe(&rigid, &gt).unwrap()));
        prop_assert!(close(wa_mpjpe(&pred, &gt).unwrap(), wa_mpjpe(&similar, &gt).unwrap()));
        prop_assert!(close(pa_mpjpe(&pred, &gt).unwrap(), pa_mpjpe(&similar, &gt).unwrap()));
        // a different similarity per frame is still absorbed per frame
        let per_frame: Vec<Vec<Vector3<f64>>> = pred.iter().map(|fr| {
            let (r, t, s) = (rotation(&mut rng), vec3(&mut rng, 5.0), rng.random_range(0.3..3.0));
            fr.iter().map(|p| s * (r * p) + t).collect()
        }).collect();
        prop_assert!(close(pa_mpjpe(&pred, &gt).unwrap(), pa_mpjpe(&per_frame, &gt).unwrap()));
    }

    #[test]
    fn jitter_ignores_added_quadratic_motion(seed: u64, frames in 4usize..20, joints in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fps = 30.0;
        let seq = sequence(&mut rng, frames, joints);
        let (a, b, c) = (vec3(&mut rng, 1.0), vec3(&mut rng, 0.1), vec3(&mut rng, 0.01));
        let moved: Vec<Vec<Vector3<f64>>> = seq.iter().enumerate().map(|(t, fr)| {
            let t = t as f64;
            fr.iter().map(|p| p + a + b * t + c * t * t).collect()
        }).collect();
        let (x, y) = (jitter(&seq, fps).unwrap().unwrap(), jitter(&moved, fps).unwrap().unwrap());
        prop_assert!((x - y).abs() <= 1e-12 * fps.powi(3));
        let still = map(&moved, |_| a);
        prop_assert_eq!(jitter(&still, fps).unwrap(), Some(0.0));
    }

    #[test]
    fn plausibility_is_clean_exactly_within_the_tolerance_band(seed: u64, frames in 1usize..6, n in 1usize..12, h in -2.0f64..2.0, low in -0.02f64..0.02) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tol = DEFAULT_TOLERANCE;
        // lowest vertex at h + low in every frame, the rest above it
        let seq: Vec<Vec<Vector3<f64>>> = (0..frames).map(|_| {
            let mut fr = vec![Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), h + low)];
            fr.extend((0..n).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), h + low + rng.random_range(0.0..1.5))));
            fr
        }).collect();
        let p = plausibility(&seq, &Ground::Plane(h), tol).unwrap();
        let d = (h + low) - h;
        prop_assert_eq!(p.coll_pct == 0.0, d >= -tol);
        prop_assert_eq!(p.float_cm == 0.0, d <= tol);
        let clean = p.coll_pct == 0.0 && p.pen_cm == 0.0 && p.float_cm == 0.0 && p.pen_max_cm == 0.0;
        prop_assert_eq!(clean, (-tol..=tol).contains(&d));
    }

    #[test]
    fn contact_scores_ignore_vertex_order(seed: u64, persons in 1usize..4, v in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = Array2::from_shape_simple_fn((persons, v), || u8::from(rng.random_bool(0.4)));
        let gt = Array2::from_shape_simple_fn((persons, v), || u8::from(rng.random_bool(0.4)));
        let verts: Vec<Vector3<f64>> = (0..v).map(|_| vec3(&mut rng, 1.0)).collect();
        let mut perm: Vec<usize> = (0..v).collect();
        perm.shuffle(&mut rng);
        let permute = |a: &Array2<u8>| Array2::from_shape_fn((persons, v), |(r, c)| a[[r, perm[c]]]);
        let (pred2, gt2) = (permute(&pred), permute(&gt));
        prop_assert_eq!(contact_prf(&pred, &gt).unwrap(), contact_prf(&pred2, &gt2).unwrap());

        let verts2: Vec<Vector3<f64>> = perm.iter().map(|&i| verts[i]).collect();
        let (tpl, tpl2) = (GeoTemplate::new(&verts).unwrap(), GeoTemplate::new(&verts2).unwrap());
        for one_sided in [false, true] {
            for r in 0..persons {
                let a = geo_contact_error(&pred.row(r).to_vec(), &gt.row(r).to_vec(), &tpl, one_sided).unwrap();
                let b = geo_contact_error(&pred2.row(r).to_vec(), &gt2.row(r).to_vec(), &tpl2, one_sided).unwrap();
                prop_assert!(close(a, b), "{} vs {}", a, b);
            }
        }
    }
}
