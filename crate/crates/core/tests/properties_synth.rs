//! Synthetic ground truth: oracle monotonicity, exact zero-noise scores and
//! canonical report output.

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contact4d::metrics::{canonical_json, evaluate_bundle, format_float, GroundMode, ProtocolConfig, CONTACT_KEYS, MOTION_KEYS};
use contact4d::synth::{contact_oracle_points, gen_sequence, random_small_bundle, CameraPath, Motion, NoiseConfig, SynthConfig, TemplateConfig};

fn vec3(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wider_contact_distance_only_adds_contacts(seed: u64, nv in 1usize..40, ns in 1usize..40, tau in 0.01f64..0.5, extra in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let verts: Vec<Vector3<f64>> = (0..nv).map(|_| vec3(&mut rng, 1.0)).collect();
        let scene: Vec<Vector3<f64>> = (0..ns).map(|_| vec3(&mut rng, 1.0)).collect();
        let narrow = contact_oracle_points(&verts, &scene, tau).unwrap();
        let wide = contact_oracle_points(&verts, &scene, tau + extra).unwrap();
        prop_assert!(narrow.iter().zip(&wide).all(|(a, b)| a <= b));
        // brute check of the narrow labels
        for (v, l) in verts.iter().zip(&narrow) {
            let hit = scene.iter().any(|s| (v - s).norm() <= tau);
            prop_assert_eq!(*l, u8::from(hit));
        }
    }

    #[test]
    fn noiseless_predictions_score_perfectly(seed: u64, motion in 0usize..4, persons in 1usize..3, frames in 2usize..12, points: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let joints = rng.random_range(3..6);
        let v_per_bone = rng.random_range(1..4);
        let cfg = SynthConfig {
            frames,
            persons,
            motion: [Motion::Stand, Motion::Walk, Motion::Hop, Motion::Drift][motion],
            noise: NoiseConfig::default(),
            drift_m_per_frame: 0.0,
            camera: CameraPath::Orbit { deg_per_frame: rng.random_range(-5.0..5.0) },
            pointmap: [6, 8],
            template: TemplateConfig { v_per_bone, joints, vertices: joints * v_per_bone + rng.random_range(0..5), seed: rng.random() },
            seed: rng.random(),
            ..SynthConfig::default()
        };
        let bundle = gen_sequence(&cfg, &cfg.template.build().unwrap()).unwrap();
        let protocol = ProtocolConfig {
            segment_length: rng.random_range(2..6),
            ground_mode: if points { GroundMode::Points } else { GroundMode::Plane },
            ..ProtocolConfig::default()
        };
        let r = evaluate_bundle(&bundle, &protocol).unwrap();
        for k in MOTION_KEYS.iter().copied().chain(["pve_mm", "geo_contact_error_cm"]) {
            if let Some(v) = r.get(k) {
                prop_assert_eq!(v, 0.0, "{}", k);
            }
        }
        for k in CONTACT_KEYS.iter().filter(|k| k.starts_with("contact_")) {
            prop_assert_eq!(r.get(k), Some(1.0), "{}", k);
        }
    }

    #[test]
    fn reports_are_canonical(seed in 0u64..1000) {
        let (bundle, protocol) = random_small_bundle(seed).unwrap();
        let a = evaluate_bundle(&bundle, &protocol).unwrap().to_canonical_json().unwrap();
        let b = evaluate_bundle(&bundle, &protocol).unwrap().to_canonical_json().unwrap();
        prop_assert_eq!(&a, &b);
        // re-canonicalising parsed output is a fixed point
        let parsed: serde_json::Value = serde_json::from_str(&a).unwrap();
        prop_assert_eq!(canonical_json(&parsed), a);
    }

    #[test]
    fn float_format_round_trips_to_nine_digits(v in -1e12f64..1e12) {
        let back: f64 = format_float(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-9 * v.abs());
    }
}
