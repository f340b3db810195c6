//! Synthetic sequences with exact ground truth, and brute-force oracles.

mod config;
mod generate;
mod oracle;

pub use config::{CameraPath, Motion, NoiseConfig, SynthConfig, TemplateConfig, Terrain};
pub use generate::{contact_oracle, contact_oracle_points, gen_bundles, gen_sequence, terrain_patch};
pub use oracle::{
    brute_oracles, brute_oracles_with, horn_align, random_search, OracleReport, SearchOutcome, BEAT_MARGIN,
    MAX_FRAMES, MAX_JOINTS, MAX_VERTICES, RANDOM_TRIALS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::SequenceBundle;
use crate::metrics::{GroundMode, ProtocolConfig};
use crate::Result;

/// Random bundle within the brute oracle limits, with soft contact
/// probabilities, and a random evaluation protocol. Same seed, same pair.
pub fn random_small_bundle(seed: u64) -> Result<(SequenceBundle, ProtocolConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joints = rng.random_range(3..=MAX_JOINTS);
    let v_per_bone = rng.random_range(1..=MAX_VERTICES / joints);
    let motion = [Motion::Stand, Motion::Walk, Motion::Hop, Motion::Drift][rng.random_range(0..4)];
    let terrain = match rng.random_range(0..3) {
        0 => Terrain::Flat { height: rng.random_range(-0.5..0.5) },
        1 => Terrain::Stepped {
            height: 0.0,
            step_height: rng.random_range(0.02..0.2),
            step_length: rng.random_range(0.3..1.0),
        },
        _ => Terrain::Ramp { height: 0.0, slope: rng.random_range(-0.2..0.2) },
    };
    let cfg = SynthConfig {
        frames: rng.random_range(1..=MAX_FRAMES),
        persons: rng.random_range(1..=2),
        terrain,
        motion,
        noise: NoiseConfig {
            pose_rad: rng.random_range(0.0..0.2),
            translation_m: rng.random_range(0.0..0.05),
            contact_flip: 0.0,
        },
        drift_m_per_frame: rng.random_range(0.0..0.05),
        camera: CameraPath::Orbit { deg_per_frame: rng.random_range(-5.0..5.0) },
        pointmap: [6, 8],
        template: TemplateConfig {
            v_per_bone,
            joints,
            vertices: joints * v_per_bone + rng.random_range(0..=MAX_VERTICES - joints * v_per_bone),
            seed: rng.random(),
        },
        seed: rng.random(),
        ..SynthConfig::default()
    };
    let template = cfg.template.build()?;
    let mut bundle = gen_sequence(&cfg, &template)?;
    if let Some(probs) = bundle.contact_pred.as_mut() {
        for p in probs.iter_mut() {
            p.mapv_inplace(|_| rng.random::<f64>());
        }
    }
    let protocol = ProtocolConfig {
        segment_length: rng.random_range(2..=5),
        ground_mode: if rng.random_bool(0.5) { GroundMode::Plane } else { GroundMode::Points },
        geo_one_sided: rng.random_bool(0.5),
        root_centered: rng.random_bool(0.5),
        contact_threshold: rng.random_range(0.2..0.8),
        ..ProtocolConfig::default()
    };
    Ok((bundle, protocol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate_bundle;

    #[test]
    fn small_bundles_fit_the_oracle_limits() {
        for seed in 0..20 {
            let (b, p) = random_small_bundle(seed).unwrap();
            assert!(b.frames() <= MAX_FRAMES && b.meta.joints <= MAX_JOINTS && b.meta.vertices <= MAX_VERTICES);
            p.validate().unwrap();
            assert_eq!(random_small_bundle(seed).unwrap().0.meta, b.meta);
        }
    }

    #[test]
    fn oracle_agrees_on_a_few_bundles() {
        for seed in 0..5 {
            let (b, p) = random_small_bundle(seed).unwrap();
            let fast = evaluate_bundle(&b, &p).unwrap();
            let slow = brute_oracles_with(&b, &p, 200, seed).unwrap();
            assert_eq!(fast.skipped.keys().collect::<Vec<_>>(), slow.report.skipped.keys().collect::<Vec<_>>());
            for (k, v) in &fast.metrics {
                let o = slow.report.metrics[k];
                assert!((v - o).abs() <= 1e-9 * v.abs().max(o.abs()).max(1.0), "{k}: {v} vs {o}");
            }
        }
    }
}
