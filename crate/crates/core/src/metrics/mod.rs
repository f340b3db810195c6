//! Evaluation protocol: world and local motion accuracy, physical
//! plausibility, temporal stability and dense contact metrics.

mod align;
mod contact;
mod evaluate;
mod motion;
mod physical;
mod report;

pub use align::{umeyama_align, SimilarityTransform, RANK_TOLERANCE};
pub use contact::{binarize, contact_prf, geo_contact_error, Confusion, GeoTemplate, Prf, DEFAULT_CONTACT_THRESHOLD};
pub use evaluate::{
    all_keys, evaluate_bundle, evaluate_contact, evaluate_with, ground_for, instances, person_sequence,
    CONTACT_KEYS, MOTION_KEYS, PLAUSIBILITY_KEYS,
};
pub use motion::{
    mpjpe_pve, pa_mpjpe, path_length, rte, split_segment_pairs, split_segments, w_mpjpe, wa_mpjpe, Sequence,
    MIN_SEGMENT, M_TO_MM,
};
pub use physical::{
    foot_sliding, jitter, plausibility, Ground, GroundMode, GroundPoints, Plausibility, DEFAULT_FOOT_CONTACT_TOL,
    DEFAULT_TOLERANCE, MIN_JITTER_FRAMES, M_TO_CM,
};
pub use report::{
    canonical_json, format_float, unit_of, MetricReport, ProtocolConfig, ProtocolMeta, DEFAULT_SEGMENT_LENGTH,
};
