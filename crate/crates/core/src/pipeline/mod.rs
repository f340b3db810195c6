//! The contact prompt pipeline: scene context gate, geometry token,
//! temporal momentum and fusion, a recurrent decoder stand-in, prior
//! augmentation, the dense contact head and contact-guided refinement.

mod backward;
mod frame;
mod gradcheck;
mod ops;
mod weights;


pub use frame::{
    human_prompt, position_code, run_sequence, step_frame, Ablation, FrameInput, FrameOutput,
    PersistentState, PriorProvider, StreamState, SyntheticPrior,
};
pub use gradcheck::{
    grad_check, relative_error, GradCheckFixture, GradCheckOptions, GradCheckReport, GradLoss,
    MAX_CHECKED,
};
pub use ops::{
    align_rows, augment_with_prior, body_from_row, body_to_row, contact_head, cross_attend,
    decoder_step, fuse_contact_prompt, geometry_token, human_head, human_head_raw, latent_refine,
    pooled_geometry_inputs, scene_context, temporal_momentum, DecoderOutput, SceneContext,
};
pub use weights::{DecoderBlock, PipelineConfig, PipelineWeights, WeightGroup};
