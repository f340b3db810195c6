//! Contact-aware human-scene reconstruction toolkit.
//!
//! The crate is organised around the pieces of a streaming reconstruction
//! system that treats human-scene contact as a prompt rather than a side
//! output, plus the evaluation protocol used to score such systems:
//!
//! * [`body`]: a procedural skinned body, linear blend skinning and
//!   camera-to-world composition.
//! * [`scene`]: pointmaps, RoI geometry pooling, exact nearest-neighbour
//!   queries and robust ground height estimation.
//! * [`nn`] and [`pipeline`]: the contact prompt (scene context gate,
//!   geometry token, temporal momentum, fusion), the recurrent decoder
//!   stand-in, dense contact head and contact-guided latent refinement,
//!   with hand-written backward passes.
//! * [`losses`]: focal vertex contact loss, part-level loss, body losses
//!   and the total objective.
//! * [`metrics`]: world/local motion metrics, physical plausibility,
//!   temporal stability and contact metrics.
//! * [`synth`]: synthetic sequences and brute-force metric oracles.
//! * [`io`]: bundle/weights array formats and run configuration.
//! * [`demo`]: online prediction over a stored bundle.

pub mod body;
pub mod demo;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};

/// Index of the vertical axis in world coordinates (z-up).
pub const UP_AXIS: usize = 2;
