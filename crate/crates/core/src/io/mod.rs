//! On-disk formats and run configuration.

mod arrays;
mod bundle;
mod config;
mod weights;

pub use arrays::{ArrayData, ArrayEntry, ArrayStore, DType, Manifest, NamedArray, MANIFEST_FILE};
pub use bundle::{BodyTrack, BundleMeta, SequenceBundle, Track, BUNDLE_FORMAT};
pub use config::{RunConfig, SEED_ENV};
pub use weights::{load_weights, save_weights, GroupInfo, WeightsMeta, WEIGHTS_FORMAT};
