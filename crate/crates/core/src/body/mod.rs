//! Procedural skinned body, forward kinematics and world composition.

mod camera;
mod lbs;
mod template;

pub use camera::{compose_world, CameraPose};
pub use lbs::{canonical_axis_angle, lbs_forward, regress_joints, rodrigues, BodyParams, PosedBody};
pub use template::{
    build_template, build_template_padded, default_template, BodyTemplate, DEFAULT_JOINTS,
    DEFAULT_VERTICES,
};
