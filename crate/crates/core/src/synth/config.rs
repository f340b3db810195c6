use serde::{Deserialize, Serialize};

use crate::body::{build_template_padded, BodyTemplate, DEFAULT_JOINTS, DEFAULT_VERTICES};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terrain {
    Flat { height: f64 },
    /// Steps rising along +x.
    Stepped { height: f64, step_height: f64, step_length: f64 },
    /// Constant slope along +x.
    Ramp { height: f64, slope: f64 },
}

impl Default for Terrain {
    fn default() -> Self {
        Terrain::Flat { height: 0.0 }
    }
}

impl Terrain {
    pub fn height_at(&self, x: f64, _y: f64) -> f64 {
        match *self {
            Terrain::Flat { height } => height,
            Terrain::Stepped {
                height,
                step_height,
                step_length,
            } => height + step_height * (x / step_length).floor(),
            Terrain::Ramp { height, slope } => height + slope * x,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Terrain::Flat { .. } => "flat",
            Terrain::Stepped { .. } => "stepped",
            Terrain::Ramp { .. } => "ramp",
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |v: f64| v.is_finite();
        let ok = match *self {
            Terrain::Flat { height } => finite(height),
            Terrain::Stepped {
                height,
                step_height,
                step_length,
            } => finite(height) && finite(step_height) && step_length > 0.0 && finite(step_length),
            Terrain::Ramp { height, slope } => finite(height) && finite(slope),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Schema(format!("invalid {} terrain parameters", self.name())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Rest pose, in place.
    Stand,
    /// Alternating limb swing while travelling along an arc.
    #[default]
    Walk,
    /// In-phase knee-bend bounce in place; the feet stay on the ground.
    Hop,
    /// Rigid glide out and back along an arc; the prediction drifts along +x.
    Drift,
}

impl Motion {
    pub fn name(self) -> &'static str {
        match self {
            Motion::Stand => "stand",
            Motion::Walk => "walk",
            Motion::Hop => "hop",
            Motion::Drift => "drift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of every pose component, radians.
    pub pose_rad: f64,
    /// Standard deviation of every root translation component, metres.
    pub translation_m: f64,
    /// Probability of flipping each contact label.
    pub contact_flip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraPath {
    #[default]
    Static,
    /// Orbit about the scene centre.
    Orbit { deg_per_frame: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    pub v_per_bone: usize,
    pub joints: usize,
    pub vertices: usize,
    pub seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            v_per_bone: 287,
            joints: DEFAULT_JOINTS,
            vertices: DEFAULT_VERTICES,
            seed: 0,
        }
    }
}

impl TemplateConfig {
    pub fn build(&self) -> Result<BodyTemplate> {
        build_template_padded(self.v_per_bone, self.joints, self.vertices, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub fps: f64,
    pub persons: usize,
    pub terrain: Terrain,
    pub motion: Motion,
    pub noise: NoiseConfig,
    /// Prediction drift of the drift motion, metres per frame.
    pub drift_m_per_frame: f64,
    /// Ground-truth contact distance, metres.
    pub tau: f64,
    pub camera: CameraPath,
    /// Pointmap rows and columns.
    pub pointmap: [usize; 2],
    pub template: TemplateConfig,
    /// Bundles written by one synthesis run; bundle `k` uses `seed + k`.
    pub bundles: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 60,
            fps: 30.0,
            persons: 1,
            terrain: Terrain::default(),
            motion: Motion::default(),
            noise: NoiseConfig::default(),
            drift_m_per_frame: 0.01,
            tau: 0.025,
            camera: CameraPath::default(),
            pointmap: [24, 32],
            template: TemplateConfig::default(),
            bundles: 1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Schema(format!("synth: {m}")));
        if self.frames == 0 || self.persons == 0 || self.bundles == 0 {
            return bad("frames, persons and bundles must be at least 1");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        let n = &self.noise;
        if !(n.pose_rad >= 0.0 && n.translation_m >= 0.0 && n.pose_rad.is_finite() && n.translation_m.is_finite()) {
            return bad("noise amplitudes must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&n.contact_flip) {
            return bad("contact_flip must lie in [0, 1]");
        }
        if !(self.drift_m_per_frame.is_finite() && self.drift_m_per_frame >= 0.0) {
            return bad("drift must be finite and non-negative");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if self.pointmap[0] < 2 || self.pointmap[1] < 2 {
            return bad("pointmap needs at least 2x2 pixels");
        }
        if let CameraPath::Orbit { deg_per_frame } = self.camera {
            if !deg_per_frame.is_finite() {
                return bad("orbit rate must be finite");
            }
        }
        self.terrain.validate()
    }
}
