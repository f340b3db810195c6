use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::{
    augment_with_prior_cached, body_from_row, contact_head_cached, decoder_step_cached,
    fuse_contact_prompt_cached, geometry_token_cached, human_head_raw, latent_refine_cached,
    scene_context_cached, temporal_momentum_cached, AugmentCache, DecoderCache, SceneCache,
};
use super::weights::PipelineWeights;
use crate::body::{BodyParams, CameraPose};
use crate::nn::MlpCache;
use crate::scene::{pointmap_to_camera, pointmap_to_world, Anchor, PointFrame, Pointmap};
use crate::{Error, Result};

/// Which parts of the contact mechanism are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub geometry: bool,
    pub momentum: bool,
    /// `false` reads the body out of `H̃` with `ΔH = 0` (parallel readout).
    pub refinement: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        geometry: true,
        momentum: true,
        refinement: true,
    };
    pub const PARALLEL_READOUT: Ablation = Ablation {
        refinement: false,
        ..Ablation::FULL
    };
    pub const NO_GEOMETRY: Ablation = Ablation {
        geometry: false,
        ..Ablation::FULL
    };
    pub const NO_MOMENTUM: Ablation = Ablation {
        momentum: false,
        ..Ablation::FULL
    };
}

/// Everything the pipeline sees for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    /// Image token stand-ins, one per pixel patch, row-major over the patch grid.
    pub image_tokens: Array2<f64>,
    /// Patch grid `(rows, cols)`.
    pub token_grid: (usize, usize),
    pub patch: usize,
    pub anchors: Vec<Anchor>,
    pub camera: CameraPose,
    pub pointmap: Pointmap,
}

/// Sinusoidal 2D position code; the first half of the channels encodes the
/// row, the second half the column.
pub fn position_code(row: usize, col: usize, width: usize) -> Array1<f64> {
    let half = (width / 2).max(1);
    Array1::from_shape_fn(width, |d| {
        let (pos, k) = if d < half { (row, d) } else { (col, d - half) };
        let freq = 10000f64.powf(-((k / 2 * 2) as f64) / half as f64);
        let a = pos as f64 * freq;
        if k % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

impl FrameInput {
    /// Builds image tokens from the frame's pointmap: the frozen embedding
    /// of each patch's mean camera-frame point and valid fraction, plus a
    /// position code.
    pub fn from_pointmap(
        w: &PipelineWeights,
        pointmap: Pointmap,
        camera: CameraPose,
        anchors: Vec<Anchor>,
    ) -> Result<Self> {
        camera.validate()?;
        let p = w.config.patch;
        let cam_pm = match pointmap.frame() {
            PointFrame::Camera => pointmap.clone(),
            PointFrame::World => pointmap_to_camera(&pointmap, &camera)?,
        };
        let rows = pointmap.height().div_ceil(p);
        let cols = pointmap.width().div_ceil(p);
        let mut stats = Array2::zeros((rows * cols, 4));
        for r in 0..rows {
            for c in 0..cols {
                let mut sum = nalgebra::Vector3::zeros();
                let (mut valid, mut total) = (0usize, 0usize);
                for y in r * p..((r + 1) * p).min(pointmap.height()) {
                    for x in c * p..((c + 1) * p).min(pointmap.width()) {
                        total += 1;
                        if cam_pm.is_valid(y, x) {
                            sum += cam_pm.point(y, x);
                            valid += 1;
                        }
                    }
                }
                let t = r * cols + c;
                if valid > 0 {
                    let mean = sum / valid as f64;
                    for k in 0..3 {
                        stats[[t, k]] = mean[k];
                    }
                }
                stats[[t, 3]] = valid as f64 / total as f64;
            }
        }
        let mut tokens = w.image_embed.forward(&stats);
        for r in 0..rows {
            for c in 0..cols {
                let mut row = tokens.row_mut(r * cols + c);
                row += &position_code(r, c, w.config.width);
            }
        }
        Ok(FrameInput {
            image_tokens: tokens,
            token_grid: (rows, cols),
            patch: p,
            anchors,
            camera,
            pointmap,
        })
    }

    pub fn persons(&self) -> usize {
        self.anchors.len()
    }

    /// Index of the image token whose patch holds the anchor (clamped to the grid).
    pub fn anchor_token(&self, anchor: &Anchor) -> usize {
        let (rows, cols) = self.token_grid;
        let cell = |v: f64, n: usize| -> usize {
            let i = ((v + 0.5) / self.patch as f64).floor();
            if i.is_nan() || i < 0.0 {
                0
            } else {
                (i as usize).min(n - 1)
            }
        };
        cell(anchor.u[1], rows) * cols + cell(anchor.u[0], cols)
    }

    /// The frame's pointmap in world coordinates.
    pub fn world_pointmap(&self) -> Result<Pointmap> {
        match self.pointmap.frame() {
            PointFrame::World => Ok(self.pointmap.clone()),
            PointFrame::Camera => pointmap_to_world(&self.pointmap, &self.camera),
        }
    }

    fn validate(&self, w: &PipelineWeights) -> Result<()> {
        let (rows, cols) = self.token_grid;
        if self.anchors.is_empty() {
            return Err(Error::arg("frame has no anchors"));
        }
        if rows == 0 || cols == 0 || self.image_tokens.dim() != (rows * cols, w.config.width) {
            return Err(Error::arg(format!(
                "image tokens {:?} do not match grid {rows}x{cols} at width {}",
                self.image_tokens.dim(),
                w.config.width
            )));
        }
        if self.patch == 0 {
            return Err(Error::arg("patch size must be positive"));
        }
        Ok(())
    }
}

/// Source of per-person prior features (`N x c_p`).
pub trait PriorProvider: Sync {
    fn width(&self) -> usize;
    fn features(&self, frame: usize, anchors: &[Anchor]) -> Array2<f64>;
}

/// Deterministic stand-in prior: a Gaussian vector seeded by a hash of the
/// anchor position, the frame index and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticPrior {
    pub seed: u64,
    pub width: usize,
}

impl SyntheticPrior {
    pub fn new(seed: u64, width: usize) -> Self {
        SyntheticPrior { seed, width }
    }

    fn row(&self, frame: usize, anchor: &Anchor) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((frame as u64).to_le_bytes());
        h.update(anchor.u[0].to_bits().to_le_bytes());
        h.update(anchor.u[1].to_bits().to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        (0..self.width).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

impl PriorProvider for SyntheticPrior {
    fn width(&self) -> usize {
        self.width
    }

    fn features(&self, frame: usize, anchors: &[Anchor]) -> Array2<f64> {
        let mut out = Array2::zeros((anchors.len(), self.width));
        for (n, a) in anchors.iter().enumerate() {
            out.row_mut(n).assign(&Array1::from(self.row(frame, a)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistentState {
    pub tokens: Array2<f64>,
    /// Frame index of the last update; `None` before the first frame.
    pub last_update: Option<usize>,
}

/// What one frame hands to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    pub state: PersistentState,
    /// Decoder-refined contact tokens `C'` of the previous frame.
    pub prev_contact: Option<Array2<f64>>,
    /// World pointmap of the previous frame.
    pub prev_pointmap: Option<Pointmap>,
    /// Index of the next frame.
    pub frame: usize,
}

impl StreamState {
    pub fn initial(w: &PipelineWeights) -> Self {
        StreamState {
            state: PersistentState {
                tokens: w.state_init.clone(),
                last_update: None,
            },
            prev_contact: None,
            prev_pointmap: None,
            frame: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub image: Array2<f64>,
    pub pose: Array1<f64>,
    pub human: Array2<f64>,
    pub contact: Array2<f64>,
    pub state: PersistentState,
    pub contact_logits: Array2<f64>,
    pub contact_probs: Array2<f64>,
    /// Residual `ΔH`.
    pub residual: Array2<f64>,
    /// Refined latent `H̄ = H̃ + ΔH`.
    pub refined: Array2<f64>,
    /// Raw human-head rows, `N x (4J + 3)`.
    pub body_raw: Array2<f64>,
    pub bodies: Vec<BodyParams>,
    pub gamma: Array2<f64>,
}

/// Forward intermediates of one frame, consumed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct FrameCache {
    pub scene: SceneCache,
    pub u_curr: Array2<f64>,
    pub u_mem: Array2<f64>,
    pub gamma: Array2<f64>,
    pub geometry: Option<MlpCache>,
    pub momentum: Option<MlpCache>,
    pub fusion: MlpCache,
    pub decoder: DecoderCache,
    pub augment: AugmentCache,
    pub contact_head: MlpCache,
    pub residual: Option<MlpCache>,
    pub refined: Array2<f64>,
}

/// Human prompt: image token at each anchor plus the projected prior.
pub fn human_prompt(input: &FrameInput, prior: &Array2<f64>, w: &PipelineWeights) -> Result<Array2<f64>> {
    if prior.dim() != (input.persons(), w.config.prior_width) {
        return Err(Error::arg(format!(
            "prior features {:?} do not match {} persons at width {}",
            prior.dim(),
            input.persons(),
            w.config.prior_width
        )));
    }
    let idx: Vec<usize> = input.anchors.iter().map(|a| input.anchor_token(a)).collect();
    Ok(input.image_tokens.select(Axis(0), &idx) + w.prior_proj.forward(prior))
}

/// Runs one frame given the streamed context.
pub fn step_frame(
    w: &PipelineWeights,
    stream: &StreamState,
    input: &FrameInput,
    prior: &Array2<f64>,
    ablation: Ablation,
) -> Result<(FrameOutput, StreamState)> {
    let (out, next, _) = step_frame_cached(w, stream, input, prior, ablation)?;
    Ok((out, next))
}

pub(crate) fn step_frame_cached(
    w: &PipelineWeights,
    stream: &StreamState,
    input: &FrameInput,
    prior: &Array2<f64>,
    ablation: Ablation,
) -> Result<(FrameOutput, StreamState, FrameCache)> {
    input.validate(w)?;
    let n = input.persons();
    let c = w.config.width;
    let s_prev = &stream.state.tokens;
    let h = human_prompt(input, prior, w)?;

    let (ctx, scene) = scene_context_cached(&h, &input.image_tokens, s_prev, w)?;
    let (g, geometry) = if ablation.geometry {
        let (g, cache) = geometry_token_cached(stream.prev_pointmap.as_ref(), &input.anchors, w)?;
        (g, Some(cache))
    } else {
        (Array2::zeros((n, c)), None)
    };
    let prev_contact = if ablation.momentum {
        stream.prev_contact.as_ref()
    } else {
        None
    };
    let (mom, momentum) = temporal_momentum_cached(prev_contact, n, w)?;
    let (prompt, fusion) = fuse_contact_prompt_cached(&h, &ctx.u_scene, &g, &mom, w)?;

    let (dec, decoder) = decoder_step_cached(&input.image_tokens, &w.pose_token, &h, &prompt, s_prev, w)?;
    let (h_aug, c_aug, augment) = augment_with_prior_cached(&dec.human, &dec.contact, prior, w)?;
    let (logits, probs, contact_head) = contact_head_cached(&c_aug, w)?;
    let (delta, refined, residual) = if ablation.refinement {
        let (d, r, cache) = latent_refine_cached(&c_aug, &h_aug, w)?;
        (d, r, Some(cache))
    } else {
        let d = Array2::zeros((n, c));
        let r = &h_aug + &d;
        (d, r, None)
    };
    let body_raw = human_head_raw(&refined, w)?;
    let bodies = body_raw
        .rows()
        .into_iter()
        .map(|r| body_from_row(r.as_slice().expect("standard layout"), w.config.joints))
        .collect();

    if !(logits.iter().all(|v| v.is_finite()) && body_raw.iter().all(|v| v.is_finite())) {
        return Err(Error::Numeric("non-finite pipeline output".into()));
    }

    let state = PersistentState {
        tokens: dec.state.clone(),
        last_update: Some(stream.frame),
    };
    let next = StreamState {
        state: state.clone(),
        prev_contact: Some(dec.contact.clone()),
        prev_pointmap: Some(input.world_pointmap()?),
        frame: stream.frame + 1,
    };
    let out = FrameOutput {
        frame: stream.frame,
        image: dec.image,
        pose: dec.pose,
        human: dec.human,
        contact: dec.contact,
        state,
        contact_logits: logits,
        contact_probs: probs,
        residual: delta,
        refined: refined.clone(),
        body_raw,
        bodies,
        gamma: ctx.gamma.clone(),
    };
    let cache = FrameCache {
        scene,
        u_curr: ctx.u_curr,
        u_mem: ctx.u_mem,
        gamma: ctx.gamma,
        geometry,
        momentum,
        fusion,
        decoder,
        augment,
        contact_head,
        residual,
        refined,
    };
    Ok((out, next, cache))
}

/// Streams a sequence through the pipeline, strictly online.
pub fn run_sequence(
    frames: &[FrameInput],
    w: &PipelineWeights,
    prior: &dyn PriorProvider,
    ablation: Ablation,
) -> Result<Vec<FrameOutput>> {
    if frames.is_empty() {
        return Err(Error::arg("run_sequence needs at least one frame"));
    }
    if prior.width() != w.config.prior_width {
        return Err(Error::arg("prior provider width differs from the model"));
    }
    let mut stream = StreamState::initial(w);
    let mut outputs = Vec::with_capacity(frames.len());
    for (t, input) in frames.iter().enumerate() {
        let feats = prior.features(t, &input.anchors);
        let (out, next) = step_frame(w, &stream, input, &feats, ablation).map_err(|e| e.at_frame(t))?;
        outputs.push(out);
        stream = next;
    }
    Ok(outputs)
}
