//! Forward operations of the contact prompt, decoder stand-in and heads.
//!
//! Each public operation has a `*_cached` twin returning what the backward
//! pass needs; the public form simply drops the cache.

use nalgebra::Vector3;
use ndarray::{s, Array1, Array2, Axis, Zip};

use super::weights::PipelineWeights;
use crate::body::BodyParams;
use crate::nn::{concat_features, sigmoid, Attention, AttentionCache, MlpCache};
use crate::scene::{roi_geo_pool, Anchor, Pointmap};
use crate::{Error, Result};

fn check_width(x: &Array2<f64>, width: usize, what: &str) -> Result<()> {
    if x.ncols() != width {
        return Err(Error::arg(format!(
            "{what} has width {}, expected {width}",
            x.ncols()
        )));
    }
    Ok(())
}

fn check_rows(x: &Array2<f64>, rows: usize, what: &str) -> Result<()> {
    if x.nrows() != rows {
        return Err(Error::arg(format!("{what} has {} rows, expected {rows}", x.nrows())));
    }
    Ok(())
}

/// Multi-head cross-attention of `queries` over `keys_values`.
pub fn cross_attend(
    queries: &Array2<f64>,
    keys_values: &Array2<f64>,
    attention: &Attention,
) -> Result<Array2<f64>> {
    attention.forward(queries, keys_values)
}

/// Current-frame and memory scene context blended by a learned gate.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneContext {
    pub u_curr: Array2<f64>,
    pub u_mem: Array2<f64>,
    /// Gate values in `(0, 1)`, one per person and channel.
    pub gamma: Array2<f64>,
    pub u_scene: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct SceneCache {
    pub curr: AttentionCache,
    pub mem: AttentionCache,
    pub gate: MlpCache,
}

pub fn scene_context(
    human: &Array2<f64>,
    image: &Array2<f64>,
    state: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<SceneContext> {
    Ok(scene_context_cached(human, image, state, w)?.0)
}

pub(crate) fn scene_context_cached(
    human: &Array2<f64>,
    image: &Array2<f64>,
    state: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(SceneContext, SceneCache)> {
    if human.nrows() == 0 {
        return Err(Error::arg("scene context needs at least one person"));
    }
    let c = w.config.width;
    check_width(human, c, "human prompt")?;
    check_width(image, c, "image tokens")?;
    check_width(state, c, "state tokens")?;
    let (u_curr, curr) = w.ca_curr.forward_cached(human, image)?;
    let (u_mem, mem) = w.ca_mem.forward_cached(human, state)?;
    let (pre, gate) = w.gate.forward_cached(&concat_features(&[human, &u_curr, &u_mem])?)?;
    let gamma = pre.mapv(sigmoid);
    // convex combination, clamped so rounding never leaves the envelope
    let u_scene = Zip::from(&gamma)
        .and(&u_curr)
        .and(&u_mem)
        .map_collect(|&g, &a, &b| (g * a + (1.0 - g) * b).clamp(a.min(b), a.max(b)));
    Ok((
        SceneContext {
            u_curr,
            u_mem,
            gamma,
            u_scene,
        },
        SceneCache { curr, mem, gate },
    ))
}

/// RoI-pooled previous-frame geometry per anchor; a zero vector stands in
/// when there is no previous pointmap or the pool has no valid sample.
pub fn pooled_geometry_inputs(
    pm_prev: Option<&Pointmap>,
    anchors: &[Anchor],
    window: usize,
) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((anchors.len(), 3));
    if let Some(pm) = pm_prev {
        for (n, a) in anchors.iter().enumerate() {
            let pooled = roi_geo_pool(pm, a, window)?;
            if pooled.valid {
                for k in 0..3 {
                    x[[n, k]] = pooled.point[k];
                }
            }
        }
    }
    Ok(x)
}

pub fn geometry_token(
    pm_prev: Option<&Pointmap>,
    anchors: &[Anchor],
    w: &PipelineWeights,
) -> Result<Array2<f64>> {
    Ok(geometry_token_cached(pm_prev, anchors, w)?.0)
}

pub(crate) fn geometry_token_cached(
    pm_prev: Option<&Pointmap>,
    anchors: &[Anchor],
    w: &PipelineWeights,
) -> Result<(Array2<f64>, MlpCache)> {
    if anchors.is_empty() {
        return Err(Error::arg("geometry token needs at least one anchor"));
    }
    let x = pooled_geometry_inputs(pm_prev, anchors, w.config.window)?;
    w.geometry.forward_cached(&x)
}

/// Previous refined contact tokens truncated or zero-padded to `n` rows.
pub fn align_rows(prev: &Array2<f64>, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, prev.ncols()));
    let keep = n.min(prev.nrows());
    out.slice_mut(s![..keep, ..]).assign(&prev.slice(s![..keep, ..]));
    out
}

pub fn temporal_momentum(
    prev_contact: Option<&Array2<f64>>,
    persons: usize,
    w: &PipelineWeights,
) -> Result<Array2<f64>> {
    Ok(temporal_momentum_cached(prev_contact, persons, w)?.0)
}

pub(crate) fn temporal_momentum_cached(
    prev_contact: Option<&Array2<f64>>,
    persons: usize,
    w: &PipelineWeights,
) -> Result<(Array2<f64>, Option<MlpCache>)> {
    if persons == 0 {
        return Err(Error::arg("temporal momentum needs at least one person"));
    }
    match prev_contact {
        None => Ok((Array2::zeros((persons, w.config.width)), None)),
        Some(prev) => {
            check_width(prev, w.config.width, "previous contact tokens")?;
            let (m, cache) = w.momentum.forward_cached(&align_rows(prev, persons))?;
            Ok((m, Some(cache)))
        }
    }
}

pub fn fuse_contact_prompt(
    human: &Array2<f64>,
    u_scene: &Array2<f64>,
    geometry: &Array2<f64>,
    momentum: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<Array2<f64>> {
    Ok(fuse_contact_prompt_cached(human, u_scene, geometry, momentum, w)?.0)
}

pub(crate) fn fuse_contact_prompt_cached(
    human: &Array2<f64>,
    u_scene: &Array2<f64>,
    geometry: &Array2<f64>,
    momentum: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(Array2<f64>, MlpCache)> {
    let c = w.config.width;
    for (x, what) in [
        (human, "human prompt"),
        (u_scene, "scene context"),
        (geometry, "geometry token"),
        (momentum, "momentum"),
    ] {
        check_width(x, c, what)?;
    }
    w.fusion
        .forward_cached(&concat_features(&[human, u_scene, geometry, momentum])?)
}

/// Decoder outputs by token role, plus the updated state.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    pub image: Array2<f64>,
    pub pose: Array1<f64>,
    pub human: Array2<f64>,
    pub contact: Array2<f64>,
    pub state: Array2<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    pub self_attn: AttentionCache,
    pub cross_attn: AttentionCache,
    pub ffn: MlpCache,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderCache {
    pub blocks: Vec<BlockCache>,
    pub state_update: AttentionCache,
    pub image_rows: usize,
    pub persons: usize,
}

pub fn decoder_step(
    image: &Array2<f64>,
    pose: &Array1<f64>,
    human: &Array2<f64>,
    contact: &Array2<f64>,
    state: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<DecoderOutput> {
    Ok(decoder_step_cached(image, pose, human, contact, state, w)?.0)
}

pub(crate) fn decoder_step_cached(
    image: &Array2<f64>,
    pose: &Array1<f64>,
    human: &Array2<f64>,
    contact: &Array2<f64>,
    state: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(DecoderOutput, DecoderCache)> {
    let cfg = &w.config;
    if state.dim() != (cfg.state_tokens, cfg.width) {
        return Err(Error::arg(format!(
            "state is {:?}, expected {}x{}",
            state.dim(),
            cfg.state_tokens,
            cfg.width
        )));
    }
    check_width(image, cfg.width, "image tokens")?;
    check_width(human, cfg.width, "human prompt")?;
    check_width(contact, cfg.width, "contact prompt")?;
    check_rows(contact, human.nrows(), "contact prompt")?;
    if pose.len() != cfg.width {
        return Err(Error::arg("pose token width differs from the model width"));
    }
    let pose_row = pose.view().insert_axis(Axis(0));
    let mut x = ndarray::concatenate(
        Axis(0),
        &[image.view(), pose_row, human.view(), contact.view()],
    )
    .map_err(|e| Error::arg(e.to_string()))?;

    let mut blocks = Vec::with_capacity(w.decoder.len());
    for block in &w.decoder {
        let (sa, sa_cache) = block.self_attn.forward_cached(&x, &x)?;
        x += &sa;
        let (ca, ca_cache) = block.cross_attn.forward_cached(&x, state)?;
        x += &ca;
        let (ff, ffn_cache) = block.ffn.forward_cached(&x)?;
        x += &ff;
        blocks.push(BlockCache {
            self_attn: sa_cache,
            cross_attn: ca_cache,
            ffn: ffn_cache,
        });
    }
    let (update, su_cache) = w.state_update.forward_cached(state, &x)?;
    let new_state = state + &update;

    let (ni, n) = (image.nrows(), human.nrows());
    let out = DecoderOutput {
        image: x.slice(s![..ni, ..]).to_owned(),
        pose: x.row(ni).to_owned(),
        human: x.slice(s![ni + 1..ni + 1 + n, ..]).to_owned(),
        contact: x.slice(s![ni + 1 + n.., ..]).to_owned(),
        state: new_state,
    };
    Ok((
        out,
        DecoderCache {
            blocks,
            state_update: su_cache,
            image_rows: ni,
            persons: n,
        },
    ))
}

#[derive(Debug, Clone)]
pub(crate) struct AugmentCache {
    pub human_in: Array2<f64>,
    pub contact_in: Array2<f64>,
}

/// Concatenates prior features onto both token sets and projects back to
/// the model width: returns `(H̃, C̃)`.
pub fn augment_with_prior(
    human: &Array2<f64>,
    contact: &Array2<f64>,
    prior: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (h, c, _) = augment_with_prior_cached(human, contact, prior, w)?;
    Ok((h, c))
}

pub(crate) fn augment_with_prior_cached(
    human: &Array2<f64>,
    contact: &Array2<f64>,
    prior: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(Array2<f64>, Array2<f64>, AugmentCache)> {
    let cfg = &w.config;
    check_width(human, cfg.width, "refined human tokens")?;
    check_width(contact, cfg.width, "refined contact tokens")?;
    check_width(prior, cfg.prior_width, "prior features")?;
    check_rows(contact, human.nrows(), "refined contact tokens")?;
    check_rows(prior, human.nrows(), "prior features")?;
    let human_in = concat_features(&[human, prior])?;
    let contact_in = concat_features(&[contact, prior])?;
    let h = w.augment_human.forward(&human_in);
    let c = w.augment_contact.forward(&contact_in);
    Ok((h, c, AugmentCache { human_in, contact_in }))
}

/// Dense per-vertex logits and probabilities.
pub fn contact_head(contact: &Array2<f64>, w: &PipelineWeights) -> Result<(Array2<f64>, Array2<f64>)> {
    let (s, p, _) = contact_head_cached(contact, w)?;
    Ok((s, p))
}

pub(crate) fn contact_head_cached(
    contact: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(Array2<f64>, Array2<f64>, MlpCache)> {
    let (logits, cache) = w.contact_head.forward_cached(contact)?;
    let probs = logits.mapv(sigmoid);
    Ok((logits, probs, cache))
}

/// Contact-guided residual on the human latent: returns `(ΔH, H̄)`.
pub fn latent_refine(
    contact: &Array2<f64>,
    human: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (d, h, _) = latent_refine_cached(contact, human, w)?;
    Ok((d, h))
}

pub(crate) fn latent_refine_cached(
    contact: &Array2<f64>,
    human: &Array2<f64>,
    w: &PipelineWeights,
) -> Result<(Array2<f64>, Array2<f64>, MlpCache)> {
    if contact.dim() != human.dim() {
        return Err(Error::arg("contact and human latents differ in shape"));
    }
    let (delta, cache) = w.residual.forward_cached(contact)?;
    let refined = human + &delta;
    Ok((delta, refined, cache))
}

/// Raw body rows `[pose (3J) | shape (J) | translation (3)]`.
pub fn human_head_raw(refined: &Array2<f64>, w: &PipelineWeights) -> Result<Array2<f64>> {
    check_width(refined, w.config.width, "refined human latent")?;
    Ok(w.human_head.forward(refined))
}

pub fn human_head(refined: &Array2<f64>, w: &PipelineWeights) -> Result<Vec<BodyParams>> {
    let raw = human_head_raw(refined, w)?;
    Ok(raw
        .rows()
        .into_iter()
        .map(|r| body_from_row(r.as_slice().expect("standard layout"), w.config.joints))
        .collect())
}

/// Unpacks one raw human-head row.
pub fn body_from_row(row: &[f64], joints: usize) -> BodyParams {
    let pose = (0..joints)
        .map(|j| Vector3::new(row[3 * j], row[3 * j + 1], row[3 * j + 2]))
        .collect();
    let shape = row[3 * joints..4 * joints].to_vec();
    let t = &row[4 * joints..4 * joints + 3];
    BodyParams {
        pose,
        shape,
        expression: Vec::new(),
        root_trans_cam: Vector3::new(t[0], t[1], t[2]),
    }
}

/// Packs body parameters into a raw row (inverse of [`body_from_row`]);
/// an empty shape vector packs as zeros.
pub fn body_to_row(p: &BodyParams) -> Vec<f64> {
    let joints = p.pose.len();
    let mut row: Vec<f64> = p.pose.iter().flat_map(|r| r.iter().copied()).collect();
    if p.shape.is_empty() {
        row.extend(std::iter::repeat_n(0.0, joints));
    } else {
        row.extend_from_slice(&p.shape);
    }
    row.extend(p.root_trans_cam.iter().copied());
    row
}
