//! Reverse pass of one frame with the streamed context held fixed.
//!
//! Gradients reach every learnable group. The decoder and the other frozen
//! modules are differentiated only to carry gradients through them; their
//! own parameter gradients are accumulated but never used.

use ndarray::{s, Array2};

use super::frame::FrameCache;
use super::ops::DecoderCache;
use super::weights::PipelineWeights;
use crate::nn::split_features;

/// Backpropagates the token-stack gradient through the decoder stand-in.
/// Returns the gradient of the input token stack; the state is detached.
fn decoder_backward(
    w: &PipelineWeights,
    cache: &DecoderCache,
    d_out: Array2<f64>,
    grads: &mut PipelineWeights,
) -> Array2<f64> {
    // S_new = S + update(S, X_D); only X_D matters here.
    let mut dx = d_out;
    let zero_state = Array2::zeros((w.config.state_tokens, w.config.width));
    let (_, dkv) = w
        .state_update
        .backward(&cache.state_update, &zero_state, &mut grads.state_update);
    dx += &dkv;
    for ((block, bc), g) in w
        .decoder
        .iter()
        .zip(&cache.blocks)
        .zip(grads.decoder.iter_mut())
        .rev()
    {
        let d_ffn = block.ffn.backward(&bc.ffn, &dx, &mut g.ffn);
        dx += &d_ffn;
        let (dq, _) = block.cross_attn.backward(&bc.cross_attn, &dx, &mut g.cross_attn);
        dx += &dq;
        let (dq, dkv) = block.self_attn.backward(&bc.self_attn, &dx, &mut g.self_attn);
        dx = dx + dq + dkv;
    }
    dx
}

/// Gradients of all weights given the loss gradients with respect to the
/// contact logits (`N x V`) and raw body rows (`N x (4J + 3)`).
pub(crate) fn backward_frame(
    w: &PipelineWeights,
    cache: &FrameCache,
    d_logits: &Array2<f64>,
    d_body: &Array2<f64>,
) -> PipelineWeights {
    let mut g = w.zeros_like();
    let c = w.config.width;
    let cp = w.config.prior_width;

    let d_refined = w.human_head.backward(&cache.refined, d_body, &mut g.human_head);
    let d_h_aug = d_refined.clone();
    let mut d_c_aug = w
        .contact_head
        .backward(&cache.contact_head, d_logits, &mut g.contact_head);
    if let Some(rc) = &cache.residual {
        d_c_aug += &w.residual.backward(rc, &d_refined, &mut g.residual);
    }

    let d_hin = w
        .augment_human
        .backward(&cache.augment.human_in, &d_h_aug, &mut g.augment_human);
    let d_cin = w
        .augment_contact
        .backward(&cache.augment.contact_in, &d_c_aug, &mut g.augment_contact);
    let d_human_out = d_hin.slice(s![.., ..c]).to_owned();
    let d_contact_out = d_cin.slice(s![.., ..c]).to_owned();
    debug_assert_eq!(d_hin.ncols(), c + cp);

    let dec = &cache.decoder;
    let (ni, n) = (dec.image_rows, dec.persons);
    let mut d_stack = Array2::zeros((ni + 1 + 2 * n, c));
    d_stack.slice_mut(s![ni + 1..ni + 1 + n, ..]).assign(&d_human_out);
    d_stack.slice_mut(s![ni + 1 + n.., ..]).assign(&d_contact_out);
    let d_in = decoder_backward(w, dec, d_stack, &mut g);
    let d_prompt = d_in.slice(s![ni + 1 + n.., ..]).to_owned();

    let d_fused = w.fusion.backward(&cache.fusion, &d_prompt, &mut g.fusion);
    let parts = split_features(&d_fused, &[c, c, c, c]);
    let (d_scene, d_geo, d_mom) = (&parts[1], &parts[2], &parts[3]);
    if let Some(mc) = &cache.momentum {
        w.momentum.backward(mc, d_mom, &mut g.momentum);
    }
    if let Some(gc) = &cache.geometry {
        w.geometry.backward(gc, d_geo, &mut g.geometry);
    }

    // U = γ U_curr + (1 - γ) U_mem, γ = σ(gate(H ⊕ U_curr ⊕ U_mem))
    let gamma = &cache.gamma;
    let d_gamma = d_scene * &(&cache.u_curr - &cache.u_mem);
    let d_pre = d_gamma * &gamma.mapv(|v| v * (1.0 - v));
    let d_gate_in = w.gate.backward(&cache.scene.gate, &d_pre, &mut g.gate);
    let gate_parts = split_features(&d_gate_in, &[c, c, c]);
    let d_curr = d_scene * gamma + &gate_parts[1];
    let d_mem = d_scene * &gamma.mapv(|v| 1.0 - v) + &gate_parts[2];
    w.ca_curr.backward(&cache.scene.curr, &d_curr, &mut g.ca_curr);
    w.ca_mem.backward(&cache.scene.mem, &d_mem, &mut g.ca_mem);
    g
}
