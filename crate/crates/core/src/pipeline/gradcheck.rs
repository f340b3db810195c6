//! Finite-difference verification of the hand-written backward pass.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backward::backward_frame;
use super::frame::{step_frame_cached, Ablation, FrameInput, FrameOutput, StreamState, PersistentState};
use super::weights::{PipelineWeights, WeightGroup};
use crate::body::CameraPose;
use crate::losses::{contact_loss_with_grad_at, part_selection, LossConfig};
use crate::scene::{Anchor, PointFrame, Pointmap};
use crate::{Error, Result};

/// Largest number of coordinates checked per group.
pub const MAX_CHECKED: usize = 64;

/// Loss driven through the frame for gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradLoss {
    /// Fixed random linear functional of the logits and body rows.
    Linear,
    /// Focal vertex loss plus the weighted part loss on the logits.
    Contact,
    /// `lambda_c` times the contact loss plus a mean-squared body-row term.
    Training,
    /// Identically zero.
    Zero,
}

/// A frame with a non-trivial streamed context and fixed targets.
#[derive(Debug, Clone)]
pub struct GradCheckFixture {
    pub input: FrameInput,
    pub stream: StreamState,
    pub prior: Array2<f64>,
    pub labels: Array2<u8>,
    pub part_map: Vec<usize>,
    pub num_parts: usize,
    pub body_target: Array2<f64>,
    pub linear_logits: Array2<f64>,
    pub linear_body: Array2<f64>,
    pub ablation: Ablation,
    pub loss: LossConfig,
}

impl GradCheckFixture {
    /// Two persons, a previous pointmap and previous contact tokens, so
    /// every learnable group lies on the loss path.
    pub fn synthetic(w: &PipelineWeights, seed: u64) -> Result<Self> {
        let cfg = &w.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let persons = 2;
        let (height, width) = (2 * cfg.patch, 3 * cfg.patch);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let (a, b, c0) = (u(-0.3, 0.3), u(-0.3, 0.3), u(0.0, 0.5));
        let pm = |phase: f64| {
            Pointmap::from_fn(height, width, PointFrame::World, move |r, c| {
                let (x, y) = (c as f64 * 0.1, r as f64 * 0.1);
                Vector3::new(x, y, a * x + b * y + c0 + 0.05 * (x + phase).sin())
            })
        };
        let anchors = vec![
            Anchor::new(u(1.0, width as f64 - 2.0), u(1.0, height as f64 - 2.0), 0),
            Anchor::new(u(1.0, width as f64 - 2.0), u(1.0, height as f64 - 2.0), 1),
        ];
        let input = FrameInput::from_pointmap(w, pm(0.0)?, CameraPose::identity(), anchors)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut normal = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_simple_fn((rows, cols), || scale * rng.random_range(-1.0..1.0))
        };
        let stream = StreamState {
            state: PersistentState {
                tokens: &w.state_init + &normal(cfg.state_tokens, cfg.width, 0.3),
                last_update: Some(0),
            },
            prev_contact: Some(normal(persons, cfg.width, 1.0)),
            prev_pointmap: Some(pm(0.7)?),
            frame: 1,
        };
        let prior = normal(persons, cfg.prior_width, 1.0);
        let body_target = normal(persons, cfg.body_dim(), 0.2);
        let linear_logits = normal(persons, cfg.vertices, 1.0);
        let linear_body = normal(persons, cfg.body_dim(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1abe1);
        let labels = Array2::from_shape_simple_fn((persons, cfg.vertices), || u8::from(rng.random_bool(0.3)));
        let num_parts = cfg.joints.min(cfg.vertices);
        let part_map = (0..cfg.vertices).map(|v| v * num_parts / cfg.vertices).collect();
        Ok(GradCheckFixture {
            input,
            stream,
            prior,
            labels,
            part_map,
            num_parts,
            body_target,
            linear_logits,
            linear_body,
            ablation: Ablation::FULL,
            loss: LossConfig::default(),
        })
    }

    /// Loss value and its gradients with respect to logits and body rows.
    fn evaluate(
        &self,
        out: &FrameOutput,
        loss: GradLoss,
        selection: Option<&[(usize, usize)]>,
    ) -> Result<(f64, Array2<f64>, Array2<f64>)> {
        let (s, y) = (&out.contact_logits, &out.body_raw);
        let zeros_s = || Array2::zeros(s.raw_dim());
        let zeros_y = || Array2::zeros(y.raw_dim());
        let value = match loss {
            GradLoss::Zero => (0.0, zeros_s(), zeros_y()),
            GradLoss::Linear => {
                let v = (s * &self.linear_logits).sum() + (y * &self.linear_body).sum();
                (v, self.linear_logits.clone(), self.linear_body.clone())
            }
            GradLoss::Contact => {
                let (v, ds) = contact_loss_with_grad_at(s, &self.labels, &self.part_map, self.num_parts, &self.loss, selection)?;
                (v, ds, zeros_y())
            }
            GradLoss::Training => {
                let (v, ds) = contact_loss_with_grad_at(s, &self.labels, &self.part_map, self.num_parts, &self.loss, selection)?;
                let diff = y - &self.body_target;
                let n = diff.len() as f64;
                let body = diff.mapv(|d| d * d).sum() / n;
                (
                    self.loss.lambda_c * v + body,
                    ds * self.loss.lambda_c,
                    diff * (2.0 / n),
                )
            }
        };
        if !value.0.is_finite() {
            return Err(Error::Numeric("gradient-check loss is not finite".into()));
        }
        Ok(value)
    }

    pub fn loss(&self, w: &PipelineWeights, loss: GradLoss) -> Result<f64> {
        self.loss_at(w, loss, None)
    }

    /// Loss with the part max pooling held at `selection`.
    pub fn loss_at(&self, w: &PipelineWeights, loss: GradLoss, selection: Option<&[(usize, usize)]>) -> Result<f64> {
        let (out, _, _) = step_frame_cached(w, &self.stream, &self.input, &self.prior, self.ablation)?;
        Ok(self.evaluate(&out, loss, selection)?.0)
    }

    /// Arg-max vertex of every part under weights `w`.
    pub fn part_selection(&self, w: &PipelineWeights) -> Result<Vec<(usize, usize)>> {
        let (out, _, _) = step_frame_cached(w, &self.stream, &self.input, &self.prior, self.ablation)?;
        part_selection(&out.contact_logits, &self.labels, &self.part_map, self.num_parts)
    }

    /// Loss value and analytic gradients of every weight.
    pub fn gradient(&self, w: &PipelineWeights, loss: GradLoss) -> Result<(f64, PipelineWeights)> {
        let (out, _, cache) = step_frame_cached(w, &self.stream, &self.input, &self.prior, self.ablation)?;
        let (value, ds, dy) = self.evaluate(&out, loss, None)?;
        Ok((value, backward_frame(w, &cache, &ds, &dy)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckOptions {
    /// Step of the five-point central difference.
    pub eps: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-3,
            tolerance: 1e-4,
            samples: MAX_CHECKED,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub group: &'static str,
    pub loss: GradLoss,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Flattened coordinates of a group, as `(array name, index within array)`.
fn coordinates(w: &PipelineWeights, group: WeightGroup) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    w.visit_group(group, &mut |name, a| {
        out.extend((0..a.len()).map(|i| (name.clone(), i)));
    });
    out
}

fn read_coord(w: &PipelineWeights, group: WeightGroup, name: &str, idx: usize) -> f64 {
    let mut v = f64::NAN;
    w.visit_group(group, &mut |n, a| {
        if n == name {
            v = *a.iter().nth(idx).expect("index within array");
        }
    });
    v
}

fn write_coord(w: &mut PipelineWeights, group: WeightGroup, name: &str, idx: usize, value: f64) {
    w.visit_group_mut(group, &mut |n, mut a| {
        if n == name {
            match a.as_slice_mut() {
                Some(s) => s[idx] = value,
                None => *a.iter_mut().nth(idx).expect("index within array") = value,
            }
        }
    });
}

/// Compares analytic gradients with five-point central differences on up to
/// `opts.samples` coordinates of a learnable group. The part max pooling is
/// held at its arg-max under `w` while differencing.
pub fn grad_check(
    loss: GradLoss,
    w: &PipelineWeights,
    group: WeightGroup,
    fixture: &GradCheckFixture,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::arg(format!("finite-difference step {} outside [1e-7, 1e-3]", opts.eps)));
    }
    if group.frozen() {
        return Err(Error::arg(format!("weight group `{}` is frozen", group.name())));
    }
    let (_, grads) = fixture.gradient(w, loss)?;
    let selection = fixture.part_selection(w)?;
    let coords = coordinates(w, group);
    let take = opts.samples.min(MAX_CHECKED).min(coords.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picked = sample(&mut rng, coords.len(), take).into_vec();
    picked.sort_unstable();

    let mut work = w.clone();
    let mut max_err = 0.0f64;
    let mut worst = None;
    for k in picked {
        let (name, idx) = &coords[k];
        let x0 = read_coord(&work, group, name, *idx);
        let mut at = |k: f64| -> Result<f64> {
            write_coord(&mut work, group, name, *idx, x0 + k * opts.eps);
            fixture.loss_at(&work, loss, Some(&selection))
        };
        let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        write_coord(&mut work, group, name, *idx, x0);
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * opts.eps);
        let analytic = read_coord(&grads, group, name, *idx);
        let err = relative_error(analytic, numeric);
        if worst.is_none() || err > max_err {
            max_err = err;
            worst = Some((name.clone(), *idx));
        }
    }
    Ok(GradCheckReport {
        group: group.name(),
        loss,
        checked: take,
        max_rel_error: max_err,
        worst,
        passed: max_err < opts.tolerance,
    })
}
