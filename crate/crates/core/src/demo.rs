//! Streaming prediction over a stored bundle.

use ndarray::Array2;

use crate::body::{compose_world, lbs_forward, BodyParams};
use crate::io::{BodyTrack, SequenceBundle, Track};
use crate::pipeline::{step_frame, Ablation, FrameInput, PipelineWeights, PriorProvider, StreamState, SyntheticPrior};
use crate::{Error, Result};

/// Checks that the weights and the bundle describe the same body.
pub fn check_compatible(bundle: &SequenceBundle, w: &PipelineWeights) -> Result<()> {
    let cfg = &w.config;
    if cfg.vertices != bundle.meta.vertices || cfg.joints != bundle.meta.joints {
        return Err(Error::Schema(format!(
            "weights expect V={} J={}, bundle has V={} J={}",
            cfg.vertices, cfg.joints, bundle.meta.vertices, bundle.meta.joints
        )));
    }
    if bundle.pointmaps.is_none() || bundle.anchors.is_none() {
        return Err(Error::Schema("prediction needs world pointmaps and anchors".into()));
    }
    Ok(())
}

/// Prior used by prediction runs: seeded from the weights.
pub fn default_prior(w: &PipelineWeights) -> SyntheticPrior {
    SyntheticPrior::new(w.config.seed, w.config.prior_width)
}

/// Per-frame prediction with world-frame bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub params: Vec<BodyParams>,
    pub joints: Vec<Vec<nalgebra::Vector3<f64>>>,
    pub vertices: Vec<Vec<nalgebra::Vector3<f64>>>,
    pub contact_probs: Array2<f64>,
}

/// Runs the pipeline frame by frame, calling `sink` as soon as each frame
/// is done. Frame `t` reads nothing from frames after `t`.
pub fn stream_bundle(
    bundle: &SequenceBundle,
    w: &PipelineWeights,
    prior: &dyn PriorProvider,
    ablation: Ablation,
    mut sink: impl FnMut(usize, FramePrediction) -> Result<()>,
) -> Result<()> {
    bundle.validate()?;
    check_compatible(bundle, w)?;
    let pms = bundle.pointmaps.as_ref().expect("checked");
    let anchors = bundle.anchors.as_ref().expect("checked");
    let n = bundle.meta.persons;
    let mut stream = StreamState::initial(w);
    for t in 0..bundle.meta.frames {
        let cam = bundle.cameras[t];
        let step = || -> Result<(FramePrediction, StreamState)> {
            let input = FrameInput::from_pointmap(w, pms[t].clone(), cam, anchors[t].clone())?;
            let feats = prior.features(t, &input.anchors);
            let (out, next) = step_frame(w, &stream, &input, &feats, ablation)?;
            let mut params = vec![None; n];
            for (a, body) in input.anchors.iter().zip(out.bodies) {
                if a.person >= n || params[a.person].is_some() {
                    return Err(Error::Schema(format!("anchor person {} invalid or repeated", a.person)));
                }
                params[a.person] = Some(body);
            }
            let mut probs = Array2::zeros((n, bundle.meta.vertices));
            for (row, a) in input.anchors.iter().enumerate() {
                probs.row_mut(a.person).assign(&out.contact_probs.row(row));
            }
            let mut pred = FramePrediction {
                params: Vec::with_capacity(n),
                joints: Vec::with_capacity(n),
                vertices: Vec::with_capacity(n),
                contact_probs: probs,
            };
            for p in params {
                let body = p.ok_or_else(|| Error::Schema("every person needs an anchor".into()))?;
                let posed = lbs_forward(&bundle.template, &body)?;
                let (v, j) = compose_world(&posed.vertices, &posed.joints, &cam)?;
                pred.params.push(body);
                pred.joints.push(j);
                pred.vertices.push(v);
            }
            Ok((pred, next))
        };
        let (pred, next) = step().map_err(|e| e.at_frame(t))?;
        sink(t, pred)?;
        stream = next;
    }
    Ok(())
}

/// The input bundle with its prediction channel replaced by a pipeline run.
pub fn predict_bundle(
    bundle: &SequenceBundle,
    w: &PipelineWeights,
    prior: &dyn PriorProvider,
    ablation: Ablation,
) -> Result<SequenceBundle> {
    let t_count = bundle.meta.frames;
    let mut params = Vec::with_capacity(t_count);
    let (mut joints, mut vertices): (Track, Track) = (Vec::with_capacity(t_count), Vec::with_capacity(t_count));
    let mut probs = Vec::with_capacity(t_count);
    stream_bundle(bundle, w, prior, ablation, |_, p| {
        params.push(p.params);
        joints.push(p.joints);
        vertices.push(p.vertices);
        probs.push(p.contact_probs);
        Ok(())
    })?;
    let mut out = bundle.clone();
    out.pred = BodyTrack {
        params: Some(params),
        joints: Some(joints),
        vertices: Some(vertices),
    };
    out.contact_pred = Some(probs);
    out.validate()?;
    Ok(out)
}
