//! Whole-bundle evaluation.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde_json::json;

use super::align::umeyama_align;
use super::contact::{binarize, geo_contact_error, Confusion, GeoTemplate};
use super::motion::{mpjpe_pve, rte, split_segments, w_mpjpe, wa_mpjpe, M_TO_MM};
use super::physical::{jerk_scale, jerk_sums, plausibility, sliding_sums, Ground, GroundMode, GroundPoints};
use super::report::{MetricReport, ProtocolConfig};
use crate::io::{SequenceBundle, Track};
use crate::scene::estimate_ground_height;
use crate::{Error, Result, UP_AXIS};

pub const MOTION_KEYS: [&str; 5] = ["wa_mpjpe_mm", "w_mpjpe_mm", "rte_pct", "pa_mpjpe_mm", "mpjpe_mm"];
pub const PLAUSIBILITY_KEYS: [&str; 4] = ["coll_pct", "pen_cm", "float_cm", "pen_max_cm"];
pub const CONTACT_KEYS: [&str; 4] = ["contact_precision", "contact_recall", "contact_f1", "geo_contact_error_cm"];

/// Every key an evaluation reports, as a value or a skip.
pub fn all_keys() -> Vec<&'static str> {
    let mut k: Vec<&str> = MOTION_KEYS.to_vec();
    k.push("pve_mm");
    k.extend(PLAUSIBILITY_KEYS);
    k.extend(["foot_sliding_mm", "jitter_10m_s3"]);
    k.extend(CONTACT_KEYS);
    k
}

/// Person `n` of a track as a frame sequence.
pub fn person_sequence(track: &Track, n: usize) -> Vec<Vec<Vector3<f64>>> {
    track.iter().map(|f| f[n].clone()).collect()
}

/// All `(frame, person)` instances, frame-major.
pub fn instances(track: &Track) -> Vec<Vec<Vector3<f64>>> {
    track.iter().flatten().cloned().collect()
}

/// Frame-count-weighted mean over values; `None` when empty.
fn weighted_mean(items: &[(f64, usize)]) -> Option<f64> {
    let w: usize = items.iter().map(|(_, n)| n).sum();
    (w > 0).then(|| items.iter().map(|(v, n)| v * *n as f64).sum::<f64>() / w as f64)
}

/// Treats degenerate and undefined results as missing; other errors propagate.
fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_) | Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

struct SegmentValues {
    wa: Vec<(f64, usize)>,
    w: Vec<(f64, usize)>,
    rte: Vec<(f64, usize)>,
    segments: usize,
}

fn segment_metrics(pred: &Track, gt: &Track, persons: usize, seg_len: usize) -> Result<SegmentValues> {
    let frames = pred.len();
    let ranges = split_segments(frames, seg_len)?;
    let jobs: Vec<(usize, std::ops::Range<usize>)> =
        (0..persons).flat_map(|n| ranges.iter().map(move |r| (n, r.clone()))).collect();
    let results: Vec<Result<[Option<f64>; 3]>> = jobs
        .par_iter()
        .map(|(n, r)| {
            let p = person_sequence(pred, *n);
            let g = person_sequence(gt, *n);
            let (ps, gs) = (&p[r.clone()], &g[r.clone()]);
            let root_p: Vec<Vector3<f64>> = ps.iter().map(|f| f[0]).collect();
            let root_g: Vec<Vector3<f64>> = gs.iter().map(|f| f[0]).collect();
            Ok([optional(wa_mpjpe(ps, gs))?, optional(w_mpjpe(ps, gs))?, optional(rte(&root_p, &root_g))?])
        })
        .collect();
    let mut out = SegmentValues {
        wa: Vec::new(),
        w: Vec::new(),
        rte: Vec::new(),
        segments: jobs.len(),
    };
    for ((_, r), res) in jobs.iter().zip(results) {
        let [wa, w, t] = res?;
        let len = r.len();
        out.wa.extend(wa.map(|v| (v, len)));
        out.w.extend(w.map(|v| (v, len)));
        out.rte.extend(t.map(|v| (v, len)));
    }
    Ok(out)
}

fn set_or_skip(report: &mut MetricReport, key: &str, value: Option<f64>, reason: &str) -> Result<()> {
    match value {
        Some(v) => report.set(key, v),
        None => {
            report.skip(key, reason);
            Ok(())
        }
    }
}

fn motion(bundle: &SequenceBundle, cfg: &ProtocolConfig, report: &mut MetricReport) -> Result<()> {
    let (Some(pj), Some(gj)) = (&bundle.pred.joints, &bundle.gt.joints) else {
        let reason = if bundle.gt.joints.is_none() {
            "ground-truth joints missing"
        } else {
            "predicted joints missing"
        };
        for k in MOTION_KEYS.into_iter().chain(["jitter_10m_s3"]) {
            report.skip(k, reason);
        }
        if bundle.pred.joints.is_some() {
            jitter(bundle, report)?;
        }
        return Ok(());
    };
    let n = bundle.persons();

    let pred_inst = instances(pj);
    let gt_inst = instances(gj);
    let pa: Vec<Result<Option<f64>>> = pred_inst
        .par_iter()
        .zip(&gt_inst)
        .map(|(p, g)| {
            optional(umeyama_align(p, g, true).map(|t| {
                let m = t.apply_all(p);
                m.iter().zip(g).map(|(a, b)| (a - b).norm()).sum::<f64>() / g.len() as f64
            }))
        })
        .collect();
    let mut pa_vals = Vec::new();
    for v in pa {
        if let Some(v) = v? {
            pa_vals.push((M_TO_MM * v, 1));
        }
    }
    set_or_skip(report, "pa_mpjpe_mm", weighted_mean(&pa_vals), "every frame is degenerate")?;

    let vertices = match (&bundle.pred.vertices, &bundle.gt.vertices) {
        (Some(pv), Some(gv)) => Some((instances(pv), instances(gv))),
        _ => None,
    };
    let (mpjpe, pve) = mpjpe_pve(
        &pred_inst,
        &gt_inst,
        vertices.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())),
        cfg.root_centered,
    )?;
    report.set("mpjpe_mm", mpjpe)?;
    set_or_skip(report, "pve_mm", pve, "vertices missing")?;

    if bundle.frames() < 2 {
        for k in ["wa_mpjpe_mm", "w_mpjpe_mm", "rte_pct"] {
            report.skip(k, "fewer than two frames");
        }
    } else {
        let seg = segment_metrics(pj, gj, n, cfg.segment_length)?;
        set_or_skip(report, "wa_mpjpe_mm", weighted_mean(&seg.wa), "every segment is degenerate")?;
        set_or_skip(report, "w_mpjpe_mm", weighted_mean(&seg.w), "every segment is degenerate")?;
        set_or_skip(
            report,
            "rte_pct",
            weighted_mean(&seg.rte),
            "every segment has a stationary or degenerate root trajectory",
        )?;
        report.source.insert("segments".into(), json!(seg.segments));
    }
    jitter(bundle, report)
}

fn jitter(bundle: &SequenceBundle, report: &mut MetricReport) -> Result<()> {
    let pj = bundle.pred.joints.as_ref().expect("caller checked");
    let mut sum = 0.0;
    let mut count = 0;
    for n in 0..bundle.persons() {
        let (s, c) = jerk_sums(&person_sequence(pj, n))?;
        sum += s;
        count += c;
    }
    let value = (count > 0).then(|| sum / count as f64 * jerk_scale(bundle.meta.fps));
    set_or_skip(report, "jitter_10m_s3", value, "fewer than four frames")
}

/// Ground model for the configured mode.
pub fn ground_for(bundle: &SequenceBundle, mode: GroundMode) -> std::result::Result<Ground, String> {
    match mode {
        GroundMode::Plane => {
            let gv = bundle
                .gt
                .vertices
                .as_ref()
                .ok_or("ground-truth vertices missing for the ground estimate")?;
            let lowest: Vec<f64> = gv
                .iter()
                .flatten()
                .map(|f| f.iter().map(|v| v[UP_AXIS]).fold(f64::INFINITY, f64::min))
                .collect();
            estimate_ground_height(&lowest).map(Ground::Plane).map_err(|e| e.to_string())
        }
        GroundMode::Points => {
            let pms = bundle.pointmaps.as_ref().ok_or("world pointmaps missing for the point ground")?;
            let pts: Vec<Vector3<f64>> = pms.iter().flat_map(|p| p.valid_points().copied()).collect();
            GroundPoints::new(&pts).map(Ground::Points).map_err(|e| e.to_string())
        }
    }
}

fn physical(bundle: &SequenceBundle, cfg: &ProtocolConfig, report: &mut MetricReport) -> Result<()> {
    let skip_all = |report: &mut MetricReport, reason: &str| {
        for k in PLAUSIBILITY_KEYS.into_iter().chain(["foot_sliding_mm"]) {
            report.skip(k, reason);
        }
    };
    let Some(pv) = &bundle.pred.vertices else {
        skip_all(report, "predicted vertices missing");
        return Ok(());
    };
    let ground = match ground_for(bundle, cfg.ground_mode) {
        Ok(g) => g,
        Err(reason) => {
            skip_all(report, &reason);
            return Ok(());
        }
    };
    if let Ground::Plane(h) = ground {
        report.source.insert("ground_height_m".into(), json!(h));
    }
    let p = plausibility(&instances(pv), &ground, cfg.tolerance_m)?;
    report.set("coll_pct", p.coll_pct)?;
    report.set("pen_cm", p.pen_cm)?;
    report.set("float_cm", p.float_cm)?;
    report.set("pen_max_cm", p.pen_max_cm)?;

    let feet = &bundle.template.foot_vertex_ids;
    if feet.is_empty() {
        report.skip("foot_sliding_mm", "template has no foot vertices");
        return Ok(());
    }
    let mut sum = 0.0;
    let mut pairs = 0;
    for n in 0..bundle.persons() {
        let (s, c) = sliding_sums(&person_sequence(pv, n), feet, &ground, cfg.foot_contact_tol_m)?;
        sum += s;
        pairs += c;
    }
    set_or_skip(
        report,
        "foot_sliding_mm",
        (pairs > 0).then(|| M_TO_MM * sum / pairs as f64),
        "no foot contact in consecutive frames",
    )
}

fn contact(
    bundle: &SequenceBundle,
    cfg: &ProtocolConfig,
    geo: Option<&GeoTemplate>,
    report: &mut MetricReport,
) -> Result<()> {
    let (Some(gt), Some(pred)) = (&bundle.contact_gt, &bundle.contact_pred) else {
        let reason = if bundle.contact_gt.is_none() {
            "ground-truth contact labels missing"
        } else {
            "predicted contact probabilities missing"
        };
        for k in CONTACT_KEYS {
            report.skip(k, reason);
        }
        return Ok(());
    };
    let labels: Vec<_> = pred.iter().map(|p| binarize(p, cfg.contact_threshold)).collect();
    let mut conf = Confusion::default();
    for (p, g) in labels.iter().zip(gt) {
        for (pr, gr) in p.rows().into_iter().zip(g.rows()) {
            conf.add_labels(&pr.to_vec(), &gr.to_vec())?;
        }
    }
    let prf = conf.prf();
    report.set("contact_precision", prf.precision)?;
    report.set("contact_recall", prf.recall)?;
    report.set("contact_f1", prf.f1)?;

    let owned;
    let geo = match geo {
        Some(g) => g,
        None => {
            owned = GeoTemplate::new(&bundle.template.rest_vertices)?;
            &owned
        }
    };
    let pairs: Vec<(Vec<u8>, Vec<u8>)> = labels
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| {
            p.rows()
                .into_iter()
                .zip(g.rows())
                .map(|(a, b)| (a.to_vec(), b.to_vec()))
                .collect::<Vec<_>>()
        })
        .collect();
    let errs: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|(p, g)| geo_contact_error(p, g, geo, cfg.geo_one_sided))
        .collect();
    let count = errs.len();
    let mut total = 0.0;
    for e in errs {
        total += e?;
    }
    report.set("geo_contact_error_cm", total / count as f64)
}

/// Runs every metric the bundle has inputs for; the rest are recorded as
/// skipped with a reason.
pub fn evaluate_bundle(bundle: &SequenceBundle, cfg: &ProtocolConfig) -> Result<MetricReport> {
    evaluate_with(bundle, cfg, None)
}

/// As [`evaluate_bundle`], reusing a prepared contact template.
pub fn evaluate_with(bundle: &SequenceBundle, cfg: &ProtocolConfig, geo: Option<&GeoTemplate>) -> Result<MetricReport> {
    cfg.validate()?;
    bundle.validate()?;
    let mut report = MetricReport::new(cfg.clone());
    report.source.insert("bundle".into(), json!(bundle.meta.name));
    report.source.insert("frames".into(), json!(bundle.frames()));
    report.source.insert("persons".into(), json!(bundle.persons()));
    report.source.insert("fps".into(), json!(bundle.meta.fps));
    report.source.insert("tau_m".into(), json!(bundle.meta.tau));
    motion(bundle, cfg, &mut report)?;
    physical(bundle, cfg, &mut report)?;
    contact(bundle, cfg, geo, &mut report)?;
    Ok(report)
}

/// Contact metrics only.
pub fn evaluate_contact(bundle: &SequenceBundle, cfg: &ProtocolConfig) -> Result<MetricReport> {
    cfg.validate()?;
    bundle.validate()?;
    let mut report = MetricReport::new(cfg.clone());
    report.source.insert("bundle".into(), json!(bundle.meta.name));
    contact(bundle, cfg, None, &mut report)?;
    Ok(report)
}
