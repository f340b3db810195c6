//! Brute-force recomputation of every metric on small bundles.
//!
//! Nothing here calls into the metric implementations: alignment uses the
//! quaternion eigenvector method followed by random search, nearest points
//! are full scans and every average is an explicit loop.

use nalgebra::{Matrix3, Matrix4, Quaternion, SymmetricEigen, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::SequenceBundle;
use crate::metrics::{GroundMode, MetricReport, ProtocolConfig, SimilarityTransform};
use crate::{Error, Result};

pub const MAX_FRAMES: usize = 10;
pub const MAX_JOINTS: usize = 4;
pub const MAX_VERTICES: usize = 20;
/// Random transforms tried per alignment.
pub const RANDOM_TRIALS: usize = 10_000;
/// Relative margin a random transform must win by to replace the closed form.
pub const BEAT_MARGIN: f64 = 1e-9;

/// Sum of squared residuals of `x -> s R x + t`.
fn residual(s: f64, r: &Matrix3<f64>, t: &Vector3<f64>, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let mut acc = 0.0;
    for i in 0..src.len() {
        let m = s * (r * src[i]) + t;
        let d = m - dst[i];
        acc += d.x * d.x + d.y * d.y + d.z * d.z;
    }
    acc
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for x in p {
        c += x;
    }
    c / p.len() as f64
}

/// Quaternion eigenvector alignment. `None` when the cross-covariance has
/// rank below two (all 2x2 minors vanish relative to its magnitude).
pub fn horn_align(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Option<SimilarityTransform> {
    let (cs, cd) = (centroid(src), centroid(dst));
    let mut s = Matrix3::<f64>::zeros();
    let mut var = 0.0;
    for i in 0..src.len() {
        let (a, b) = (src[i] - cs, dst[i] - cd);
        for r in 0..3 {
            for c in 0..3 {
                s[(r, c)] += a[r] * b[c];
            }
        }
        var += a.norm_squared();
    }
    let frob2 = s.iter().map(|x| x * x).sum::<f64>();
    let mut minors2 = 0.0;
    for (r1, r2) in [(0, 1), (0, 2), (1, 2)] {
        for (c1, c2) in [(0, 1), (0, 2), (1, 2)] {
            let m = s[(r1, c1)] * s[(r2, c2)] - s[(r1, c2)] * s[(r2, c1)];
            minors2 += m * m;
        }
    }
    if frob2 == 0.0 || var == 0.0 || minors2.sqrt() <= 1e-12 * frob2 {
        return None;
    }
    if src == dst {
        return Some(SimilarityTransform::identity());
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let mut best = 0;
    for k in 1..4 {
        if eig.eigenvalues[k] > eig.eigenvalues[best] {
            best = k;
        }
    }
    let q = eig.eigenvectors.column(best);
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner();
    let scale = if with_scale {
        let mut num = 0.0;
        for i in 0..src.len() {
            num += (dst[i] - cd).dot(&(rot * (src[i] - cs)));
        }
        num / var
    } else {
        1.0
    };
    Some(SimilarityTransform {
        scale,
        rotation: rot,
        translation: cd - scale * (rot * cs),
    })
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

fn small_rotation(rng: &mut ChaCha8Rng, eps: f64) -> Matrix3<f64> {
    let w: [f64; 3] = std::array::from_fn(|_| eps * { let z: f64 = StandardNormal.sample(rng); z });
    UnitQuaternion::from_scaled_axis(Vector3::new(w[0], w[1], w[2]))
        .to_rotation_matrix()
        .into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub base_residual: f64,
    pub best_residual: f64,
    pub trials: usize,
    /// Candidates that beat the base by more than the relative margin.
    pub beaten: usize,
}

/// Random search around and away from `base`. Half the candidates are
/// uniform rotations with random scale and offset, the other half are
/// perturbations of `base` at scales from 1e-1 down to 1e-6.
pub fn random_search(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
    base: &SimilarityTransform,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> (SimilarityTransform, SearchOutcome) {
    let base_res = residual(base.scale, &base.rotation, &base.translation, src, dst);
    let mut best = *base;
    let mut best_res = base_res;
    let mut beaten = 0;
    let (cs, cd) = (centroid(src), centroid(dst));
    let spread = dst.iter().map(|d| (d - cd).norm()).fold(0.0, f64::max).max(1e-3);
    for k in 0..trials {
        let cand = if k % 2 == 0 {
            let r = random_rotation(rng);
            let s = if with_scale { rng.random_range(-2.0f64..2.0).exp() } else { 1.0 };
            let jitter = Vector3::from_fn(|_, _| rng.random_range(-spread..spread));
            SimilarityTransform {
                scale: s,
                rotation: r,
                translation: cd - s * (r * cs) + jitter,
            }
        } else {
            let eps = 10f64.powi(-(((k / 2) % 6 + 1) as i32));
            let r = base.rotation * small_rotation(rng, eps);
            let s = if with_scale {
                base.scale * (1.0 + eps * { let z: f64 = StandardNormal.sample(rng); z })
            } else {
                1.0
            };
            let dt = Vector3::from_fn(|_, _| eps * spread * { let z: f64 = StandardNormal.sample(rng); z });
            SimilarityTransform {
                scale: s,
                rotation: r,
                translation: base.translation + dt,
            }
        };
        let res = residual(cand.scale, &cand.rotation, &cand.translation, src, dst);
        if res < base_res - BEAT_MARGIN * base_res.max(1e-12) {
            beaten += 1;
        }
        if res < best_res - BEAT_MARGIN * best_res.max(1e-12) {
            best = cand;
            best_res = res;
        }
    }
    (
        best,
        SearchOutcome {
            base_residual: base_res,
            best_residual: best_res,
            trials,
            beaten,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub report: MetricReport,
    pub alignments: usize,
    pub trials: usize,
    /// Alignments where random search beat the closed form.
    pub beaten: usize,
}

struct Aligner {
    trials: usize,
    seed: u64,
}

impl Aligner {
    /// Closed form refined by random search; `None` when degenerate.
    /// The flag tells whether the search beat the closed form.
    fn fit(&self, key: u64, src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Option<(SimilarityTransform, bool)> {
        let base = horn_align(src, dst, with_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (best, out) = random_search(src, dst, with_scale, &base, self.trials, &mut rng);
        Some((best, out.beaten > 0))
    }
}

fn mean_mapped_error(tr: &SimilarityTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let mut total = 0.0;
    for i in 0..src.len() {
        let p = tr.scale * (tr.rotation * src[i]) + tr.translation;
        total += (p - dst[i]).norm();
    }
    total / src.len() as f64
}

fn percentile10(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    let rank = 0.1 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = if lo + 1 < v.len() { lo + 1 } else { lo };
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

enum BruteGround {
    Plane(f64),
    Points(Vec<Vector3<f64>>),
}

impl BruteGround {
    fn height(&self, v: &Vector3<f64>) -> f64 {
        match self {
            BruteGround::Plane(h) => v.z - h,
            BruteGround::Points(pts) => {
                let mut best = (f64::INFINITY, 0.0);
                for p in pts {
                    let d = (p.x - v.x) * (p.x - v.x) + (p.y - v.y) * (p.y - v.y);
                    if d < best.0 {
                        best = (d, p.z);
                    }
                }
                v.z - best.1
            }
        }
    }
}

fn mean_of(values: &[(f64, usize)]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0usize;
    for (v, w) in values {
        num += v * *w as f64;
        den += w;
    }
    if den == 0 {
        None
    } else {
        Some(num / den as f64)
    }
}

fn put(report: &mut MetricReport, key: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) => report.set(key, x),
        None => {
            report.skip(key, "not computable");
            Ok(())
        }
    }
}

#[derive(Default)]
struct Tally {
    alignments: usize,
    beaten: usize,
}

impl Tally {
    fn note(&mut self, fit: &Option<(SimilarityTransform, bool)>) {
        if let Some((_, b)) = fit {
            self.alignments += 1;
            self.beaten += usize::from(*b);
        }
    }
}

struct Segment {
    wa: Option<(SimilarityTransform, bool)>,
    w: Option<(SimilarityTransform, bool)>,
    rte: Option<(SimilarityTransform, bool)>,
    wa_err: Option<f64>,
    w_err: Option<f64>,
    rte_pct: Option<f64>,
    len: usize,
}

fn brute_motion(
    bundle: &SequenceBundle,
    cfg: &ProtocolConfig,
    aligner: &Aligner,
    report: &mut MetricReport,
    tally: &mut Tally,
) -> Result<()> {
    let (Some(pj), Some(gj)) = (&bundle.pred.joints, &bundle.gt.joints) else {
        for k in ["wa_mpjpe_mm", "w_mpjpe_mm", "rte_pct", "pa_mpjpe_mm", "mpjpe_mm"] {
            report.skip(k, "joints missing");
        }
        return Ok(());
    };
    let (tn, nn) = (bundle.meta.frames, bundle.meta.persons);

    let jobs: Vec<(usize, usize)> = (0..tn).flat_map(|t| (0..nn).map(move |n| (t, n))).collect();
    let fits: Vec<Option<(SimilarityTransform, bool)>> = jobs
        .par_iter()
        .map(|&(t, n)| aligner.fit((t * 64 + n) as u64, &pj[t][n], &gj[t][n], true))
        .collect();
    let mut vals = Vec::new();
    for (fit, &(t, n)) in fits.iter().zip(&jobs) {
        tally.note(fit);
        if let Some((tr, _)) = fit {
            vals.push((1000.0 * mean_mapped_error(tr, &pj[t][n], &gj[t][n]), 1));
        }
    }
    put(report, "pa_mpjpe_mm", mean_of(&vals))?;

    let centred = |a: &[Vector3<f64>], b: &[Vector3<f64>], ra: Vector3<f64>, rb: Vector3<f64>| {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += ((a[i] - ra) - (b[i] - rb)).norm();
        }
        s / a.len() as f64
    };
    let root = |x: &Vec<Vector3<f64>>| if cfg.root_centered { x[0] } else { Vector3::zeros() };
    let verts = match (&bundle.pred.vertices, &bundle.gt.vertices) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let mut sj = 0.0;
    let mut sv = 0.0;
    for t in 0..tn {
        for n in 0..nn {
            let (rp, rg) = (root(&pj[t][n]), root(&gj[t][n]));
            sj += centred(&pj[t][n], &gj[t][n], rp, rg);
            if let Some((pv, gv)) = verts {
                sv += centred(&pv[t][n], &gv[t][n], rp, rg);
            }
        }
    }
    let count = (tn * nn) as f64;
    report.set("mpjpe_mm", 1000.0 * sj / count)?;
    put(report, "pve_mm", verts.map(|_| 1000.0 * sv / count))?;

    if tn < 2 {
        for k in ["wa_mpjpe_mm", "w_mpjpe_mm", "rte_pct"] {
            report.skip(k, "fewer than two frames");
        }
        return Ok(());
    }
    let mut segs = Vec::new();
    let mut start = 0;
    while start < tn {
        let end = if start + cfg.segment_length < tn { start + cfg.segment_length } else { tn };
        if end - start >= 2 {
            segs.push((start, end));
        }
        start = end;
    }
    let jobs: Vec<(usize, usize, usize)> = (0..nn).flat_map(|n| segs.iter().map(move |&(a, b)| (n, a, b))).collect();
    let results: Vec<Segment> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(n, a, b))| {
            let key = 10_000 + 4 * k as u64;
            let mut ps = Vec::new();
            let mut gs = Vec::new();
            for t in a..b {
                ps.extend(pj[t][n].iter().copied());
                gs.extend(gj[t][n].iter().copied());
            }
            let two = 2 * pj[a][n].len();
            let rp: Vec<Vector3<f64>> = (a..b).map(|t| pj[t][n][0]).collect();
            let rg: Vec<Vector3<f64>> = (a..b).map(|t| gj[t][n][0]).collect();
            let mut path = 0.0;
            for t in 1..rg.len() {
                path += (rg[t] - rg[t - 1]).norm();
            }
            let wa = aligner.fit(key, &ps, &gs, true);
            let w = aligner.fit(key + 1, &ps[..two], &gs[..two], false);
            let rte = if path > 0.0 { aligner.fit(key + 2, &rp, &rg, false) } else { None };
            Segment {
                wa_err: wa.as_ref().map(|(tr, _)| 1000.0 * mean_mapped_error(tr, &ps, &gs)),
                w_err: w.as_ref().map(|(tr, _)| 1000.0 * mean_mapped_error(tr, &ps, &gs)),
                rte_pct: rte.as_ref().map(|(tr, _)| 100.0 * mean_mapped_error(tr, &rp, &rg) / path),
                wa,
                w,
                rte,
                len: b - a,
            }
        })
        .collect();
    let (mut wa, mut w, mut rte) = (Vec::new(), Vec::new(), Vec::new());
    for s in &results {
        tally.note(&s.wa);
        tally.note(&s.w);
        tally.note(&s.rte);
        wa.extend(s.wa_err.map(|v| (v, s.len)));
        w.extend(s.w_err.map(|v| (v, s.len)));
        rte.extend(s.rte_pct.map(|v| (v, s.len)));
    }
    put(report, "wa_mpjpe_mm", mean_of(&wa))?;
    put(report, "w_mpjpe_mm", mean_of(&w))?;
    put(report, "rte_pct", mean_of(&rte))
}

fn brute_jitter(bundle: &SequenceBundle, report: &mut MetricReport) -> Result<()> {
    let Some(pj) = &bundle.pred.joints else {
        report.skip("jitter_10m_s3", "joints missing");
        return Ok(());
    };
    let (tn, nn) = (bundle.meta.frames, bundle.meta.persons);
    let mut sum = 0.0;
    let mut count = 0usize;
    for n in 0..nn {
        for t in 3..tn {
            for k in 0..pj[t][n].len() {
                let d = pj[t][n][k] - pj[t - 1][n][k] * 3.0 + pj[t - 2][n][k] * 3.0 - pj[t - 3][n][k];
                sum += (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
                count += 1;
            }
        }
    }
    let fps = bundle.meta.fps;
    put(report, "jitter_10m_s3", (count > 0).then(|| sum / count as f64 * fps * fps * fps / 10.0))
}

fn brute_physical(bundle: &SequenceBundle, cfg: &ProtocolConfig, report: &mut MetricReport) -> Result<()> {
    let keys = ["coll_pct", "pen_cm", "float_cm", "pen_max_cm", "foot_sliding_mm"];
    let Some(pv) = &bundle.pred.vertices else {
        for k in keys {
            report.skip(k, "vertices missing");
        }
        return Ok(());
    };
    let ground = match cfg.ground_mode {
        GroundMode::Plane => match &bundle.gt.vertices {
            Some(gv) => {
                let mut lows = Vec::new();
                for f in gv {
                    for body in f {
                        let mut low = f64::INFINITY;
                        for v in body {
                            if v.z < low {
                                low = v.z;
                            }
                        }
                        lows.push(low);
                    }
                }
                BruteGround::Plane(percentile10(&lows))
            }
            None => {
                for k in keys {
                    report.skip(k, "ground unavailable");
                }
                return Ok(());
            }
        },
        GroundMode::Points => match &bundle.pointmaps {
            Some(pms) => {
                let mut pts = Vec::new();
                for pm in pms {
                    for (p, ok) in pm.points().iter().zip(pm.valid_mask()) {
                        if *ok {
                            pts.push(*p);
                        }
                    }
                }
                BruteGround::Points(pts)
            }
            None => {
                for k in keys {
                    report.skip(k, "ground unavailable");
                }
                return Ok(());
            }
        },
    };
    let tol = cfg.tolerance_m;
    let (mut pen_frames, mut rest_frames) = (0usize, 0usize);
    let (mut pen_sum, mut float_sum, mut pen_max) = (0.0, 0.0, 0.0f64);
    for f in pv {
        for body in f {
            let d: Vec<f64> = body.iter().map(|v| ground.height(v)).collect();
            let below: Vec<f64> = d.iter().copied().filter(|x| *x < -tol).collect();
            if below.is_empty() {
                let mut low = f64::INFINITY;
                for x in &d {
                    low = low.min(*x);
                }
                rest_frames += 1;
                if low - tol > 0.0 {
                    float_sum += low - tol;
                }
            } else {
                pen_frames += 1;
                let mut s = 0.0;
                for x in &below {
                    s += -x;
                    if -x > pen_max {
                        pen_max = -x;
                    }
                }
                pen_sum += s / below.len() as f64;
            }
        }
    }
    let total = (pen_frames + rest_frames) as f64;
    report.set("coll_pct", 100.0 * pen_frames as f64 / total)?;
    report.set("pen_cm", if pen_frames > 0 { 100.0 * pen_sum / pen_frames as f64 } else { 0.0 })?;
    report.set("float_cm", if rest_frames > 0 { 100.0 * float_sum / rest_frames as f64 } else { 0.0 })?;
    report.set("pen_max_cm", 100.0 * pen_max)?;

    let feet = &bundle.template.foot_vertex_ids;
    let mut slide = 0.0;
    let mut pairs = 0usize;
    for n in 0..bundle.meta.persons {
        for t in 1..bundle.meta.frames {
            for &i in feet {
                let (a, b) = (pv[t - 1][n][i], pv[t][n][i]);
                if ground.height(&a) <= cfg.foot_contact_tol_m && ground.height(&b) <= cfg.foot_contact_tol_m {
                    slide += ((b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y)).sqrt();
                    pairs += 1;
                }
            }
        }
    }
    put(report, "foot_sliding_mm", (pairs > 0 && !feet.is_empty()).then(|| 1000.0 * slide / pairs as f64))
}

fn brute_contact(bundle: &SequenceBundle, cfg: &ProtocolConfig, report: &mut MetricReport) -> Result<()> {
    let (Some(gt), Some(pred)) = (&bundle.contact_gt, &bundle.contact_pred) else {
        for k in ["contact_precision", "contact_recall", "contact_f1", "geo_contact_error_cm"] {
            report.skip(k, "contact missing");
        }
        return Ok(());
    };
    let tpl = &bundle.template.rest_vertices;
    let mut diameter = 0.0f64;
    for a in tpl {
        for b in tpl {
            diameter = diameter.max((a - b).norm());
        }
    }
    let nearest = |q: usize, set: &[usize]| {
        let mut best = f64::INFINITY;
        for &i in set {
            best = best.min((tpl[q] - tpl[i]).norm());
        }
        best
    };
    let directed = |from: &[usize], to: &[usize]| {
        if from.is_empty() {
            0.0
        } else if to.is_empty() {
            diameter
        } else {
            from.iter().map(|&q| nearest(q, to)).sum::<f64>() / from.len() as f64
        }
    };
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let mut geo = 0.0;
    let mut instances = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for n in 0..bundle.meta.persons {
            let (mut pp, mut gp, mut fps, mut fns) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for v in 0..bundle.meta.vertices {
                let yes = p[[n, v]] >= cfg.contact_threshold;
                let truth = g[[n, v]] != 0;
                if yes {
                    pp.push(v);
                }
                if truth {
                    gp.push(v);
                }
                match (yes, truth) {
                    (true, true) => tp += 1,
                    (true, false) => {
                        fp += 1;
                        fps.push(v)
                    }
                    (false, true) => {
                        fneg += 1;
                        fns.push(v)
                    }
                    (false, false) => {}
                }
            }
            geo += if cfg.geo_one_sided {
                directed(&pp, &gp)
            } else {
                (directed(&fps, &gp) + directed(&fns, &pp)) / 2.0
            };
            instances += 1;
        }
    }
    let precision = if tp + fp == 0 { if tp + fneg == 0 { 1.0 } else { 0.0 } } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { if tp + fp == 0 { 1.0 } else { 0.0 } } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    report.set("contact_precision", precision)?;
    report.set("contact_recall", recall)?;
    report.set("contact_f1", f1)?;
    report.set("geo_contact_error_cm", 100.0 * geo / instances as f64)
}

/// Recomputes every metric of the bundle evaluation with naive loops.
/// Bundles are limited to 10 frames, 4 joints and 20 vertices.
pub fn brute_oracles(bundle: &SequenceBundle, cfg: &ProtocolConfig) -> Result<OracleReport> {
    brute_oracles_with(bundle, cfg, RANDOM_TRIALS, 0)
}

/// As [`brute_oracles`] with a chosen number of random trials and seed.
pub fn brute_oracles_with(bundle: &SequenceBundle, cfg: &ProtocolConfig, trials: usize, seed: u64) -> Result<OracleReport> {
    let m = &bundle.meta;
    if m.frames > MAX_FRAMES || m.joints > MAX_JOINTS || m.vertices > MAX_VERTICES {
        return Err(Error::arg(format!(
            "brute oracles take at most {MAX_FRAMES} frames, {MAX_JOINTS} joints and {MAX_VERTICES} vertices; got {}, {}, {}",
            m.frames, m.joints, m.vertices
        )));
    }
    bundle.validate()?;
    cfg.validate()?;
    let aligner = Aligner { trials, seed };
    let mut report = MetricReport::new(cfg.clone());
    let mut tally = Tally::default();
    brute_motion(bundle, cfg, &aligner, &mut report, &mut tally)?;
    brute_jitter(bundle, &mut report)?;
    brute_physical(bundle, cfg, &mut report)?;
    brute_contact(bundle, cfg, &mut report)?;
    Ok(OracleReport {
        report,
        alignments: tally.alignments,
        trials,
        beaten: tally.beaten,
    })
}
