//! `contact4d` command-line interface.
//!
//! Exit codes: 0 on success, 1 on a domain failure (a JSON record
//! `{"kind", "message"}` goes to standard error), 2 on a usage error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use contact4d::demo::{default_prior, predict_bundle};
use contact4d::io::{load_weights, save_weights, RunConfig, SequenceBundle};
use contact4d::metrics::{canonical_json, evaluate_bundle, evaluate_contact, MetricReport};
use contact4d::pipeline::{
    body_to_row, grad_check, Ablation, GradCheckFixture, GradCheckOptions, GradLoss, PipelineWeights, WeightGroup,
};
use contact4d::synth::gen_sequence;
use contact4d::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "contact4d", version, about = "Contact-aware human-scene reconstruction toolkit")]
struct Cli {
    /// Worker threads; only work across bundles is split between them.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic bundles into `OUT/<name>/`.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write freshly initialised pipeline weights here.
        #[arg(long, value_name = "DIR")]
        init_weights: Option<PathBuf>,
    },
    /// Evaluate the prediction channel of one or more bundles.
    Eval(EvalArgs),
    /// Contact metrics only.
    ContactEval(EvalArgs),
    /// Run the pipeline online over a bundle and write a prediction bundle.
    Demo {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    GradCheck {
        #[arg(long)]
        weights: PathBuf,
        /// `all` or a learnable group name.
        #[arg(long, default_value = "all")]
        group: String,
        /// Fixture seed; `CONTACT4D_SEED` overrides it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate the ablation ladder against the full configuration.
    Ablate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    /// Bundle directories; with more than one, `--report` and `--csv` name directories.
    #[arg(long, required = true, num_args = 1..)]
    bundle: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.with_env_seed()
}

fn print_json(v: &Value) {
    println!("{}", canonical_json(v));
}

fn synth(config: Option<&Path>, out: &Path, init_weights: Option<&Path>) -> Result<()> {
    let cfg = run_config(config)?;
    let template = cfg.synth.template.build()?;
    let bundles: Vec<Result<PathBuf>> = (0..cfg.synth.bundles as u64)
        .into_par_iter()
        .map(|k| {
            let mut c = cfg.synth.clone();
            c.seed = cfg.synth.seed.wrapping_add(k);
            let bundle = gen_sequence(&c, &template)?;
            let dir = out.join(&bundle.meta.name);
            bundle.save(&dir)?;
            Ok(dir)
        })
        .collect();
    for dir in bundles {
        print_json(&json!({"bundle": dir?.display().to_string()}));
    }
    if let Some(dir) = init_weights {
        save_weights(&PipelineWeights::init(&cfg.pipeline)?, dir)?;
        print_json(&json!({"weights": dir.display().to_string()}));
    }
    Ok(())
}

fn write_report(report: &MetricReport, json_path: &Path, csv_path: Option<&Path>) -> Result<()> {
    report.write_json(BufWriter::new(File::create(json_path)?))?;
    if let Some(p) = csv_path {
        report.write_csv(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn eval(args: &EvalArgs, contact_only: bool) -> Result<()> {
    let cfg = run_config(args.config.as_deref())?;
    let many = args.bundle.len() > 1;
    if many {
        std::fs::create_dir_all(&args.report)?;
        if let Some(c) = &args.csv {
            std::fs::create_dir_all(c)?;
        }
    }
    let results: Vec<Result<()>> = args
        .bundle
        .par_iter()
        .map(|dir| {
            let bundle = SequenceBundle::load(dir)?;
            let report = if contact_only {
                evaluate_contact(&bundle, &cfg.protocol)?
            } else {
                evaluate_bundle(&bundle, &cfg.protocol)?
            };
            if many {
                let stem = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| bundle.meta.name.clone());
                let csv = args.csv.as_ref().map(|c| c.join(format!("{stem}.csv")));
                write_report(&report, &args.report.join(format!("{stem}.json")), csv.as_deref())
            } else {
                write_report(&report, &args.report, args.csv.as_deref())
            }
        })
        .collect();
    results.into_iter().collect()
}

fn demo(bundle: &Path, weights: &Path, out: &Path) -> Result<()> {
    let bundle = SequenceBundle::load(bundle)?;
    let w = load_weights(weights)?;
    let start = Instant::now();
    let pred = predict_bundle(&bundle, &w, &default_prior(&w), Ablation::FULL)?;
    let secs = start.elapsed().as_secs_f64();
    pred.save(out)?;
    let frames = pred.meta.frames;
    print_json(&json!({"frames": frames, "seconds": secs, "fps": frames as f64 / secs.max(1e-12)}));
    Ok(())
}

fn grad_check_cmd(weights: &Path, group: &str, seed: u64) -> Result<()> {
    let seed = match std::env::var(contact4d::io::SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("{} must be an unsigned integer", contact4d::io::SEED_ENV)))?,
        Err(_) => seed,
    };
    let w = load_weights(weights)?;
    let groups: Vec<WeightGroup> = if group == "all" {
        WeightGroup::learnable().collect()
    } else {
        match WeightGroup::from_name(group) {
            Some(g) if !g.frozen() => vec![g],
            _ => return Err(Error::InvalidArgument(format!("`{group}` is not a learnable weight group"))),
        }
    };
    let fixture = GradCheckFixture::synthetic(&w, seed)?;
    let opts = GradCheckOptions { seed, ..Default::default() };
    let mut failed = Vec::new();
    for g in groups {
        let r = grad_check(GradLoss::Training, &w, g, &fixture, &opts)?;
        print_json(&serde_json::to_value(&r)?);
        if !r.passed {
            failed.push(r.group);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "relative gradient error above {} in: {}",
            opts.tolerance,
            failed.join(", ")
        )))
    }
}

fn body_bits(b: &SequenceBundle) -> Vec<u64> {
    let mut bits = Vec::new();
    let pred = &b.pred;
    for f in pred.params.iter().flatten() {
        for p in f {
            bits.extend(body_to_row(p).iter().map(|x| x.to_bits()));
        }
    }
    for track in [&pred.joints, &pred.vertices].into_iter().flatten() {
        for v in track.iter().flatten().flatten() {
            bits.extend(v.iter().map(|x| x.to_bits()));
        }
    }
    bits
}

fn ablate(bundle: &Path, weights: &Path, config: Option<&Path>, report: Option<&Path>) -> Result<()> {
    let cfg = run_config(config)?;
    let bundle = SequenceBundle::load(bundle)?;
    let w = load_weights(weights)?;
    let mut zeroed = w.clone();
    zeroed.zero_residual();
    let prior = default_prior(&w);
    let runs: [(&str, &PipelineWeights, Ablation); 5] = [
        ("full", &w, Ablation::FULL),
        ("parallel_readout", &w, Ablation::PARALLEL_READOUT),
        ("zero_residual", &zeroed, Ablation::FULL),
        ("no_geometry", &w, Ablation::NO_GEOMETRY),
        ("no_momentum", &w, Ablation::NO_MOMENTUM),
    ];
    let mut metrics = BTreeMap::new();
    let mut bits = BTreeMap::new();
    for (name, weights, ablation) in runs {
        let pred = predict_bundle(&bundle, weights, &prior, ablation)?;
        let r = evaluate_bundle(&pred, &cfg.protocol)?;
        bits.insert(name, body_bits(&pred));
        metrics.insert(name, r.metrics);
    }
    let full = metrics["full"].clone();
    let mut deltas = BTreeMap::new();
    for (name, m) in &metrics {
        if *name == "full" {
            continue;
        }
        let d: BTreeMap<&String, f64> = m
            .iter()
            .filter_map(|(k, v)| full.get(k).map(|f| (k, v - f)))
            .collect();
        deltas.insert(*name, d);
    }
    let out = json!({
        "bundle": bundle.meta.name,
        "runs": metrics,
        "deltas_vs_full": deltas,
        "zero_residual_matches_parallel_readout": bits["zero_residual"] == bits["parallel_readout"],
    });
    let mut text = canonical_json(&out);
    text.push('\n');
    match report {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { config, out, init_weights } => synth(config.as_deref(), out, init_weights.as_deref()),
        Command::Eval(args) => eval(args, false),
        Command::ContactEval(args) => eval(args, true),
        Command::Demo { bundle, weights, out } => demo(bundle, weights, out),
        Command::GradCheck { weights, group, seed } => grad_check_cmd(weights, group, *seed),
        Command::Ablate { bundle, weights, config, report } => {
            ablate(bundle, weights, config.as_deref(), report.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("{}", canonical_json(&json!({"kind": "invalid_argument", "message": e.to_string()})));
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", canonical_json(&json!({"kind": e.kind(), "message": e.to_string()})));
            ExitCode::from(1)
        }
    }
}
