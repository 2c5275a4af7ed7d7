//! The `aliad` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aliad_core::contrastive::LossKind;
use aliad_core::data::{drop_views_rates, drop_views_uniform, gen_synthetic, rates_from_map, SyntheticSpec};
use aliad_core::eval::{mean_std, subset_sweep, ExpertUsage, SweepResult};
use aliad_core::model::{train, Ablations, AliAdConfig, TrainOutcome};
use anyhow::{bail, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::bench::{self, parse_usize_list, BenchConfig};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{load_dataset, read_json, save_dataset};
use crate::logs::{read_weight_curve, write_class_weights, write_train_log, write_weight_curve};

/// A whole list parsed from one argument; the alias stops clap from
/// treating it as a repeated flag.
type Counts = Vec<usize>;

#[derive(Debug, Parser)]
#[command(name = "aliad", version, about = "Multiview classification under missing views")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a JSON generator spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate missing views.
    DropViews(DropArgs),
    /// Train a model; the best validation epoch is kept.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON model config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated ablation flags added to the config's.
        #[arg(long)]
        ablation: Option<String>,
        /// Train one run per seed into OUT/seed_<s> instead of one run into OUT.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Macro-F1 over every size-k view combination.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        /// Evaluate a seeded sample of at most N combinations.
        #[arg(long)]
        max_combos: Option<usize>,
        /// One evaluation per seed; MODEL/seed_<s> is used when it exists.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time forward+backward of the contrastive losses.
    BenchLoss {
        #[arg(long, value_delimiter = ',', default_value = "full_graph,adjusted_center")]
        losses: Vec<LossKind>,
        /// View counts: `2..9` or `2,3,5`.
        #[arg(long, default_value = "2..9", value_parser = parse_usize_list)]
        views: Counts,
        #[arg(long, default_value = "16,32,64,128", value_parser = parse_usize_list)]
        batch: Counts,
        /// Embedding size.
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 15)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Expert usage per view combination, rows in percent.
    AnalyzeExperts {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cap on multi-view rows (sampled, always keeping all views).
        #[arg(long, default_value_t = 64)]
        max_rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-epoch view weights and contrastive loss from a training log.
    AnalyzeWeights {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group(ArgGroup::new("mode").required(true).args(["uniform", "rates"])))]
pub struct DropArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop every view with probability 10^(-3/V).
    #[arg(long)]
    pub uniform: bool,
    /// JSON map from view name to drop rate.
    #[arg(long)]
    pub rates: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::DropViews(args) => drop_views(&args),
        Command::Train {
            data,
            config,
            out,
            ablation,
            seeds,
        } => train_command(&data, config.as_deref(), &out, ablation.as_deref(), seeds.as_deref()),
        Command::Eval {
            model,
            data,
            k,
            max_combos,
            seeds,
            out,
        } => eval_command(&model, &data, k, max_combos, &seeds, &out),
        Command::BenchLoss {
            losses,
            views,
            batch,
            dim,
            trials,
            warmup,
            out,
        } => {
            let cfg = BenchConfig {
                losses,
                views,
                batches: batch,
                dim,
                warmup,
                trials,
                ..BenchConfig::default()
            };
            let rows = bench::run(&cfg)?;
            bench::write_csv(&out, &rows)?;
            println!("wrote {} timings to {}", rows.len(), out.display());
            Ok(())
        }
        Command::AnalyzeExperts {
            model,
            data,
            out,
            max_rows,
            seed,
        } => analyze_experts(&model, &data, &out, max_rows, seed),
        Command::AnalyzeWeights { log, out } => {
            let curve = read_weight_curve(&log)?;
            write_weight_curve(&out, &curve)?;
            let spread = curve.spread();
            if let (Some(first), Some(last)) = (spread.first(), spread.last()) {
                println!(
                    "{} epochs; cross-view weight std {first:.4} -> {last:.4}",
                    curve.epochs.len()
                );
            }
            Ok(())
        }
    }
}

fn gen_data(spec: &Path, out: &Path) -> anyhow::Result<()> {
    let spec: SyntheticSpec = read_json(spec)?;
    let ds = gen_synthetic(&spec)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} samples x {} views to {}",
        ds.num_samples(),
        ds.num_views(),
        out.display()
    );
    Ok(())
}

fn drop_views(args: &DropArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&args.input)?;
    let dropped = match &args.rates {
        Some(path) => {
            let map: BTreeMap<String, f64> = read_json(path)?;
            let names: Vec<&str> = ds.views.iter().map(|v| v.name.as_str()).collect();
            let rates = rates_from_map(&map, &names).with_context(|| path.display().to_string())?;
            drop_views_rates(&ds, &rates, args.seed)?
        }
        None => drop_views_uniform(&ds, args.seed),
    };
    save_dataset(&dropped, &args.out)?;
    println!(
        "kept {} of {} samples; wrote {}",
        dropped.num_samples(),
        ds.num_samples(),
        args.out.display()
    );
    Ok(())
}

const VAL_TAG: u64 = 0x5641_4c;

/// Trains on `ds` with a validation holdout of `config.val_fraction` of its
/// labeled rows and writes the run directory.
pub fn train_run(ds: &aliad_core::data::Dataset, config: &AliAdConfig, out: &Path) -> anyhow::Result<TrainOutcome> {
    let seed = aliad_core::rng::derive_seed(config.seed, VAL_TAG);
    let (train_set, val) = ds.holdout_labeled(config.val_fraction, seed);
    let outcome = train(&train_set, None, val.as_ref(), config)?;
    save_checkpoint(
        &outcome.model,
        out,
        outcome.report.best_epoch,
        outcome.report.best_val_f1,
    )?;
    write_train_log(&out.join("train_log.csv"), &outcome.report.epochs)?;
    write_class_weights(&out.join("class_weights.csv"), &outcome.report.epochs)?;
    Ok(outcome)
}

fn train_command(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    ablation: Option<&str>,
    seeds: Option<&[u64]>,
) -> anyhow::Result<()> {
    let ds = load_dataset(data)?;
    let mut cfg: AliAdConfig = match config {
        Some(path) => read_json(path)?,
        None => AliAdConfig::default(),
    };
    if let Some(list) = ablation {
        for name in Ablations::parse_list(list)?.enabled() {
            cfg.ablations.enable(name)?;
        }
    }
    let runs: Vec<(AliAdConfig, PathBuf)> = match seeds {
        Some(seeds) => seeds
            .iter()
            .map(|&s| {
                (
                    AliAdConfig { seed: s, ..cfg.clone() },
                    out.join(format!("seed_{s}")),
                )
            })
            .collect(),
        None => vec![(cfg, out.to_path_buf())],
    };
    for (cfg, dir) in runs {
        let outcome = train_run(&ds, &cfg, &dir)?;
        let r = &outcome.report;
        println!(
            "{} (seed {}, {}): kept epoch {} of {}, val macro-F1 {}",
            dir.display(),
            cfg.seed,
            cfg.ablations,
            r.best_epoch,
            r.epochs.len(),
            r.best_val_f1.map_or("n/a".into(), |f| format!("{f:.4}"))
        );
    }
    Ok(())
}

fn combo_label(names: &[String], views: &[usize]) -> String {
    views.iter().map(|&v| names[v].as_str()).collect::<Vec<_>>().join("+")
}

fn eval_command(
    model_dir: &Path,
    data: &Path,
    k: usize,
    max_combos: Option<usize>,
    seeds: &[u64],
    out: &Path,
) -> anyhow::Result<()> {
    if seeds.is_empty() {
        bail!("--seeds needs at least one seed");
    }
    let ds = load_dataset(data)?;
    let names: Vec<String> = ds.views.iter().map(|v| v.name.clone()).collect();
    let mut sweeps: Vec<(u64, SweepResult)> = Vec::new();
    for &seed in seeds {
        let per_seed = model_dir.join(format!("seed_{seed}"));
        let dir = if per_seed.join("manifest.json").exists() { per_seed } else { model_dir.to_path_buf() };
        let (model, _) = load_checkpoint(&dir)?;
        if model.views != ds.views {
            bail!("{}: view layout differs from the model's", data.display());
        }
        sweeps.push((seed, subset_sweep(&model, &ds, k, max_combos, seed)?));
    }

    let mut w = csv::Writer::from_path(out).with_context(|| out.display().to_string())?;
    w.write_record(["seed", "k", "combo", "samples", "macro_f1", "std"])?;
    for (seed, sweep) in &sweeps {
        for c in &sweep.combos {
            w.write_record([
                seed.to_string(),
                k.to_string(),
                combo_label(&names, &c.views),
                c.samples.to_string(),
                c.macro_f1.to_string(),
                String::new(),
            ])?;
        }
        w.write_record([
            seed.to_string(),
            k.to_string(),
            "mean".into(),
            String::new(),
            sweep.mean.to_string(),
            sweep.std.to_string(),
        ])?;
    }
    let means: Vec<f64> = sweeps.iter().map(|(_, s)| s.mean).collect();
    let (mean, std) = mean_std(&means);
    w.write_record([
        "all".into(),
        k.to_string(),
        "mean".into(),
        String::new(),
        mean.to_string(),
        std.to_string(),
    ])?;
    w.flush()?;
    println!(
        "k={k}: macro-F1 {mean:.4} +- {std:.4} over {} seed(s), {} combination(s) each",
        seeds.len(),
        sweeps[0].1.combos.len()
    );
    Ok(())
}

pub fn write_expert_usage(path: &Path, usage: &ExpertUsage) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    let mut header = vec!["row".to_string(), "num_views".to_string()];
    header.extend((0..usage.num_experts()).map(|e| format!("expert_{e}")));
    w.write_record(&header)?;
    for ((label, combo), row) in usage.labels.iter().zip(&usage.combos).zip(&usage.rows) {
        let mut rec = vec![label.clone(), combo.len().to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn analyze_experts(model: &Path, data: &Path, out: &Path, max_rows: usize, seed: u64) -> anyhow::Result<()> {
    let (model, _) = load_checkpoint(model)?;
    let ds = load_dataset(data)?;
    let usage = model.expert_usage(&ds, max_rows, seed)?;
    write_expert_usage(out, &usage)?;
    println!(
        "{} rows x {} experts; mean JS(one-view, multi-view) = {:.6}",
        usage.rows.len(),
        usage.num_experts(),
        usage.mean_one_vs_multi_js()?
    );
    Ok(())
}
