//! `serank`: train, evaluate, and analyze sequencewise ranking models.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.

use clap::{Parser, Subcommand};
use serank::config::{RunConfig, CONFIG_KEYS};
use serank::data::{
    generate_synthetic, load_stats, normalize, parse_letor, save_stats, write_letor, Dataset,
};
use serank::error::Error;
use serank::experiments::{stability_test, write_ablation_tsv};
use serank::flops::count_flops;
use serank::metrics::evaluate;
use serank::model::{init, load_model, save_model, ScoringModel};
use serank::train::{train, write_log_tsv};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const REPORT_KS: [usize; 3] = [1, 5, 10];

fn config_keys_help() -> String {
    let mut s = String::from("Config keys (key = default):\n");
    for k in CONFIG_KEYS {
        let default = if k.default.is_empty() { "<unset>" } else { k.default };
        s.push_str(&format!("  {} = {}\n      {}\n", k.key, default, k.help));
    }
    s
}

#[derive(Parser)]
#[command(name = "serank", version, about = "Sequencewise learning-to-rank toolkit")]
struct Cli {
    /// Cap the worker thread count for query-parallel evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes best/final checkpoints, the training log, and
    /// a test metric report to --out.
    #[command(after_help = config_keys_help())]
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a LETOR dataset with a checkpoint and report NDCG@{1,5,10}.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Normalization stats written by `train` (stats.tsv). Required when
        /// the checkpoint was trained on normalized features.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Write the TSV report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Static FLOP count of one forward pass at a given input shape.
    #[command(after_help = config_keys_help())]
    Flops {
        #[arg(long)]
        config: PathBuf,
        /// Documents per query (L).
        #[arg(long, short = 'L')]
        docs: usize,
        /// Feature channels (C).
        #[arg(long, short = 'C')]
        channels: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare NDCG of surviving documents scored with and without the
    /// masked-out context.
    Stability {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Fraction of documents to mask out per query.
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the SE-b model and its squeeze/excitation ablations with one
    /// config, then compare on the test split.
    #[command(after_help = config_keys_help())]
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write seeded synthetic train/valid/test LETOR files.
    #[command(after_help = config_keys_help())]
    GenSynthetic {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum CliError {
    Usage(Error),
    Runtime(Error),
}

impl CliError {
    fn report(&self) -> ExitCode {
        match self {
            CliError::Usage(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
            CliError::Runtime(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        }
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e)
}

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // ignore failure when a pool already exists (tests call run twice)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_file(path).map_err(usage)?;
    if let Some(seed) = seed {
        cfg.set("seed", &seed.to_string()).map_err(usage)?;
    }
    Ok(cfg)
}

struct Splits {
    train: Dataset,
    valid: Dataset,
    test: Dataset,
}

/// Load the three splits from the configured LETOR paths, or generate the
/// synthetic task when `data.train` is unset. Normalization stats always
/// come from the training split; train/valid optionally drop queries with
/// no relevant documents.
fn load_splits(cfg: &RunConfig, out: Option<&Path>) -> Result<Splits, CliError> {
    let discard = cfg.discard_no_relevant().map_err(usage)?;
    let (mut train_ds, mut valid_ds, mut test_ds) = match cfg.data_path("train") {
        Some(train_path) => {
            let c = cfg.feature_count().map_err(usage)?;
            let valid_path = cfg.data_path("valid").ok_or_else(|| {
                usage(Error::Config("data.valid is required with data.train".into()))
            })?;
            let train_ds = parse_letor(train_path, c).map_err(usage)?;
            let valid_ds = parse_letor(valid_path, c).map_err(usage)?;
            let test_ds = match cfg.data_path("test") {
                Some(p) => parse_letor(p, c).map_err(usage)?,
                None => valid_ds.clone(),
            };
            (train_ds, valid_ds, test_ds)
        }
        None => {
            let [tr, va, te] = cfg.synthetic_specs().map_err(usage)?;
            (
                generate_synthetic(&tr),
                generate_synthetic(&va),
                generate_synthetic(&te),
            )
        }
    };
    if discard {
        train_ds = train_ds.discard_no_relevant();
        valid_ds = valid_ds.discard_no_relevant();
    }
    if cfg.normalize().map_err(usage)? {
        let stats = train_ds.compute_stats();
        if let Some(dir) = out {
            save_stats(&stats, dir.join("stats.tsv")).map_err(runtime)?;
        }
        train_ds = normalize(&train_ds, &stats).map_err(usage)?;
        valid_ds = normalize(&valid_ds, &stats).map_err(usage)?;
        test_ds = normalize(&test_ds, &stats).map_err(usage)?;
    }
    Ok(Splits {
        train: train_ds,
        valid: valid_ds,
        test: test_ds,
    })
}

fn load_eval_dataset(
    path: &Path,
    model: &ScoringModel,
    stats: Option<&PathBuf>,
) -> Result<Dataset, CliError> {
    let ds = parse_letor(path, model.spec.input_width).map_err(usage)?;
    match stats {
        Some(p) => {
            let stats = load_stats(p).map_err(usage)?;
            normalize(&ds, &stats).map_err(usage)
        }
        None => Ok(ds),
    }
}

fn write_or_print(out: Option<&PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, content).map_err(|e| runtime(e.into())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Metric TSV plus `#` comments carrying the 0-100 scale.
fn metric_report_text(report: &serank::metrics::MetricReport) -> String {
    let mut buf = Vec::new();
    report.write_tsv(&mut buf).expect("vec write");
    let mut text = String::from_utf8(buf).expect("utf8");
    for (k, v) in &report.ndcg_at {
        text.push_str(&format!("# NDCG@{k} (x100): {:.2}\n", v * 100.0));
    }
    text.push_str(&format!("# skipped_queries: {}\n", report.skipped));
    text
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            fs::create_dir_all(&out).map_err(|e| usage(e.into()))?;
            let splits = load_splits(&cfg, Some(&out))?;
            let spec = cfg.model_spec(splits.train.feature_count).map_err(usage)?;
            let tc = cfg.train_config().map_err(usage)?;
            let model = init(&spec).map_err(usage)?;
            let outcome = train(model, &splits.train, &splits.valid, &tc).map_err(runtime)?;

            save_model(&outcome.best, out.join("best")).map_err(runtime)?;
            save_model(&outcome.final_model, out.join("final")).map_err(runtime)?;
            let mut log = Vec::new();
            write_log_tsv(&outcome.log, &mut log).map_err(|e| runtime(e.into()))?;
            fs::write(out.join("train_log.tsv"), log).map_err(|e| runtime(e.into()))?;

            let report = evaluate(&outcome.best, &splits.test, &REPORT_KS).map_err(runtime)?;
            fs::write(out.join("test_metrics.tsv"), metric_report_text(&report))
                .map_err(|e| runtime(e.into()))?;
            println!(
                "trained {} steps; best step {}; test NDCG@5 {:.4}",
                outcome.log.len(),
                outcome.best_step,
                report.ndcg_at[&5]
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            stats,
            out,
        } => {
            let model = load_model(&checkpoint).map_err(usage)?;
            let ds = load_eval_dataset(&dataset, &model, stats.as_ref())?;
            let report = evaluate(&model, &ds, &REPORT_KS).map_err(runtime)?;
            write_or_print(out.as_ref(), &metric_report_text(&report))
        }
        Command::Flops {
            config,
            docs,
            channels,
            out,
        } => {
            let cfg = load_config(&config, None)?;
            let spec = cfg.model_spec(channels).map_err(usage)?;
            let report = count_flops(&spec, docs, channels).map_err(usage)?;
            let mut buf = Vec::new();
            report.write_tsv(&mut buf).map_err(|e| runtime(e.into()))?;
            write_or_print(out.as_ref(), &String::from_utf8(buf).expect("utf8"))
        }
        Command::Stability {
            checkpoint,
            dataset,
            fraction,
            seed,
            stats,
            out,
        } => {
            let model = load_model(&checkpoint).map_err(usage)?;
            let ds = load_eval_dataset(&dataset, &model, stats.as_ref())?;
            let report =
                stability_test(&model, &ds, fraction, seed, &REPORT_KS).map_err(runtime)?;
            let mut buf = Vec::new();
            report.write_tsv(&mut buf).map_err(|e| runtime(e.into()))?;
            write_or_print(out.as_ref(), &String::from_utf8(buf).expect("utf8"))
        }
        Command::Ablate { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let splits = load_splits(&cfg, None)?;
            let spec = cfg.model_spec(splits.train.feature_count).map_err(usage)?;
            let tc = cfg.train_config().map_err(usage)?;
            let rows = serank::experiments::ablation_suite(
                &splits.train,
                &splits.valid,
                &splits.test,
                &spec,
                &tc,
                &REPORT_KS,
            )
            .map_err(runtime)?;
            let mut buf = Vec::new();
            write_ablation_tsv(&rows, &mut buf).map_err(|e| runtime(e.into()))?;
            write_or_print(out.as_ref(), &String::from_utf8(buf).expect("utf8"))
        }
        Command::GenSynthetic { config, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let [tr, va, te] = cfg.synthetic_specs().map_err(usage)?;
            fs::create_dir_all(&out).map_err(|e| usage(e.into()))?;
            for (spec, name) in [(tr, "train.txt"), (va, "valid.txt"), (te, "test.txt")] {
                let ds = generate_synthetic(&spec);
                write_letor(&ds, out.join(name)).map_err(runtime)?;
            }
            println!("wrote train.txt, valid.txt, test.txt to {}", out.display());
            Ok(())
        }
    }
}
