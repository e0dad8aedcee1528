//! `mgr`: reproducible experiments for multi-generator rationalization.
//!
//! Every command writes `manifest.json` into its output directory before
//! any other artifact. Randomness flows from `--seed` alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mgr_core::data::{
    format_dataset, generate_synthetic, load_dataset, load_embeddings, DatasetSplit, SyntheticSpec,
    Vocabulary, DEFAULT_MAX_LEN,
};
use mgr_core::evaluation::{rationale_dump, EvalReport};
use mgr_core::experiments::{compare, comparison_csv, COMPARISON_HEADER};
use mgr_core::game::sweep_csv;
use mgr_core::models::{
    load_checkpoint, pipeline_grad_check, save_checkpoint, Checkpoint, MgrModel, Pooling,
};
use mgr_core::numeric::{check_primitives, GradCheckOptions};
use mgr_core::training::{metrics_csv, predict_split, skew_pretrain, train_loop, TrainConfig};

#[derive(Parser)]
#[command(
    name = "mgr",
    version,
    about = "Multi-generator selective rationalization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    sparsity_target: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Spurious-span probability of the synthetic corpus.
    #[arg(long)]
    rho: Option<f64>,
    /// Predictor pretraining epochs before training.
    #[arg(long)]
    skew_epochs: Option<i64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as train/dev/test record files.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Put the spurious span at the start of every text.
        #[arg(long)]
        spurious_first: bool,
    },
    /// Train a model; writes a checkpoint and the per-epoch metric log.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Directory holding train.tsv and dev.tsv; a synthetic corpus is
        /// generated from the seed when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretrained vectors, one `token v1 v2 ...` line each.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Score a checkpoint on a record file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Skewed-predictor comparison of RNP (n=1) against MGR.
    SkewExp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Exact and Monte Carlo probability of a spurious majority.
    GameSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.67)]
        pc: f64,
        #[arg(long, default_value_t = 9)]
        n_max: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
    },
    /// Entropy bounds on random joint distributions.
    EntropyCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        max_support: usize,
    },
    /// Finite-difference check of every primitive and the model pipeline.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Keys read from config files that belong to the experiment rather than
/// to [`TrainConfig`].
const EXPERIMENT_KEYS: &[&str] = &["rho", "skew_epochs", "spurious_first"];

struct Resolved {
    train: TrainConfig,
    rho: f64,
    skew_epochs: i64,
    spurious_first: bool,
}

fn resolve(common: &Common, o: &Overrides) -> Result<Resolved> {
    let mut r = Resolved {
        train: TrainConfig {
            seed: common.seed,
            ..TrainConfig::default()
        },
        rho: SyntheticSpec::default().rho,
        skew_epochs: 0,
        spurious_first: false,
    };
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut rest = String::new();
        for line in text.lines() {
            let body = line.split('#').next().unwrap_or("");
            let parsed = body.split_once('=').map(|(k, v)| (k.trim(), v.trim()));
            match parsed {
                Some((k, v)) if EXPERIMENT_KEYS.contains(&k) => {
                    let bad = || anyhow::anyhow!("config field `{k}`: cannot parse `{v}`");
                    match k {
                        "rho" => r.rho = v.parse().map_err(|_| bad())?,
                        "skew_epochs" => r.skew_epochs = v.parse().map_err(|_| bad())?,
                        _ => r.spurious_first = v.parse().map_err(|_| bad())?,
                    }
                }
                _ => {
                    rest.push_str(line);
                    rest.push('\n');
                }
            }
        }
        r.train.apply(&rest)?;
    }
    // The command-line seed always wins over the file.
    r.train.seed = common.seed;
    let t = &mut r.train;
    if let Some(v) = o.n {
        t.n = v;
    }
    if let Some(v) = o.eta {
        t.eta = v;
    }
    if let Some(v) = o.lambda1 {
        t.lambda1 = v;
    }
    if let Some(v) = o.lambda2 {
        t.lambda2 = v;
    }
    if let Some(v) = o.sparsity_target {
        t.sparsity_target = v;
    }
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.rho {
        r.rho = v;
    }
    if let Some(v) = o.skew_epochs {
        r.skew_epochs = v;
    }
    r.train.validate()?;
    Ok(r)
}

fn snapshot(r: &Resolved) -> String {
    format!(
        "{}rho = {}\nskew_epochs = {}\nspurious_first = {}\n",
        r.train.to_text(),
        r.rho,
        r.skew_epochs,
        r.spurious_first
    )
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Writes `manifest.json`; called first with `finished = None` and again on
/// success.
fn write_manifest(
    common: &Common,
    command: &str,
    config: &str,
    started: u64,
    finished: Option<u64>,
    artifacts: &[&str],
) -> Result<()> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let manifest = json!({
        "command": command,
        "config_path": common.config.as_ref().map(|p| p.display().to_string()),
        "output_dir": common.out.display().to_string(),
        "seed": common.seed,
        "started_unix": started,
        "finished_unix": finished,
        "resolved_config": config,
        "artifacts": artifacts,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let path = common.out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn synthetic_spec(r: &Resolved, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        rho: r.rho,
        spurious_first: r.spurious_first,
        seed,
        ..SyntheticSpec::default()
    }
}

fn run(cli: Cli) -> Result<()> {
    let started = unix_now();
    match cli.command {
        Command::SynthData {
            common,
            overrides,
            spurious_first,
        } => {
            let mut r = resolve(&common, &overrides)?;
            r.spurious_first |= spurious_first;
            let snap = snapshot(&r);
            write_manifest(&common, "synth-data", &snap, started, None, &[])?;
            let corpus = generate_synthetic(&synthetic_spec(&r, common.seed))?;
            let files = ["train.tsv", "dev.tsv", "test.tsv"];
            for (name, split) in files.iter().zip([&corpus.train, &corpus.dev, &corpus.test]) {
                write(
                    &common.out,
                    name,
                    &format_dataset(&split.split, &corpus.vocab),
                )?;
            }
            write_manifest(
                &common,
                "synth-data",
                &snap,
                started,
                Some(unix_now()),
                &files,
            )
        }
        Command::Train {
            common,
            overrides,
            data,
            embeddings,
        } => {
            let r = resolve(&common, &overrides)?;
            let snap = snapshot(&r);
            write_manifest(&common, "train", &snap, started, None, &[])?;
            let (train, dev, vocab) = match &data {
                Some(dir) => {
                    let train = load_dataset(&dir.join("train.tsv"), None, DEFAULT_MAX_LEN)?;
                    let dev =
                        load_dataset(&dir.join("dev.tsv"), Some(&train.vocab), DEFAULT_MAX_LEN)?;
                    (train.split, dev.split, train.vocab)
                }
                None => {
                    let c = generate_synthetic(&synthetic_spec(&r, common.seed))?;
                    (c.train.split, c.dev.split, c.vocab)
                }
            };
            let mut cfg = r.train.clone();
            let table = match &embeddings {
                Some(path) => {
                    let (t, _) = load_embeddings(path, &vocab)?;
                    cfg.embed_dim = t.shape()[1];
                    Some(t)
                }
                None => None,
            };
            let mut model = MgrModel::new(
                cfg.model_config(vocab.len(), vocab.class_count()),
                cfg.seed,
                table,
            )?;
            skew_pretrain(
                &mut model,
                &train,
                &cfg,
                r.skew_epochs,
                SyntheticSpec::default().spurious_len,
            )?;
            let outcome = train_loop(model, &train, &dev, &cfg)?;
            write(
                &common.out,
                "metrics.csv",
                &metrics_csv(&outcome.log, cfg.n),
            )?;
            let meta = cfg
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("train.{k}"), v))
                .collect();
            let ckpt = Checkpoint {
                model: outcome.model,
                vocab,
                meta,
            };
            save_checkpoint(&common.out.join("checkpoint.txt"), &ckpt)?;
            println!(
                "trained {} epochs, best epoch {}",
                outcome.epochs_run,
                outcome.best_epoch.map_or("none".into(), |e| e.to_string())
            );
            write_manifest(
                &common,
                "train",
                &snap,
                started,
                Some(unix_now()),
                &["metrics.csv", "checkpoint.txt"],
            )
        }
        Command::Evaluate {
            common,
            checkpoint,
            data,
        } => {
            let snap = format!(
                "checkpoint = {}\ndata = {}\n",
                checkpoint.display(),
                data.display()
            );
            write_manifest(&common, "evaluate", &snap, started, None, &[])?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let loaded = load_dataset(&data, Some(&ckpt.vocab), DEFAULT_MAX_LEN)?;
            let split = &loaded.split;
            evaluate(&common, &ckpt.model, &ckpt.vocab, split)?;
            write_manifest(
                &common,
                "evaluate",
                &snap,
                started,
                Some(unix_now()),
                &["eval.csv", "rationales.tsv"],
            )
        }
        Command::SkewExp {
            common,
            overrides,
            seeds,
        } => {
            let mut r = resolve(&common, &overrides)?;
            r.spurious_first = true;
            if r.skew_epochs <= 0 {
                bail!("config field `skew_epochs`: skew-exp needs a positive value");
            }
            if r.train.n < 3 {
                bail!("config field `n`: skew-exp compares against MGR, which needs n >= 3");
            }
            let snap = snapshot(&r);
            write_manifest(&common, "skew-exp", &snap, started, None, &[])?;
            let seed_list: Vec<u64> = (common.seed..common.seed + seeds).collect();
            let base = r.train.clone();
            let rows = compare(
                &synthetic_spec(&r, common.seed),
                &seed_list,
                base.n,
                r.skew_epochs,
                |n, seed| TrainConfig {
                    n,
                    seed,
                    ..base.clone()
                },
            )?;
            let table = format!(
                "{COMPARISON_HEADER}\n{}",
                comparison_csv(&format!("skew{}", r.skew_epochs), &rows)
            );
            write(&common.out, "skew.csv", &table)?;
            print!("{table}");
            write_manifest(
                &common,
                "skew-exp",
                &snap,
                started,
                Some(unix_now()),
                &["skew.csv"],
            )
        }
        Command::GameSweep {
            common,
            pc,
            n_max,
            trials,
        } => {
            let snap = format!("pc = {pc}\nn_max = {n_max}\ntrials = {trials}\n");
            write_manifest(&common, "game-sweep", &snap, started, None, &[])?;
            let csv = sweep_csv(pc, n_max, trials, common.seed)?;
            write(&common.out, "game_sweep.csv", &csv)?;
            print!("{csv}");
            write_manifest(
                &common,
                "game-sweep",
                &snap,
                started,
                Some(unix_now()),
                &["game_sweep.csv"],
            )
        }
        Command::EntropyCheck {
            common,
            count,
            max_support,
        } => {
            let snap = format!("count = {count}\nmax_support = {max_support}\n");
            write_manifest(&common, "entropy-check", &snap, started, None, &[])?;
            let summary = mgr_core::entropy::theorem2_sweep(count, max_support, common.seed);
            write(&common.out, "entropy.csv", &summary.csv)?;
            println!(
                "checked {} distributions, {} violations",
                summary.checked, summary.violations
            );
            write_manifest(
                &common,
                "entropy-check",
                &snap,
                started,
                Some(unix_now()),
                &["entropy.csv"],
            )
        }
        Command::GradCheck { common, tolerance } => {
            let snap = format!("tolerance = {tolerance}\n");
            write_manifest(&common, "grad-check", &snap, started, None, &[])?;
            let opts = GradCheckOptions {
                tolerance,
                seed: common.seed,
                ..GradCheckOptions::default()
            };
            let mut csv = String::from("check,param,coords,max_rel_error,passed\n");
            let mut failures = 0;
            let mut add = |check: &str, report: &mgr_core::numeric::GradCheckReport| {
                for p in &report.params {
                    csv.push_str(&format!(
                        "{check},{},{},{:e},{}\n",
                        p.name, p.coords_checked, p.max_rel_error, p.passed
                    ));
                }
                if !report.passed() {
                    failures += 1;
                }
            };
            for (name, report) in check_primitives(&opts)? {
                add(name, &report);
            }
            for pooling in [Pooling::MaskedMean, Pooling::Max] {
                add(
                    &format!("pipeline_{pooling}"),
                    &pipeline_grad_check(pooling, &opts)?,
                );
            }
            write(&common.out, "grad_check.csv", &csv)?;
            println!("grad check: {failures} failing checks at tolerance {tolerance:e}");
            write_manifest(
                &common,
                "grad-check",
                &snap,
                started,
                Some(unix_now()),
                &["grad_check.csv"],
            )
        }
    }
}

fn evaluate(
    common: &Common,
    model: &MgrModel,
    vocab: &Vocabulary,
    split: &DatasetSplit,
) -> Result<()> {
    if split.is_empty() {
        bail!("evaluation data is empty");
    }
    if split
        .examples
        .iter()
        .any(|e| e.token_ids.iter().any(|&t| t >= vocab.len()))
    {
        bail!("evaluation data uses tokens outside the checkpoint vocabulary");
    }
    let preds = predict_split(model, split, &[0])?;
    let gold: Vec<Option<Vec<u8>>> = split.examples.iter().map(|e| e.gold_mask.clone()).collect();
    let report = EvalReport::compute(
        &preds.masks[0],
        &preds.probs[0],
        &split.labels(),
        &gold,
        false,
    )?;
    write(
        &common.out,
        "eval.csv",
        &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )?;
    write(
        &common.out,
        "rationales.tsv",
        &rationale_dump(&split.labels(), &preds.predicted_labels(0), &preds.masks[0]),
    )?;
    println!("{}\n{}", EvalReport::CSV_HEADER, report.csv_row());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
