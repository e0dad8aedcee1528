//! Synthetic experiments shared by the command line and the acceptance
//! suite. Each seed drives both the corpus and the model.

use std::fmt::Write as _;

use crate::data::{generate_synthetic, SyntheticCorpus, SyntheticSpec};
use crate::evaluation::{token_prf1, EvalReport, Prf1};
use crate::models::MgrModel;
use crate::training::{
    predict_split, skew_pretrain, train_loop, EpochRecord, TrainConfig, TrainError,
};

/// Settings tuned for desk-scale synthetic runs; everything else follows
/// [`TrainConfig::default`].
pub fn synthetic_train_config(n: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        n,
        eta: 3e-3,
        lambda1: 0.3,
        lambda2: 0.0,
        sparsity_target: 0.125,
        epochs: 10,
        batch_size: 32,
        seed,
        early_stop_patience: 0,
        embed_dim: 16,
        hidden_size: 16,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub n: usize,
    /// Test metrics of generator 1, the inference generator.
    pub report: EvalReport,
    /// Test token metrics of every generator.
    pub per_generator: Vec<Prf1>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub model: MgrModel,
}

impl RunResult {
    pub fn f1(&self) -> f64 {
        self.report.f1()
    }

    pub fn mean_generator_f1(&self) -> f64 {
        self.per_generator.iter().map(|m| m.f1).sum::<f64>() / self.per_generator.len() as f64
    }
}

/// Builds a model for `corpus`, optionally skews its predictor for
/// `skew_epochs` on the leading spurious-length segment, trains, and
/// evaluates on the test split.
pub fn run_on_corpus(
    corpus: &SyntheticCorpus,
    config: &TrainConfig,
    skew_epochs: i64,
) -> Result<RunResult, TrainError> {
    let mcfg = config.model_config(corpus.vocab.len(), corpus.vocab.class_count());
    let mut model = MgrModel::new(mcfg, config.seed, None)?;
    skew_pretrain(
        &mut model,
        &corpus.train.split,
        config,
        skew_epochs,
        corpus.spec.spurious_len,
    )?;
    let outcome = train_loop(model, &corpus.train.split, &corpus.dev.split, config)?;
    evaluate_run(
        corpus,
        config,
        outcome.model,
        outcome.log,
        outcome.best_epoch,
    )
}

fn evaluate_run(
    corpus: &SyntheticCorpus,
    config: &TrainConfig,
    model: MgrModel,
    log: Vec<EpochRecord>,
    best_epoch: Option<usize>,
) -> Result<RunResult, TrainError> {
    let test = &corpus.test.split;
    let all: Vec<usize> = (0..model.generator_count()).collect();
    let preds = predict_split(&model, test, &all)?;
    let gold: Vec<Option<Vec<u8>>> = test.examples.iter().map(|e| e.gold_mask.clone()).collect();
    let report = EvalReport::compute(
        &preds.masks[0],
        &preds.probs[0],
        &test.labels(),
        &gold,
        false,
    )?;
    let per_generator = preds
        .masks
        .iter()
        .map(|m| token_prf1(m, &gold))
        .collect::<Result<_, _>>()?;
    Ok(RunResult {
        seed: config.seed,
        n: config.n,
        report,
        per_generator,
        log,
        best_epoch,
        model,
    })
}

pub fn run_synthetic(
    spec: &SyntheticSpec,
    config: &TrainConfig,
    skew_epochs: i64,
) -> Result<RunResult, TrainError> {
    let corpus = generate_synthetic(spec)?;
    run_on_corpus(&corpus, config, skew_epochs)
}

/// RNP (n=1) and MGR on the same corpus and budget.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub seed: u64,
    pub rnp: RunResult,
    pub mgr: RunResult,
}

impl Comparison {
    pub fn gap(&self) -> f64 {
        self.mgr.f1() - self.rnp.f1()
    }
}

/// Runs RNP and an `n_mgr`-generator MGR for each seed. `configure` maps
/// `(n, seed)` to a training config so both arms share every other setting.
pub fn compare(
    spec: &SyntheticSpec,
    seeds: &[u64],
    n_mgr: usize,
    skew_epochs: i64,
    configure: impl Fn(usize, u64) -> TrainConfig,
) -> Result<Vec<Comparison>, TrainError> {
    seeds
        .iter()
        .map(|&seed| {
            let corpus = generate_synthetic(&SyntheticSpec {
                seed,
                ..spec.clone()
            })?;
            let rnp = run_on_corpus(&corpus, &configure(1, seed), skew_epochs)?;
            let mgr = run_on_corpus(&corpus, &configure(n_mgr, seed), skew_epochs)?;
            Ok(Comparison { seed, rnp, mgr })
        })
        .collect()
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c) = xs
        .into_iter()
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 {
        0.0
    } else {
        s / c as f64
    }
}

/// The spurious-correlation corpus: `rho = 0.8`, spans at random offsets.
pub fn spurious_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        rho: 0.8,
        seed,
        ..SyntheticSpec::default()
    }
}

/// The skew corpus: the spurious-correlation corpus with every spurious
/// span moved to the start of the text, where the predictor is pretrained.
pub fn skew_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        rho: 0.8,
        spurious_first: true,
        seed,
        ..SyntheticSpec::default()
    }
}

pub const COMPARISON_HEADER: &str = "setting,seed,model,precision,recall,f1,sparsity,accuracy";

/// Per-seed rows plus a `mean` row per model, values scaled to percent.
pub fn comparison_csv(setting: &str, rows: &[Comparison]) -> String {
    let mut s = String::new();
    let line = |s: &mut String, seed: &str, model: &str, m: Prf1, sp: f64, acc: f64| {
        let _ = writeln!(
            s,
            "{setting},{seed},{model},{:.1},{:.1},{:.1},{:.1},{:.1}",
            100.0 * m.precision,
            100.0 * m.recall,
            100.0 * m.f1,
            100.0 * sp,
            100.0 * acc
        );
    };
    for c in rows {
        for (name, r) in [("RNP", &c.rnp), ("MGR", &c.mgr)] {
            line(
                &mut s,
                &c.seed.to_string(),
                name,
                r.report.prf1.unwrap_or_default(),
                r.report.sparsity,
                r.report.accuracy,
            );
        }
    }
    for (name, pick) in [("RNP", 0), ("MGR", 1)] {
        let runs: Vec<&RunResult> = rows
            .iter()
            .map(|c| if pick == 0 { &c.rnp } else { &c.mgr })
            .collect();
        let avg = |f: &dyn Fn(&RunResult) -> f64| mean(runs.iter().map(|r| f(r)));
        let m = Prf1 {
            precision: avg(&|r| r.report.prf1.unwrap_or_default().precision),
            recall: avg(&|r| r.report.prf1.unwrap_or_default().recall),
            f1: avg(&|r| r.f1()),
        };
        line(
            &mut s,
            "mean",
            name,
            m,
            avg(&|r| r.report.sparsity),
            avg(&|r| r.report.accuracy),
        );
    }
    s
}
