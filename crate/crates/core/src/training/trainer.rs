use std::fmt::Write as _;

use rand::RngCore;

use super::objective::{build_loss, LossDiagnostics};
use super::{LrSchedule, TrainConfig, TrainError};
use crate::data::{sequential_batches, BalancedSampler, Batch, DatasetSplit, Example};
use crate::evaluation::{accuracy, pairwise_overlaps, sparsity};
use crate::models::{MgrModel, SampleMode, SamplingStreams};
use crate::numeric::{Adam, AdamConfig, ParamId, Tape, Tensor, Var};
use crate::rng;

/// Optimizer and sampling state carried across steps.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub schedule: LrSchedule,
    pub adam: Adam,
    pub streams: SamplingStreams,
    pub steps: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(TrainState {
            schedule: config.schedule(),
            adam: Adam::new(AdamConfig::default())?,
            streams: SamplingStreams::new(config.seed, config.n),
            steps: 0,
        })
    }
}

/// Parameter groups paired with their learning rates. A shared generator
/// encoder trains at generator 1's rate.
pub fn param_groups(model: &MgrModel, schedule: &LrSchedule) -> Vec<(Vec<ParamId>, f64)> {
    let mut groups = Vec::with_capacity(model.generator_count() + 2);
    for i in 0..model.generator_count() {
        groups.push((model.generator_param_ids(i), schedule.generator_rates[i]));
    }
    let shared = model.shared_encoder_ids();
    if !shared.is_empty() {
        groups.push((shared, schedule.generator_rates[0]));
    }
    groups.push((model.predictor_param_ids(), schedule.predictor_rate));
    groups
}

/// One forward/backward pass followed by an Adam update of every group at
/// its own rate.
pub fn train_step(
    model: &mut MgrModel,
    batch: &Batch,
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<LossDiagnostics, TrainError> {
    if state.schedule.generator_rates.len() != model.generator_count() {
        return Err(TrainError::Config {
            field: "n".into(),
            reason: format!(
                "schedule has {} generator rates, model has {} generators",
                state.schedule.generator_rates.len(),
                model.generator_count()
            ),
        });
    }
    let (diagnostics, grads) = {
        let mut tape = Tape::new(&model.store);
        let graph = build_loss(
            &mut tape,
            model,
            batch,
            config,
            SampleMode::Train,
            &mut state.streams,
        )?;
        (graph.diagnostics, tape.backward(graph.loss)?)
    };
    model.store.zero_grad();
    model.store.set_grads(&grads)?;
    for (ids, lr) in param_groups(model, &state.schedule) {
        for id in ids {
            if model.store.is_trainable(id) {
                state.adam.step(&mut model.store, id, lr)?;
            }
        }
    }
    state.steps += 1;
    Ok(diagnostics)
}

/// Eval-mode masks and class distributions, truncated to each example's
/// length, indexed `[generator][example]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPredictions {
    pub generators: Vec<usize>,
    pub masks: Vec<Vec<Vec<u8>>>,
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl SplitPredictions {
    pub fn predicted_labels(&self, k: usize) -> Vec<usize> {
        self.probs[k]
            .iter()
            .map(|p| crate::evaluation::argmax(p).unwrap_or(0))
            .collect()
    }
}

const EVAL_BATCH: usize = 64;

/// Runs the listed generators (0-based) deterministically over `split`.
pub fn predict_split(
    model: &MgrModel,
    split: &DatasetSplit,
    generators: &[usize],
) -> Result<SplitPredictions, TrainError> {
    if let Some(&g) = generators.iter().find(|&&g| g >= model.generator_count()) {
        return Err(crate::models::ModelError::GeneratorIndex(g).into());
    }
    let k = generators.len();
    let mut masks = vec![Vec::with_capacity(split.len()); k];
    let mut probs = vec![Vec::with_capacity(split.len()); k];
    for chunk in sequential_batches(split.len(), EVAL_BATCH) {
        let batch = Batch::from_indices(split, &chunk)?;
        let mut tape = Tape::new(&model.store);
        let embedded = model.embed(&mut tape, &batch)?;
        for (slot, &g) in generators.iter().enumerate() {
            let (_, p) = model.generator_probs(&mut tape, g, &embedded, &batch)?;
            let hard: Vec<Var> = p
                .iter()
                .map(|&v| {
                    let h: Vec<f64> = tape
                        .value(v)
                        .data()
                        .iter()
                        .map(|&x| f64::from(u8::from(x > 0.5)))
                        .collect();
                    let rows = h.len();
                    tape.constant(Tensor::new(vec![rows, 1], h).expect("column"))
                })
                .collect();
            let logits = model.predictor_logits(&mut tape, &embedded, &hard, &batch)?;
            let y = tape.softmax(logits);
            let classes = tape.value(y).cols();
            for (r, &l) in batch.lengths.iter().enumerate() {
                masks[slot].push(
                    hard[..l]
                        .iter()
                        .map(|&v| tape.value(v).data()[r] as u8)
                        .collect(),
                );
                probs[slot].push(tape.value(y).data()[r * classes..(r + 1) * classes].to_vec());
            }
        }
    }
    Ok(SplitPredictions {
        generators: generators.to_vec(),
        masks,
        probs,
    })
}

/// Deterministic mask from generator 1 and the predictor's distribution on it.
pub fn infer(model: &MgrModel, example: &Example) -> Result<(Vec<u8>, Vec<f64>), TrainError> {
    let split = DatasetSplit::new(vec![example.clone()]);
    let mut out = predict_split(model, &split, &[0])?;
    Ok((
        out.masks[0].pop().unwrap_or_default(),
        out.probs[0].pop().unwrap_or_default(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: Vec<f64>,
    pub omega: Vec<f64>,
    /// Dev accuracy of generator 1's rationales.
    pub dev_acc: f64,
    /// Dev sparsity of generator 1's rationales.
    pub sparsity: f64,
    /// Dev overlap for every generator pair `(i, j)`, `i < j`.
    pub overlaps: Vec<f64>,
}

impl EpochRecord {
    pub fn mean_overlap(&self) -> f64 {
        if self.overlaps.is_empty() {
            0.0
        } else {
            self.overlaps.iter().sum::<f64>() / self.overlaps.len() as f64
        }
    }
}

/// CSV metric log with one column per generator and generator pair.
pub fn metrics_csv(log: &[EpochRecord], n: usize) -> String {
    let mut s = String::from("epoch,loss");
    for i in 1..=n {
        let _ = write!(s, ",ce_g{i}");
    }
    for i in 1..=n {
        let _ = write!(s, ",omega_g{i}");
    }
    s.push_str(",dev_acc,sparsity");
    for i in 1..=n {
        for j in i + 1..=n {
            let _ = write!(s, ",overlap_{i}{j}");
        }
    }
    s.push('\n');
    for r in log {
        let _ = write!(s, "{},{}", r.epoch, r.loss);
        for v in r.cross_entropy.iter().chain(&r.omega) {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(s, ",{},{}", r.dev_acc, r.sparsity);
        for v in &r.overlaps {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the best dev accuracy (earliest on ties).
    pub model: MgrModel,
    pub log: Vec<EpochRecord>,
    /// 1-based epoch of the returned checkpoint; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
}

/// Dev metrics of all generators after an epoch.
pub fn dev_metrics(
    model: &MgrModel,
    dev: &DatasetSplit,
) -> Result<(f64, f64, Vec<f64>), TrainError> {
    if dev.is_empty() {
        return Ok((0.0, 0.0, Vec::new()));
    }
    let all: Vec<usize> = (0..model.generator_count()).collect();
    let preds = predict_split(model, dev, &all)?;
    let acc = accuracy(&preds.probs[0], &dev.labels())?;
    let sp = sparsity(&preds.masks[0]);
    let overlaps = pairwise_overlaps(&preds.masks)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    Ok((acc, sp, overlaps))
}

/// Best-epoch tracking for early stopping. Ties keep the earlier epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    /// Epochs without improvement before stopping; 0 never stops.
    pub patience: usize,
    pub best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
        }
    }

    /// Records `dev_acc` for 1-based `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, dev_acc: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(_, b)| dev_acc > b);
        if improved {
            self.best = Some((epoch, dev_acc));
        }
        let best_epoch = self.best.map_or(epoch, |(e, _)| e);
        (
            improved,
            self.patience > 0 && epoch - best_epoch >= self.patience,
        )
    }
}

/// Trains with class-balanced batches, keeping the checkpoint with the best
/// dev accuracy and stopping after `early_stop_patience` epochs without
/// improvement (0 disables stopping).
pub fn train_loop(
    model: MgrModel,
    train: &DatasetSplit,
    dev: &DatasetSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_loop_with(model, train, dev, config, |_, _| {})
}

/// [`train_loop`] with a callback invoked after each epoch's record.
pub fn train_loop_with(
    mut model: MgrModel,
    train: &DatasetSplit,
    dev: &DatasetSplit,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &MgrModel),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if model.generator_count() != config.n {
        return Err(TrainError::Config {
            field: "n".into(),
            reason: format!(
                "config has n={} but model has {} generators",
                config.n,
                model.generator_count()
            ),
        });
    }
    let mut outcome = TrainOutcome {
        model: model.clone(),
        log: Vec::new(),
        best_epoch: None,
        epochs_run: 0,
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    let sampler = BalancedSampler::new(
        train,
        model.config.class_count,
        config.batch_size,
        config.seed,
    )?;
    let mut state = TrainState::new(config)?;
    let mut stopper = EarlyStopping::new(config.early_stop_patience);

    for epoch in 1..=config.epochs {
        let n = config.n;
        let (mut loss, mut ce, mut om) = (0.0, vec![0.0; n], vec![0.0; n]);
        let batches = sampler.epoch(epoch - 1);
        for (step, idx) in batches.iter().enumerate() {
            let batch = Batch::from_indices(train, idx)?;
            let d = match train_step(&mut model, &batch, config, &mut state) {
                Ok(d) => d,
                Err(e @ (TrainError::NonFinite { .. } | TrainError::Numeric(_))) => {
                    return Err(TrainError::Diverged {
                        epoch,
                        step: step + 1,
                        reason: e.to_string(),
                        last_good: Box::new(outcome),
                    });
                }
                Err(e) => return Err(e),
            };
            loss += d.loss;
            for i in 0..n {
                ce[i] += d.cross_entropy[i];
                om[i] += d.omega[i];
            }
        }
        let steps = batches.len().max(1) as f64;
        let (dev_acc, sp, overlaps) = dev_metrics(&model, dev)?;
        let record = EpochRecord {
            epoch,
            loss: loss / steps,
            cross_entropy: ce.iter().map(|v| v / steps).collect(),
            omega: om.iter().map(|v| v / steps).collect(),
            dev_acc,
            sparsity: sp,
            overlaps,
        };
        on_epoch(&record, &model);
        outcome.log.push(record);
        outcome.epochs_run = epoch;
        let (improved, stop) = stopper.observe(epoch, dev_acc);
        if improved {
            outcome.best_epoch = Some(epoch);
            outcome.model = model.clone();
        }
        if stop {
            break;
        }
    }
    Ok(outcome)
}

/// Mask that keeps only the first `segment_len` positions of each row.
fn segment_masks(tape: &mut Tape<'_>, batch: &Batch, segment_len: usize) -> Vec<Var> {
    (0..batch.max_len)
        .map(|t| {
            let col: Vec<f64> = batch
                .lengths
                .iter()
                .map(|&l| f64::from(u8::from(t < segment_len && t < l)))
                .collect();
            tape.constant(Tensor::new(vec![col.len(), 1], col).expect("column"))
        })
        .collect()
}

/// Trains the predictor alone for `k_epochs` on the first `segment_len`
/// tokens of every text, leaving generators and embeddings untouched.
/// Uses the base rate `eta` regardless of `n`, so models that share a seed
/// receive the same skew.
pub fn skew_pretrain(
    model: &mut MgrModel,
    train: &DatasetSplit,
    config: &TrainConfig,
    k_epochs: i64,
    segment_len: usize,
) -> Result<(), TrainError> {
    if k_epochs < 0 {
        return Err(TrainError::Config {
            field: "skew_epochs".into(),
            reason: format!("must be non-negative, got {k_epochs}"),
        });
    }
    if segment_len == 0 {
        return Err(TrainError::Config {
            field: "segment_len".into(),
            reason: "must be positive".into(),
        });
    }
    config.validate()?;
    if k_epochs == 0 {
        return Ok(());
    }
    let seed = rng::stream(config.seed, "skew").next_u64();
    let sampler = BalancedSampler::new(train, model.config.class_count, config.batch_size, seed)?;
    let mut adam = Adam::new(AdamConfig::default())?;
    let ids = model.predictor.param_ids();
    for epoch in 0..k_epochs as usize {
        for idx in sampler.epoch(epoch) {
            let batch = Batch::from_indices(train, &idx)?;
            let grads = {
                let mut tape = Tape::new(&model.store);
                let embedded = model.embed(&mut tape, &batch)?;
                let masks = segment_masks(&mut tape, &batch, segment_len);
                let logits = model.predictor_logits(&mut tape, &embedded, &masks, &batch)?;
                let ce = tape.cross_entropy(logits, &batch.labels)?;
                let loss = tape.mean(ce);
                let v = tape.value(loss).data()[0];
                if !v.is_finite() {
                    return Err(TrainError::NonFinite {
                        component: "skew_ce".into(),
                        value: v,
                    });
                }
                tape.backward(loss)?
            };
            model.store.zero_grad();
            model.store.accumulate_grads(&grads);
            for &id in &ids {
                adam.step(&mut model.store, id, config.eta)?;
            }
        }
    }
    model.store.zero_grad();
    Ok(())
}

/// Predictor accuracy when it sees only the first `segment_len` tokens, or
/// only the gold span when `segment_len` is `None`.
pub fn predictor_accuracy(
    model: &MgrModel,
    split: &DatasetSplit,
    segment_len: Option<usize>,
) -> Result<f64, TrainError> {
    let mut probs = Vec::with_capacity(split.len());
    for chunk in sequential_batches(split.len(), EVAL_BATCH) {
        let batch = Batch::from_indices(split, &chunk)?;
        let mut tape = Tape::new(&model.store);
        let embedded = model.embed(&mut tape, &batch)?;
        let masks = match segment_len {
            Some(s) => segment_masks(&mut tape, &batch, s),
            None => (0..batch.max_len)
                .map(|t| {
                    let col: Vec<f64> = batch
                        .gold_masks
                        .iter()
                        .zip(&batch.lengths)
                        .map(|(g, &l)| match g {
                            Some(g) if t < l => f64::from(g[t]),
                            _ => 0.0,
                        })
                        .collect();
                    tape.constant(Tensor::new(vec![col.len(), 1], col).expect("column"))
                })
                .collect(),
        };
        let logits = model.predictor_logits(&mut tape, &embedded, &masks, &batch)?;
        let y = tape.softmax(logits);
        let c = tape.value(y).cols();
        probs.extend(tape.value(y).data().chunks(c).map(<[f64]>::to_vec));
    }
    Ok(accuracy(&probs, &split.labels())?)
}
