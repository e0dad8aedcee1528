//! Generators, the shared predictor, and their n-generator composition.

use super::gru::{uniform, BiGru};
use super::sampling::{sample_column, MaskColumn, MaskSample, SampleMode};
use super::ModelError;
use crate::data::{Batch, Example};
use crate::numeric::{
    grad_check, GradCheckOptions, GradCheckReport, NumericError, ParamId, ParamStore, Tape, Tensor,
    Var,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// Mask-weighted mean of encoder states, dividing by `max(sum(m), 1)`.
    MaskedMean,
    /// Elementwise max of mask-scaled encoder states.
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masked_mean" | "mean" => Ok(Pooling::MaskedMean),
            "max" => Ok(Pooling::Max),
            other => Err(format!("unknown pooling `{other}`")),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::MaskedMean => "masked_mean",
            Pooling::Max => "max",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_size: usize,
    pub class_count: usize,
    pub generators: usize,
    pub share_encoder: bool,
    pub pooling: Pooling,
    pub train_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 100,
            embed_dim: 100,
            hidden_size: 200,
            class_count: 2,
            generators: 3,
            share_encoder: false,
            pooling: Pooling::MaskedMean,
            train_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |s: &str| Err(ModelError::Config(s.to_string()));
        if self.generators == 0 {
            return bad("at least one generator is required");
        }
        if self.vocab_size < 3 || self.embed_dim == 0 || self.hidden_size == 0 {
            return bad("vocab_size, embed_dim and hidden_size must be positive");
        }
        if self.class_count < 2 {
            return bad("class_count must be at least 2");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub encoder: BiGru,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl GeneratorParams {
    pub fn head_ids(&self) -> Vec<ParamId> {
        vec![self.head_w, self.head_b]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub encoder: BiGru,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub pooling: Pooling,
}

impl PredictorParams {
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend([self.out_w, self.out_b]);
        ids
    }
}

/// n generators and one predictor over a shared embedding table.
#[derive(Clone, Debug)]
pub struct MgrModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embedding: ParamId,
    pub generators: Vec<GeneratorParams>,
    pub predictor: PredictorParams,
}

/// One generator's pass through the pipeline on a tape.
#[derive(Clone, Debug)]
pub struct GeneratorPass {
    /// Selection probabilities per position, each `[batch, 1]`; zero on padding.
    pub probs: Vec<Var>,
    pub masks: Vec<MaskColumn>,
    /// Predictor logits for this generator's rationale, `[batch, classes]`.
    pub class_logits: Var,
}

/// Independent per-generator sampling streams derived from one seed.
#[derive(Clone, Debug)]
pub struct SamplingStreams {
    streams: Vec<rng::Rng>,
}

impl SamplingStreams {
    pub fn new(seed: u64, generators: usize) -> Self {
        SamplingStreams {
            streams: (1..=generators)
                .map(|i| rng::indexed_stream(seed, "sample/gen", i))
                .collect(),
        }
    }

    pub fn get(&mut self, generator: usize) -> &mut rng::Rng {
        &mut self.streams[generator]
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }
}

fn linear(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    r: &mut rng::Rng,
) -> (ParamId, ParamId) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = store.add(
        format!("{name}.w"),
        uniform(r, &[fan_in, fan_out], bound),
        true,
    );
    let b = store.add(format!("{name}.b"), uniform(r, &[fan_out], bound), true);
    (w, b)
}

impl MgrModel {
    /// Builds a model with every component drawn from its own seeded stream.
    /// Generator `i` (1-based) is initialized from stream `init/gen/i`, so
    /// generators differ only through their seeds.
    pub fn new(
        config: ModelConfig,
        seed: u64,
        embeddings: Option<Tensor>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let table = match embeddings {
            Some(t) => {
                if t.shape() != [config.vocab_size, config.embed_dim] {
                    return Err(ModelError::Config(format!(
                        "embedding shape {:?} does not match vocab {} x dim {}",
                        t.shape(),
                        config.vocab_size,
                        config.embed_dim
                    )));
                }
                t
            }
            None => {
                let mut r = rng::stream(seed, "init/embedding");
                let mut t = uniform(&mut r, &[config.vocab_size, config.embed_dim], 1.0);
                t.data_mut()[..config.embed_dim].fill(0.0);
                t
            }
        };
        let embedding = store.add("embedding", table, config.train_embeddings);
        let (e, h) = (config.embed_dim, config.hidden_size);

        let shared = if config.share_encoder {
            let mut r = rng::stream(seed, "init/gen-encoder");
            Some(BiGru::new(&mut store, "gen_shared.encoder", e, h, &mut r))
        } else {
            None
        };
        let mut generators = Vec::with_capacity(config.generators);
        for i in 1..=config.generators {
            let mut r = rng::indexed_stream(seed, "init/gen", i);
            let encoder = match &shared {
                Some(enc) => enc.clone(),
                None => BiGru::new(&mut store, &format!("gen{i}.encoder"), e, h, &mut r),
            };
            let (head_w, head_b) = linear(&mut store, &format!("gen{i}.head"), 2 * h, 1, &mut r);
            generators.push(GeneratorParams {
                encoder,
                head_w,
                head_b,
            });
        }

        let mut r = rng::stream(seed, "init/predictor");
        let encoder = BiGru::new(&mut store, "pred.encoder", e, h, &mut r);
        let (out_w, out_b) = linear(&mut store, "pred.out", 2 * h, config.class_count, &mut r);
        let predictor = PredictorParams {
            encoder,
            out_w,
            out_b,
            pooling: config.pooling,
        };
        Ok(MgrModel {
            config,
            store,
            embedding,
            generators,
            predictor,
        })
    }

    pub fn generator_count(&self) -> usize {
        self.generators.len()
    }

    /// Parameters owned by generator `i` (0-based). With a shared encoder
    /// only the head is owned; see [`MgrModel::shared_encoder_ids`].
    pub fn generator_param_ids(&self, i: usize) -> Vec<ParamId> {
        let g = &self.generators[i];
        let mut ids = if self.config.share_encoder {
            Vec::new()
        } else {
            g.encoder.param_ids()
        };
        ids.extend(g.head_ids());
        ids
    }

    pub fn shared_encoder_ids(&self) -> Vec<ParamId> {
        if self.config.share_encoder {
            self.generators[0].encoder.param_ids()
        } else {
            Vec::new()
        }
    }

    /// Predictor parameters, plus the embedding table when it is trainable.
    pub fn predictor_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.predictor.param_ids();
        if self.config.train_embeddings {
            ids.push(self.embedding);
        }
        ids
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        for row in &batch.token_ids {
            if let Some(&bad) = row.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(ModelError::TokenOutOfRange {
                    id: bad,
                    vocab: self.config.vocab_size,
                });
            }
        }
        if let Some(&l) = batch.labels.iter().find(|&&l| l >= self.config.class_count) {
            return Err(ModelError::LabelOutOfRange(l));
        }
        Ok(())
    }

    /// Embedded inputs per position, each `[batch, embed_dim]`.
    pub fn embed(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Vec<Var>, ModelError> {
        self.check_batch(batch)?;
        let table = tape.param(self.embedding);
        (0..batch.max_len)
            .map(|t| Ok(tape.embedding(table, &batch.column(t))?))
            .collect()
    }

    /// Selection logits and probabilities of generator `i` per position.
    pub fn generator_probs(
        &self,
        tape: &mut Tape<'_>,
        i: usize,
        embedded: &[Var],
        batch: &Batch,
    ) -> Result<(Vec<Var>, Vec<Var>), NumericError> {
        let g = &self.generators[i];
        let states = g.encoder.encode(tape, embedded, Some(&batch.lengths))?;
        let (w, b) = (tape.param(g.head_w), tape.param(g.head_b));
        let mut logits = Vec::with_capacity(states.len());
        let mut probs = Vec::with_capacity(states.len());
        for (t, &h) in states.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            let p = tape.sigmoid(z);
            let valid = batch.valid_column(t);
            let p = if valid.iter().all(|&v| v > 0.0) {
                p
            } else {
                let v = tape.constant(Tensor::new(vec![valid.len(), 1], valid)?);
                tape.mul(p, v)?
            };
            logits.push(z);
            probs.push(p);
        }
        Ok((logits, probs))
    }

    /// Predictor logits for the rationale `Z = M * X`, `[batch, classes]`.
    pub fn predictor_logits(
        &self,
        tape: &mut Tape<'_>,
        embedded: &[Var],
        masks: &[Var],
        batch: &Batch,
    ) -> Result<Var, NumericError> {
        let z: Vec<Var> = embedded
            .iter()
            .zip(masks)
            .map(|(&e, &m)| tape.mul_col(e, m))
            .collect::<Result<_, _>>()?;
        let states = self
            .predictor
            .encoder
            .encode(tape, &z, Some(&batch.lengths))?;
        let weighted: Vec<Var> = states
            .iter()
            .zip(masks)
            .map(|(&h, &m)| tape.mul_col(h, m))
            .collect::<Result<_, _>>()?;
        let pooled = match self.predictor.pooling {
            Pooling::MaskedMean => {
                let num = tape.add_n(&weighted)?;
                // max(count, 1): an empty mask pools to zero instead of
                // dividing by a vanishing count, whose gradient would swamp
                // the optimizer's moment estimates.
                let count = tape.add_n(masks)?;
                let rows = tape.value(count).rows();
                let one = tape.constant(Tensor::full(&[rows, 1], 1.0));
                let count = tape.max_n(&[count, one])?;
                tape.div_col(num, count)?
            }
            Pooling::Max => tape.max_n(&weighted)?,
        };
        let (w, b) = (
            tape.param(self.predictor.out_w),
            tape.param(self.predictor.out_b),
        );
        let logits = tape.matmul(pooled, w)?;
        tape.add_bias(logits, b)
    }

    /// Runs every generator and feeds each rationale to the shared predictor.
    /// Generator `i` draws noise only from `streams.get(i)`.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<'_>,
        batch: &Batch,
        tau: f64,
        mode: SampleMode,
        streams: &mut SamplingStreams,
    ) -> Result<Vec<GeneratorPass>, ModelError> {
        super::sampling::validate_temperature(tau)?;
        if streams.len() != self.generator_count() {
            return Err(ModelError::Config(format!(
                "{} sampling streams for {} generators",
                streams.len(),
                self.generator_count()
            )));
        }
        let embedded = self.embed(tape, batch)?;
        let mut passes = Vec::with_capacity(self.generator_count());
        for i in 0..self.generator_count() {
            let (logits, probs) = self.generator_probs(tape, i, &embedded, batch)?;
            let mut masks = Vec::with_capacity(logits.len());
            for (t, (&z, &p)) in logits.iter().zip(&probs).enumerate() {
                let valid = batch.valid_column(t);
                masks.push(sample_column(
                    tape,
                    z,
                    p,
                    &valid,
                    tau,
                    mode,
                    streams.get(i),
                )?);
            }
            let mask_vars: Vec<Var> = masks.iter().map(|m| m.mask).collect();
            let class_logits = self.predictor_logits(tape, &embedded, &mask_vars, batch)?;
            passes.push(GeneratorPass {
                probs,
                masks,
                class_logits,
            });
        }
        Ok(passes)
    }
}

fn column_values(tape: &Tape<'_>, vars: &[Var], row: usize, len: usize) -> Vec<f64> {
    vars[..len]
        .iter()
        .map(|&v| tape.value(v).data()[row])
        .collect()
}

fn single_batch(example: &Example) -> Result<Batch, ModelError> {
    Ok(Batch::from_examples(&[example])?)
}

/// Per-token selection probabilities of generator `i` (0-based).
pub fn generator_forward(
    model: &MgrModel,
    i: usize,
    example: &Example,
) -> Result<Vec<f64>, ModelError> {
    if i >= model.generator_count() {
        return Err(ModelError::GeneratorIndex(i));
    }
    let batch = single_batch(example)?;
    let mut tape = Tape::new(&model.store);
    let embedded = model.embed(&mut tape, &batch)?;
    let (_, probs) = model.generator_probs(&mut tape, i, &embedded, &batch)?;
    Ok(column_values(&tape, &probs, 0, example.len()))
}

/// Embedded tokens scaled by the mask, `[len, embed_dim]`.
pub fn apply_mask(model: &MgrModel, example: &Example, mask: &[f64]) -> Result<Tensor, ModelError> {
    if mask.len() != example.len() {
        return Err(ModelError::LengthMismatch {
            tokens: example.len(),
            mask: mask.len(),
        });
    }
    if example.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut tape = Tape::new(&model.store);
    let table = tape.param(model.embedding);
    let e = tape.embedding(table, &example.token_ids)?;
    let m = tape.constant(Tensor::new(vec![mask.len(), 1], mask.to_vec())?);
    let z = tape.mul_col(e, m)?;
    Ok(tape.value(z).clone())
}

/// Class distribution of the predictor for one example under `mask`.
pub fn predictor_forward(
    model: &MgrModel,
    example: &Example,
    mask: &[f64],
) -> Result<Vec<f64>, ModelError> {
    if mask.len() != example.len() {
        return Err(ModelError::LengthMismatch {
            tokens: example.len(),
            mask: mask.len(),
        });
    }
    let batch = single_batch(example)?;
    let mut tape = Tape::new(&model.store);
    let embedded = model.embed(&mut tape, &batch)?;
    let masks: Vec<Var> = mask
        .iter()
        .map(|&m| tape.constant(Tensor::full(&[1, 1], m)))
        .collect();
    let logits = model.predictor_logits(&mut tape, &embedded, &masks, &batch)?;
    let probs = tape.softmax(logits);
    Ok(tape.value(probs).data().to_vec())
}

/// Masks and class distributions of every generator for one example.
/// Generator `i` samples from a stream derived from `(seed, i)`.
pub fn mgr_forward(
    model: &MgrModel,
    example: &Example,
    tau: f64,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<(MaskSample, Vec<f64>)>, ModelError> {
    let batch = single_batch(example)?;
    let mut streams = SamplingStreams::new(seed, model.generator_count());
    let mut tape = Tape::new(&model.store);
    let passes = model.forward_on_tape(&mut tape, &batch, tau, mode, &mut streams)?;
    let l = example.len();
    let mut out = Vec::with_capacity(passes.len());
    for pass in passes {
        let masks: Vec<Var> = pass.masks.iter().map(|m| m.mask).collect();
        let relaxed: Vec<Var> = pass.masks.iter().map(|m| m.relaxed).collect();
        let hard = column_values(&tape, &masks, 0, l);
        let sample = MaskSample {
            probs: column_values(&tape, &pass.probs, 0, l),
            relaxed: column_values(&tape, &relaxed, 0, l),
            hard_mask: hard.iter().map(|&m| u8::from(m > 0.5)).collect(),
            temperature: tau,
        };
        let y = tape.softmax(pass.class_logits);
        out.push((sample, tape.value(y).data().to_vec()));
    }
    Ok(out)
}

/// Checks gradients of the summed cross-entropy through two generators
/// (relaxed sampling, fixed noise) and the predictor on a small model.
pub fn pipeline_grad_check(
    pooling: Pooling,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    let config = ModelConfig {
        vocab_size: 8,
        embed_dim: 3,
        hidden_size: 3,
        generators: 2,
        pooling,
        ..ModelConfig::default()
    };
    let mut model = MgrModel::new(config, 3, None)?;
    let a = Example::new(vec![2, 3, 4, 5], 0, None)?;
    let b = Example::new(vec![6, 7, 2], 1, None)?;
    let batch = Batch::from_examples(&[&a, &b])?;
    let frozen = model.clone();
    let report = grad_check(
        &mut model.store,
        |tape| {
            let mut streams = SamplingStreams::new(1, 2);
            let passes = frozen
                .forward_on_tape(tape, &batch, 0.5, SampleMode::Relaxed, &mut streams)
                .map_err(|e| match e {
                    ModelError::Numeric(n) => n,
                    other => NumericError::InvalidHyperparameter(other.to_string()),
                })?;
            let losses: Vec<Var> = passes
                .iter()
                .map(|p| {
                    let ce = tape.cross_entropy(p.class_logits, &batch.labels)?;
                    Ok(tape.mean(ce))
                })
                .collect::<Result<_, NumericError>>()?;
            tape.add_n(&losses)
        },
        opts,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(generators: usize, pooling: Pooling) -> MgrModel {
        let config = ModelConfig {
            vocab_size: 8,
            embed_dim: 3,
            hidden_size: 3,
            generators,
            pooling,
            ..ModelConfig::default()
        };
        MgrModel::new(config, 3, None).unwrap()
    }

    fn batch() -> Batch {
        let a = Example::new(vec![2, 3, 4, 5], 0, None).unwrap();
        let b = Example::new(vec![6, 7, 2], 1, None).unwrap();
        Batch::from_examples(&[&a, &b]).unwrap()
    }

    #[test]
    fn generators_start_from_different_seeds() {
        let m = small(3, Pooling::MaskedMean);
        let ex = Example::new(vec![2, 3, 4], 0, None).unwrap();
        let p0 = generator_forward(&m, 0, &ex).unwrap();
        let p1 = generator_forward(&m, 1, &ex).unwrap();
        assert_ne!(p0, p1);
        assert!(p0.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn padding_probabilities_are_zero() {
        let m = small(1, Pooling::MaskedMean);
        let b = batch();
        let mut tape = Tape::new(&m.store);
        let e = m.embed(&mut tape, &b).unwrap();
        let (_, probs) = m.generator_probs(&mut tape, 0, &e, &b).unwrap();
        assert_eq!(tape.value(probs[3]).data()[1], 0.0);
    }

    #[test]
    fn mgr_forward_shapes_and_determinism() {
        let m = small(2, Pooling::Max);
        let ex = Example::new(vec![2, 3, 4, 5, 6], 1, None).unwrap();
        let a = mgr_forward(&m, &ex, 1.0, SampleMode::Train, 7).unwrap();
        let b = mgr_forward(&m, &ex, 1.0, SampleMode::Train, 7).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        for (mask, y) in &a {
            assert_eq!(mask.len(), 5);
            assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predictor_ignores_masked_tokens() {
        let m = small(1, Pooling::MaskedMean);
        let a = Example::new(vec![2, 3, 4], 0, None).unwrap();
        let b = Example::new(vec![2, 7, 4], 0, None).unwrap();
        let mask = [1.0, 0.0, 1.0];
        let (pa, pb) = (
            predictor_forward(&m, &a, &mask).unwrap(),
            predictor_forward(&m, &b, &mask).unwrap(),
        );
        assert_eq!(pa, pb);
        assert!(apply_mask(&m, &a, &mask)
            .unwrap()
            .row(1)
            .iter()
            .all(|&x| x == 0.0));
        assert!(matches!(
            predictor_forward(&m, &a, &[1.0]),
            Err(ModelError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        let m = small(1, Pooling::MaskedMean);
        let ex = Example::new(vec![2, 99], 0, None).unwrap();
        assert!(matches!(
            generator_forward(&m, 0, &ex),
            Err(ModelError::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn full_pipeline_gradients_match_finite_differences() {
        for pooling in [Pooling::MaskedMean, Pooling::Max] {
            let report = pipeline_grad_check(pooling, &GradCheckOptions::default()).unwrap();
            assert!(report.passed(), "{pooling}: {report:?}");
            assert!(report.params.iter().any(|p| p.name.starts_with("gen2.")));
        }
    }
}
