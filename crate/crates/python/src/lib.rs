//! Python bindings: synthetic corpora, training, inference, checkpoints,
//! and the analytic tools.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mgr_core::data::{generate_synthetic, Example, SyntheticCorpus, SyntheticSpec};
use mgr_core::entropy::{verify_theorem2, JointDistribution};
use mgr_core::evaluation;
use mgr_core::experiments::run_on_corpus;
use mgr_core::game::{self, GameSpec};
use mgr_core::models::{load_checkpoint, save_checkpoint, Checkpoint, MgrModel, Pooling};
use mgr_core::numeric::{check_primitives, GradCheckOptions};
use mgr_core::training::{self, infer, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Records as `(token_ids, label, gold_mask or None)` tuples.
type Record = (Vec<usize>, usize, Option<Vec<u8>>);

fn records(examples: &[Example]) -> Vec<Record> {
    examples
        .iter()
        .map(|e| (e.token_ids.clone(), e.label, e.gold_mask.clone()))
        .collect()
}

/// A generated synthetic corpus.
#[pyclass(name = "SyntheticCorpus", module = "mgr_py")]
pub struct PyCorpus {
    pub inner: SyntheticCorpus,
}

#[pymethods]
impl PyCorpus {
    #[new]
    #[pyo3(signature = (seed=0, rho=0.8, spurious_first=false, train_size=2000, dev_size=500, test_size=500))]
    pub fn new(
        seed: u64,
        rho: f64,
        spurious_first: bool,
        train_size: usize,
        dev_size: usize,
        test_size: usize,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            seed,
            rho,
            spurious_first,
            train_size,
            dev_size,
            test_size,
            ..SyntheticSpec::default()
        };
        Ok(PyCorpus {
            inner: generate_synthetic(&spec).map_err(value_err)?,
        })
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.len()
    }

    /// `split` is one of `train`, `dev`, `test`.
    pub fn records(&self, split: &str) -> PyResult<Vec<Record>> {
        let s = match split {
            "train" => &self.inner.train,
            "dev" => &self.inner.dev,
            "test" => &self.inner.test,
            other => return Err(value_err(format!("unknown split `{other}`"))),
        };
        Ok(records(&s.split.examples))
    }

    pub fn tokens(&self, ids: Vec<usize>) -> Vec<String> {
        ids.iter()
            .map(|&i| self.inner.vocab.token(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// Training hyperparameters; keyword arguments map onto config keys.
#[pyclass(name = "TrainConfig", module = "mgr_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    pub inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Starts from the desk-scale synthetic settings, then applies `text`
    /// (`key = value` lines).
    #[new]
    #[pyo3(signature = (text=None, n=3, seed=0))]
    pub fn new(text: Option<&str>, n: usize, seed: u64) -> PyResult<Self> {
        let mut inner = mgr_core::experiments::synthetic_train_config(n, seed);
        if let Some(t) = text {
            inner.apply(t).map_err(value_err)?;
        }
        inner.validate().map_err(value_err)?;
        Ok(PyTrainConfig { inner })
    }

    /// Sets one key; the config is left unchanged when the result is invalid.
    pub fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(value_err)?;
        next.validate().map_err(value_err)?;
        self.inner = next;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// `(generator_rates, predictor_rate)`.
    pub fn schedule(&self) -> (Vec<f64>, f64) {
        let s = self.inner.schedule();
        (s.generator_rates, s.predictor_rate)
    }
}

/// A trained (or freshly initialized) model with its vocabulary.
#[pyclass(name = "Model", module = "mgr_py")]
pub struct PyModel {
    pub inner: Checkpoint,
    /// Test metrics from training, when trained through [`PyModel::train`].
    #[pyo3(get)]
    pub test_f1: Option<f64>,
    #[pyo3(get)]
    pub test_accuracy: Option<f64>,
}

#[pymethods]
impl PyModel {
    /// Optional predictor skew, then training on `corpus`.
    #[staticmethod]
    #[pyo3(signature = (corpus, config, skew_epochs=0))]
    pub fn train(
        py: Python<'_>,
        corpus: &PyCorpus,
        config: &PyTrainConfig,
        skew_epochs: i64,
    ) -> PyResult<Self> {
        let result = py
            .detach(|| run_on_corpus(&corpus.inner, &config.inner, skew_epochs))
            .map_err(value_err)?;
        let meta = config
            .inner
            .entries()
            .into_iter()
            .map(|(k, v)| (format!("train.{k}"), v))
            .collect();
        Ok(PyModel {
            test_f1: Some(result.f1()),
            test_accuracy: Some(result.report.accuracy),
            inner: Checkpoint {
                model: result.model,
                vocab: corpus.inner.vocab.clone(),
                meta,
            },
        })
    }

    #[staticmethod]
    pub fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_checkpoint(&path).map_err(value_err)?,
            test_f1: None,
            test_accuracy: None,
        })
    }

    pub fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner).map_err(value_err)
    }

    #[getter]
    pub fn generators(&self) -> usize {
        self.inner.model.generator_count()
    }

    /// Generator-1 rationale and class probabilities for one text.
    pub fn infer(&self, token_ids: Vec<usize>) -> PyResult<(Vec<u8>, Vec<f64>)> {
        let ex = Example::new(token_ids, 0, None).map_err(value_err)?;
        infer(&self.inner.model, &ex).map_err(value_err)
    }

    /// Per-token selection probabilities of generator `i` (0-based).
    pub fn selection_probs(&self, i: usize, token_ids: Vec<usize>) -> PyResult<Vec<f64>> {
        let ex = Example::new(token_ids, 0, None).map_err(value_err)?;
        mgr_core::models::generator_forward(&self.inner.model, i, &ex).map_err(value_err)
    }
}

#[pyfunction]
pub fn p_spurious(n: usize, pc: f64) -> PyResult<f64> {
    game::p_spurious(n, pc).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (ps, pc, odd_only=true))]
pub fn min_generators(ps: f64, pc: f64, odd_only: bool) -> PyResult<usize> {
    game::min_generators(ps, pc, odd_only).map_err(value_err)
}

/// `(mean, stderr)` of the Monte Carlo estimate.
#[pyfunction]
#[pyo3(signature = (n, pc, trials=100_000, seed=0))]
pub fn monte_carlo_spurious(n: usize, pc: f64, trials: u64, seed: u64) -> PyResult<(f64, f64)> {
    let e = game::monte_carlo_spurious(n, pc, trials, seed).map_err(value_err)?;
    Ok((e.mean, e.stderr))
}

#[pyfunction]
pub fn estimate_pc(correlated: u64, decorrelated: u64) -> PyResult<f64> {
    game::estimate_pc(correlated, decorrelated).map_err(value_err)
}

/// `(payoff, d payoff / d alpha)` for the generator game.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
pub fn predictor_payoff(
    n: usize,
    k: usize,
    a: f64,
    b: f64,
    pc: f64,
    ps: f64,
    alpha: f64,
) -> PyResult<(f64, f64)> {
    let spec = GameSpec {
        n,
        a,
        b,
        pc,
        ps,
        alpha,
        k,
    };
    Ok((
        game::predictor_payoff(&spec).map_err(value_err)?,
        game::payoff_gradient(&spec).map_err(value_err)?,
    ))
}

#[pyfunction]
pub fn omega(mask: Vec<f64>, l: usize, lambda1: f64, lambda2: f64, s: f64) -> PyResult<f64> {
    training::omega(&mask, l, lambda1, lambda2, s).map_err(value_err)
}

/// Micro-averaged `(precision, recall, f1)`; `None` gold entries are skipped.
#[pyfunction]
pub fn token_prf1(pred: Vec<Vec<u8>>, gold: Vec<Option<Vec<u8>>>) -> PyResult<(f64, f64, f64)> {
    let m = evaluation::token_prf1(&pred, &gold).map_err(value_err)?;
    Ok((m.precision, m.recall, m.f1))
}

#[pyfunction]
pub fn generator_overlap(a: Vec<u8>, b: Vec<u8>) -> PyResult<f64> {
    evaluation::generator_overlap(&a, &b).map_err(value_err)
}

/// `(marginal entropies, joint entropy, lower bound holds, upper bound holds)`
/// in bits, for a row-major joint table over `supports`.
#[pyfunction]
pub fn entropy_bounds(
    supports: Vec<usize>,
    probs: Vec<f64>,
) -> PyResult<(Vec<f64>, f64, bool, bool)> {
    let d = JointDistribution::new(supports, probs).map_err(value_err)?;
    let r = verify_theorem2(&d);
    Ok((r.marginals, r.joint, r.lower_ok, r.upper_ok))
}

/// Worst relative error over every tape primitive and both pooling
/// variants of the full pipeline.
#[pyfunction]
#[pyo3(signature = (seed=0))]
pub fn grad_check(seed: u64) -> PyResult<f64> {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let mut worst: f64 = 0.0;
    for (_, r) in check_primitives(&opts).map_err(value_err)? {
        worst = worst.max(r.max_rel_error());
    }
    for pooling in [Pooling::MaskedMean, Pooling::Max] {
        let r = mgr_core::models::pipeline_grad_check(pooling, &opts).map_err(value_err)?;
        worst = worst.max(r.max_rel_error());
    }
    Ok(worst)
}

/// A freshly initialized model, untrained, for shape and API checks.
#[pyfunction]
#[pyo3(signature = (corpus, config))]
pub fn init_model(corpus: &PyCorpus, config: &PyTrainConfig) -> PyResult<PyModel> {
    let c = &config.inner;
    let v = &corpus.inner.vocab;
    let model =
        MgrModel::new(c.model_config(v.len(), v.class_count()), c.seed, None).map_err(value_err)?;
    Ok(PyModel {
        inner: Checkpoint {
            model,
            vocab: v.clone(),
            meta: Default::default(),
        },
        test_f1: None,
        test_accuracy: None,
    })
}

#[pymodule]
fn mgr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(p_spurious, m)?)?;
    m.add_function(wrap_pyfunction!(min_generators, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_spurious, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_pc, m)?)?;
    m.add_function(wrap_pyfunction!(predictor_payoff, m)?)?;
    m.add_function(wrap_pyfunction!(omega, m)?)?;
    m.add_function(wrap_pyfunction!(token_prf1, m)?)?;
    m.add_function(wrap_pyfunction!(generator_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(init_model, m)?)?;
    Ok(())
}
