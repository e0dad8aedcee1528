use std::fmt::Write as _;
use std::path::Path;

use super::TrainError;
use crate::models::{ModelConfig, Pooling};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Number of generators.
    pub n: usize,
    /// Base learning rate.
    pub eta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Target selected fraction.
    pub sparsity_target: f64,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub share_encoder: bool,
    pub embed_dim: usize,
    pub hidden_size: usize,
    pub pooling: Pooling,
    pub train_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n: 3,
            eta: 1e-3,
            lambda1: 1.0,
            lambda2: 1.0,
            sparsity_target: 0.125,
            tau: 1.0,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            early_stop_patience: 3,
            share_encoder: false,
            embed_dim: 100,
            hidden_size: 200,
            pooling: Pooling::MaskedMean,
            train_embeddings: false,
        }
    }
}

fn field(name: &str, reason: impl Into<String>) -> TrainError {
    TrainError::Config {
        field: name.to_string(),
        reason: reason.into(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n < 1 {
            return Err(field("n", "must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(field("eta", format!("must be positive, got {}", self.eta)));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(field(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.sparsity_target > 0.0 && self.sparsity_target < 1.0) {
            return Err(field(
                "sparsity_target",
                format!("must lie in (0, 1), got {}", self.sparsity_target),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(field("tau", format!("must be positive, got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be positive"));
        }
        if self.embed_dim == 0 {
            return Err(field("embed_dim", "must be positive"));
        }
        if self.hidden_size == 0 {
            return Err(field("hidden_size", "must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, class_count: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_size: self.hidden_size,
            class_count,
            generators: self.n,
            share_encoder: self.share_encoder,
            pooling: self.pooling,
            train_embeddings: self.train_embeddings,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.eta, self.n)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, TrainError> {
            v.parse()
                .map_err(|_| field(key, format!("cannot parse `{v}`")))
        }
        match key {
            "n" => self.n = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "sparsity_target" => self.sparsity_target = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, value)?,
            "share_encoder" => self.share_encoder = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_size" => self.hidden_size = parse(key, value)?,
            "pooling" => self.pooling = value.parse().map_err(|e: String| field(key, e))?,
            "train_embeddings" => self.train_embeddings = parse(key, value)?,
            other => return Err(field(other, "unknown key")),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in declaration order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n", self.n.to_string()),
            ("eta", self.eta.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("sparsity_target", self.sparsity_target.to_string()),
            ("tau", self.tau.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("share_encoder", self.share_encoder.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("pooling", self.pooling.to_string()),
            ("train_embeddings", self.train_embeddings.to_string()),
        ]
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        cfg.apply(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values without
    /// validating.
    pub fn apply(&mut self, text: &str) -> Result<(), TrainError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                field(
                    &format!("line {}", i + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Learning rates per parameter group: generator `i` (1-based) gets `i * eta`
/// and the predictor `eta / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub generator_rates: Vec<f64>,
    pub predictor_rate: f64,
}

impl LrSchedule {
    pub fn new(eta: f64, n: usize) -> Self {
        LrSchedule {
            generator_rates: (1..=n).map(|i| i as f64 * eta).collect(),
            predictor_rate: eta / n as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_rates() {
        let s = LrSchedule::new(0.01, 3);
        assert_eq!(s.generator_rates, vec![0.01, 0.02, 0.03]);
        assert_eq!(s.predictor_rate, 0.01 / 3.0);
        assert_eq!(LrSchedule::new(0.5, 1).predictor_rate, 0.5);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.n = 5;
        c.eta = 2.5e-4;
        c.pooling = Pooling::Max;
        c.share_encoder = true;
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = TrainConfig::parse("# header\n\nn = 1 # rnp\nlambda2=0.1\n").unwrap();
        assert_eq!((c.n, c.lambda2), (1, 0.1));
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = TrainConfig::parse("sparsity_target = 1.5").unwrap_err();
        assert!(err.to_string().contains("sparsity_target"), "{err}");
        let err = TrainConfig::parse("eta = fast").unwrap_err();
        assert!(err.to_string().contains("eta"), "{err}");
        let err = TrainConfig::parse("colour = red").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        assert!(TrainConfig::parse("n = 0").is_err());
        assert!(TrainConfig::parse("lambda1 = -1").is_err());
    }
}
