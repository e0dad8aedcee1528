//! Binary-concrete (Gumbel-sigmoid) mask sampling with a straight-through
//! hard forward value.
//!
//! In training, `soft = sigmoid((logit + L) / tau)` with logistic noise
//! `L = ln u - ln(1 - u)`, and the forward mask is `1[soft > 0.5]`, which
//! equals `1[logit + L > 0]` and therefore has marginal `P(m = 1) = p`.
//! Gradients flow through `soft`. Evaluation thresholds `p` at 0.5 with no
//! noise.

use rand::Rng;

use super::ModelError;
use crate::numeric::{sigmoid_scalar, NumericError, Tape, Tensor, Var};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
    /// Forward value is the relaxed sample itself. Used to verify the
    /// straight-through gradient path against finite differences.
    Relaxed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSample {
    pub probs: Vec<f64>,
    pub relaxed: Vec<f64>,
    pub hard_mask: Vec<u8>,
    pub temperature: f64,
}

impl MaskSample {
    pub fn len(&self) -> usize {
        self.hard_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard_mask.is_empty()
    }

    /// Forward value used downstream for `mode`.
    pub fn values(&self, mode: SampleMode) -> Vec<f64> {
        match mode {
            SampleMode::Relaxed => self.relaxed.clone(),
            _ => self.hard_mask.iter().map(|&m| m as f64).collect(),
        }
    }
}

pub(crate) fn logistic_noise(rng: &mut rng::Rng) -> f64 {
    let u: f64 = rng
        .gen::<f64>()
        .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    u.ln() - (-u).ln_1p()
}

fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

fn check_temperature(tau: f64) -> Result<(), ModelError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ModelError::Temperature(tau));
    }
    Ok(())
}

/// Samples a mask from per-token selection probabilities.
pub fn sample_mask(
    probs: &[f64],
    tau: f64,
    mode: SampleMode,
    rng: &mut rng::Rng,
) -> Result<MaskSample, ModelError> {
    check_temperature(tau)?;
    if let Some(i) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(ModelError::Probability {
            index: i,
            value: probs[i],
        });
    }
    let (relaxed, hard_mask) = match mode {
        SampleMode::Eval => (
            probs.to_vec(),
            probs.iter().map(|&p| u8::from(p > 0.5)).collect(),
        ),
        SampleMode::Train | SampleMode::Relaxed => {
            let mut relaxed = Vec::with_capacity(probs.len());
            let mut hard = Vec::with_capacity(probs.len());
            for &p in probs {
                let noisy = logit(p) + logistic_noise(rng);
                relaxed.push(sigmoid_scalar(noisy / tau));
                hard.push(u8::from(noisy > 0.0));
            }
            (relaxed, hard)
        }
    };
    Ok(MaskSample {
        probs: probs.to_vec(),
        relaxed,
        hard_mask,
        temperature: tau,
    })
}

/// A sampled `[batch, 1]` mask column on a tape.
#[derive(Clone, Copy, Debug)]
pub struct MaskColumn {
    /// Value fed downstream (hard in train/eval, relaxed in `Relaxed`).
    pub mask: Var,
    /// Differentiable relaxed sample (equal to `probs` in eval mode).
    pub relaxed: Var,
}

/// Samples one position for every row from selection logits on the tape.
/// `valid` zeroes padded rows.
pub(crate) fn sample_column(
    tape: &mut Tape<'_>,
    logits: Var,
    probs: Var,
    valid: &[f64],
    tau: f64,
    mode: SampleMode,
    rng: &mut rng::Rng,
) -> Result<MaskColumn, NumericError> {
    let rows = valid.len();
    match mode {
        SampleMode::Eval => {
            let hard: Vec<f64> = tape
                .value(probs)
                .data()
                .iter()
                .map(|&p| if p > 0.5 { 1.0 } else { 0.0 })
                .collect();
            let mask = tape.constant(Tensor::new(vec![rows, 1], hard)?);
            Ok(MaskColumn {
                mask,
                relaxed: probs,
            })
        }
        SampleMode::Train | SampleMode::Relaxed => {
            let noise: Vec<f64> = (0..rows).map(|_| logistic_noise(rng)).collect();
            let noise = tape.constant(Tensor::new(vec![rows, 1], noise)?);
            let noisy = tape.add(logits, noise)?;
            let scaled = tape.scale(noisy, 1.0 / tau);
            let soft = tape.sigmoid(scaled);
            let valid_t = tape.constant(Tensor::new(vec![rows, 1], valid.to_vec())?);
            let relaxed = tape.mul(soft, valid_t)?;
            if mode == SampleMode::Relaxed {
                return Ok(MaskColumn {
                    mask: relaxed,
                    relaxed,
                });
            }
            let hard: Vec<f64> = tape
                .value(noisy)
                .data()
                .iter()
                .zip(valid)
                .map(|(&x, &v)| if x > 0.0 && v > 0.0 { 1.0 } else { 0.0 })
                .collect();
            let mask = tape.straight_through(relaxed, Tensor::new(vec![rows, 1], hard)?)?;
            Ok(MaskColumn { mask, relaxed })
        }
    }
}

pub(crate) fn validate_temperature(tau: f64) -> Result<(), ModelError> {
    check_temperature(tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frac_selected(p: f64, draws: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, "sampling");
        let probs = vec![p; draws];
        let s = sample_mask(&probs, 1.0, SampleMode::Train, &mut r).unwrap();
        s.hard_mask.iter().map(|&m| m as f64).sum::<f64>() / draws as f64
    }

    #[test]
    fn symmetric_probability_gives_half() {
        let n = 100_000;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((frac_selected(0.5, n, 1) - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn hard_output_keeps_bernoulli_marginal() {
        let f = frac_selected(0.8, 100_000, 2);
        assert!((f - 0.8).abs() < 0.004, "{f}");
    }

    #[test]
    fn eval_mode_thresholds() {
        let mut r = rng::stream(0, "x");
        let s = sample_mask(&[0.9, 0.1], 1.0, SampleMode::Eval, &mut r).unwrap();
        assert_eq!(s.hard_mask, vec![1, 0]);
    }

    #[test]
    fn rejects_non_positive_temperature() {
        let mut r = rng::stream(0, "x");
        assert!(matches!(
            sample_mask(&[0.5], 0.0, SampleMode::Train, &mut r),
            Err(ModelError::Temperature(_))
        ));
        assert!(sample_mask(&[0.5], -1.0, SampleMode::Eval, &mut r).is_err());
    }

    #[test]
    fn relaxed_and_hard_agree_on_side_of_half() {
        let mut r = rng::stream(4, "x");
        let probs: Vec<f64> = (1..50).map(|i| i as f64 / 50.0).collect();
        let s = sample_mask(&probs, 0.5, SampleMode::Train, &mut r).unwrap();
        for (soft, hard) in s.relaxed.iter().zip(&s.hard_mask) {
            assert_eq!(*hard == 1, *soft > 0.5);
        }
    }

    #[test]
    fn degenerate_probabilities() {
        let mut r = rng::stream(4, "x");
        let s = sample_mask(&[0.0, 1.0], 1.0, SampleMode::Train, &mut r).unwrap();
        assert_eq!(s.hard_mask, vec![0, 1]);
        assert!(sample_mask(&[1.2], 1.0, SampleMode::Train, &mut r).is_err());
    }
}
