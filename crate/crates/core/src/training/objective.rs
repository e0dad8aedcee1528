//! The cooperative objective: per-generator cross-entropy plus the
//! sparsity/continuity penalty, summed over generators.

use super::{TrainConfig, TrainError};
use crate::data::Batch;
use crate::models::{MgrModel, SampleMode, SamplingStreams};
use crate::numeric::{NumericError, Tape, Tensor, Var};

/// `lambda1 * |sum(m)/l - s| + lambda2 * sum_t |m_t - m_{t-1}|` over the
/// first `l` entries of `mask`.
pub fn omega(
    mask: &[f64],
    l: usize,
    lambda1: f64,
    lambda2: f64,
    s: f64,
) -> Result<f64, TrainError> {
    if l == 0 {
        return Err(TrainError::EmptyMask);
    }
    if l > mask.len() {
        return Err(TrainError::Config {
            field: "l".into(),
            reason: format!("length {l} exceeds mask of {}", mask.len()),
        });
    }
    let m = &mask[..l];
    let selected: f64 = m.iter().sum();
    let jumps: f64 = m.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(lambda1 * (selected / l as f64 - s).abs() + lambda2 * jumps)
}

/// Per-example penalty `[batch, 1]` on the tape. `masks` must already be
/// zero past each row's length.
pub(crate) fn omega_on_tape(
    tape: &mut Tape<'_>,
    masks: &[Var],
    lengths: &[usize],
    config: &TrainConfig,
) -> Result<Var, NumericError> {
    let rows = lengths.len();
    let total = tape.add_n(masks)?;
    let inv_len = tape.constant(Tensor::new(
        vec![rows, 1],
        lengths.iter().map(|&l| 1.0 / l as f64).collect(),
    )?);
    let frac = tape.mul(total, inv_len)?;
    let dev = tape.add_scalar(frac, -config.sparsity_target);
    let dev = tape.abs(dev);
    let sparse = tape.scale(dev, config.lambda1);

    if masks.len() < 2 {
        return Ok(sparse);
    }
    let mut jumps = Vec::with_capacity(masks.len() - 1);
    for t in 1..masks.len() {
        let d = tape.sub(masks[t], masks[t - 1])?;
        let d = tape.abs(d);
        if lengths.iter().all(|&l| t < l) {
            jumps.push(d);
        } else {
            let keep = tape.constant(Tensor::new(
                vec![rows, 1],
                lengths
                    .iter()
                    .map(|&l| if t < l { 1.0 } else { 0.0 })
                    .collect(),
            )?);
            jumps.push(tape.mul(d, keep)?);
        }
    }
    let cont = tape.add_n(&jumps)?;
    let cont = tape.scale(cont, config.lambda2);
    tape.add(sparse, cont)
}

/// Per-generator parts of one loss evaluation, all batch means.
#[derive(Clone, Debug, PartialEq)]
pub struct LossDiagnostics {
    pub loss: f64,
    pub cross_entropy: Vec<f64>,
    pub omega: Vec<f64>,
    /// Selected fraction of the forward (hard) masks.
    pub sparsity: Vec<f64>,
}

pub(crate) struct LossGraph {
    pub loss: Var,
    pub diagnostics: LossDiagnostics,
}

fn finite(value: f64, component: String) -> Result<f64, TrainError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TrainError::NonFinite { component, value })
    }
}

/// Builds `sum_i [CE_i + Omega_i]` averaged over the batch.
pub(crate) fn build_loss(
    tape: &mut Tape<'_>,
    model: &MgrModel,
    batch: &Batch,
    config: &TrainConfig,
    mode: SampleMode,
    streams: &mut SamplingStreams,
) -> Result<LossGraph, TrainError> {
    if batch.size() == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let passes = model.forward_on_tape(tape, batch, config.tau, mode, streams)?;
    let mut terms = Vec::with_capacity(2 * passes.len());
    let mut diag = LossDiagnostics {
        loss: 0.0,
        cross_entropy: Vec::new(),
        omega: Vec::new(),
        sparsity: Vec::new(),
    };
    for (i, pass) in passes.iter().enumerate() {
        let ce = tape.cross_entropy(pass.class_logits, &batch.labels)?;
        let ce = tape.mean(ce);
        let relaxed: Vec<Var> = pass.masks.iter().map(|m| m.relaxed).collect();
        let om = omega_on_tape(tape, &relaxed, &batch.lengths, config)?;
        let om = tape.mean(om);
        diag.cross_entropy
            .push(finite(tape.value(ce).data()[0], format!("ce_g{}", i + 1))?);
        diag.omega.push(finite(
            tape.value(om).data()[0],
            format!("omega_g{}", i + 1),
        )?);

        let mut frac = 0.0;
        for (r, &l) in batch.lengths.iter().enumerate() {
            let sel: f64 = pass.masks[..l]
                .iter()
                .map(|m| tape.value(m.mask).data()[r])
                .sum();
            frac += sel / l as f64;
        }
        diag.sparsity.push(frac / batch.size() as f64);
        terms.push(ce);
        terms.push(om);
    }
    let loss = tape.add_n(&terms)?;
    diag.loss = finite(tape.value(loss).data()[0], "loss".into())?;
    Ok(LossGraph {
        loss,
        diagnostics: diag,
    })
}

/// Loss and diagnostics for one batch without updating anything.
pub fn mgr_loss(
    model: &MgrModel,
    batch: &Batch,
    config: &TrainConfig,
    streams: &mut SamplingStreams,
) -> Result<LossDiagnostics, TrainError> {
    let mut tape = Tape::new(&model.store);
    Ok(build_loss(&mut tape, model, batch, config, SampleMode::Train, streams)?.diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_examples() {
        assert_eq!(omega(&[1.0, 1.0, 0.0, 0.0], 4, 1.0, 1.0, 0.5).unwrap(), 1.0);
        assert_eq!(omega(&[1.0, 0.0, 1.0, 0.0], 4, 1.0, 1.0, 0.5).unwrap(), 3.0);
        assert_eq!(omega(&[0.0; 4], 4, 2.0, 1.0, 0.25).unwrap(), 0.5);
        assert!(matches!(
            omega(&[1.0], 0, 1.0, 1.0, 0.5),
            Err(TrainError::EmptyMask)
        ));
    }

    #[test]
    fn tape_penalty_matches_scalar_version() {
        let store = crate::numeric::ParamStore::new();
        let mut tape = Tape::new(&store);
        let rows = [[0.2, 0.9, 0.4, 0.0], [0.7, 0.1, 0.0, 0.0]];
        let lengths = [4, 2];
        let cols: Vec<Var> = (0..4)
            .map(|t| tape.constant(Tensor::new(vec![2, 1], vec![rows[0][t], rows[1][t]]).unwrap()))
            .collect();
        let cfg = TrainConfig {
            lambda1: 1.5,
            lambda2: 0.3,
            sparsity_target: 0.2,
            ..TrainConfig::default()
        };
        let v = omega_on_tape(&mut tape, &cols, &lengths, &cfg).unwrap();
        for r in 0..2 {
            let want = omega(&rows[r], lengths[r], 1.5, 0.3, 0.2).unwrap();
            assert!((tape.value(v).data()[r] - want).abs() < 1e-15);
        }
    }
}
