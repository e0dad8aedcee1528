//! Rationale quality metrics and the inter-generator overlap metric.
//!
//! P/R/F1 are micro-averaged over every token of every annotated example.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("example {index}: mask has {pred} entries, gold has {gold}")]
    LengthMismatch {
        index: usize,
        pred: usize,
        gold: usize,
    },
    #[error("{0} predictions for {1} labels")]
    CountMismatch(usize, usize),
    #[error("empty prediction at example {0}")]
    EmptyPrediction(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Token-level precision, recall and F1. Examples without a gold mask are
/// skipped; zero denominators give 0.
pub fn token_prf1(pred: &[Vec<u8>], gold: &[Option<Vec<u8>>]) -> Result<Prf1, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::CountMismatch(pred.len(), gold.len()));
    }
    let (mut tp, mut npred, mut ngold) = (0usize, 0usize, 0usize);
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        let Some(g) = g else { continue };
        if p.len() != g.len() {
            return Err(EvalError::LengthMismatch {
                index,
                pred: p.len(),
                gold: g.len(),
            });
        }
        for (&a, &b) in p.iter().zip(g) {
            let (a, b) = (a != 0, b != 0);
            tp += usize::from(a && b);
            npred += usize::from(a);
            ngold += usize::from(b);
        }
    }
    let precision = ratio(tp, npred);
    let recall = ratio(tp, ngold);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
    })
}

/// Mean selected fraction per example; masks cover the true length.
pub fn sparsity(masks: &[Vec<u8>]) -> f64 {
    if masks.is_empty() {
        return 0.0;
    }
    let total: f64 = masks
        .iter()
        .map(|m| {
            if m.is_empty() {
                0.0
            } else {
                m.iter().filter(|&&x| x != 0).count() as f64 / m.len() as f64
            }
        })
        .sum();
    total / masks.len() as f64
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in probs.iter().enumerate() {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i)
}

pub fn accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::CountMismatch(predictions.len(), labels.len()));
    }
    let mut correct = 0usize;
    for (i, (p, &y)) in predictions.iter().zip(labels).enumerate() {
        let k = argmax(p).ok_or(EvalError::EmptyPrediction(i))?;
        correct += usize::from(k == y);
    }
    Ok(ratio(correct, labels.len()))
}

/// `|Mi - Mj|_1 / (|Mi|_1 + |Mj|_1)`, the share of selected tokens on
/// which two generators disagree. Two empty masks give 0.
pub fn generator_overlap(a: &[u8], b: &[u8]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            index: 0,
            pred: a.len(),
            gold: b.len(),
        });
    }
    let diff = a
        .iter()
        .zip(b)
        .filter(|(x, y)| (**x != 0) != (**y != 0))
        .count();
    let total = a.iter().chain(b).filter(|&&x| x != 0).count();
    Ok(ratio(diff, total))
}

/// Mean of [`generator_overlap`] over aligned examples.
pub fn batch_overlap(a: &[Vec<u8>], b: &[Vec<u8>]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::CountMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (index, (x, y)) in a.iter().zip(b).enumerate() {
        sum += generator_overlap(x, y).map_err(|e| match e {
            EvalError::LengthMismatch { pred, gold, .. } => {
                EvalError::LengthMismatch { index, pred, gold }
            }
            other => other,
        })?;
    }
    Ok(sum / a.len() as f64)
}

/// Mean overlap over every generator pair `(i, j)`, `i < j`, in that order.
pub fn pairwise_overlaps(masks: &[Vec<Vec<u8>>]) -> Result<Vec<((usize, usize), f64)>, EvalError> {
    let mut out = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            out.push(((i, j), batch_overlap(&masks[i], &masks[j])?));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// `None` when no example carries a gold mask.
    pub prf1: Option<Prf1>,
    pub sparsity: f64,
    pub accuracy: f64,
    pub examples: usize,
    pub masks: Option<Vec<Vec<u8>>>,
}

impl EvalReport {
    pub fn compute(
        masks: &[Vec<u8>],
        predictions: &[Vec<f64>],
        labels: &[usize],
        gold: &[Option<Vec<u8>>],
        keep_masks: bool,
    ) -> Result<Self, EvalError> {
        let prf1 = if gold.iter().any(Option::is_some) {
            Some(token_prf1(masks, gold)?)
        } else {
            None
        };
        Ok(EvalReport {
            prf1,
            sparsity: sparsity(masks),
            accuracy: accuracy(predictions, labels)?,
            examples: labels.len(),
            masks: keep_masks.then(|| masks.to_vec()),
        })
    }

    pub fn f1(&self) -> f64 {
        self.prf1.map_or(0.0, |m| m.f1)
    }

    pub const CSV_HEADER: &'static str = "precision,recall,f1,sparsity,accuracy,examples";

    /// One CSV row; P/R/F1 cells are empty without gold annotations.
    pub fn csv_row(&self) -> String {
        let prf = match self.prf1 {
            Some(m) => format!("{},{},{}", m.precision, m.recall, m.f1),
            None => ",,".to_string(),
        };
        format!(
            "{prf},{},{},{}",
            self.sparsity, self.accuracy, self.examples
        )
    }
}

/// `id<TAB>label<TAB>prediction<TAB>mask` lines, mask as a 0/1 string.
pub fn rationale_dump(labels: &[usize], predictions: &[usize], masks: &[Vec<u8>]) -> String {
    let mut s = String::new();
    for (i, ((y, p), m)) in labels.iter().zip(predictions).zip(masks).enumerate() {
        let bits: String = m.iter().map(|&x| if x != 0 { '1' } else { '0' }).collect();
        let _ = writeln!(s, "{i}\t{y}\t{p}\t{bits}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prf1_examples() {
        let m = token_prf1(&[vec![1, 1, 0, 0]], &[Some(vec![1, 0, 1, 0])]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        let same = token_prf1(&[vec![0, 1, 1]], &[Some(vec![0, 1, 1])]).unwrap();
        assert_eq!(same.f1, 1.0);
        let none = token_prf1(&[vec![0, 0]], &[Some(vec![1, 0])]).unwrap();
        assert_eq!(none, Prf1::default());
        assert_eq!(
            token_prf1(&[vec![1], vec![1, 0]], &[None, Some(vec![1])]),
            Err(EvalError::LengthMismatch {
                index: 1,
                pred: 2,
                gold: 1
            })
        );
    }

    #[test]
    fn unannotated_examples_are_skipped() {
        let m = token_prf1(&[vec![1, 1], vec![1, 0]], &[None, Some(vec![1, 0])]).unwrap();
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(&[vec![1, 0, 0, 0], vec![1, 1, 0, 0]]), 0.375);
        assert_eq!(sparsity(&[vec![0, 0], vec![0, 0, 0]]), 0.0);
        assert_eq!(sparsity(&[vec![1, 0], vec![0, 1, 1, 0]]), 0.5);
    }

    #[test]
    fn accuracy_ties_go_to_lowest_class() {
        assert_eq!(accuracy(&[vec![0.5, 0.5]], &[0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[vec![0.5, 0.5]], &[1]).unwrap(), 0.0);
        assert_eq!(
            accuracy(&[vec![0.9, 0.1], vec![0.2, 0.8]], &[0, 1]).unwrap(),
            1.0
        );
    }

    #[test]
    fn coin_flip_accuracy_is_half() {
        use rand::Rng;
        let mut r = crate::rng::stream(3, "coin");
        let n = 10_000;
        let preds: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                if r.gen_bool(0.5) {
                    vec![0.9, 0.1]
                } else {
                    vec![0.1, 0.9]
                }
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let acc = accuracy(&preds, &labels).unwrap();
        assert!((acc - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{acc}");
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(generator_overlap(&[1, 1, 0], &[1, 1, 0]).unwrap(), 0.0);
        assert_eq!(generator_overlap(&[1, 0], &[0, 1]).unwrap(), 1.0);
        assert_eq!(
            generator_overlap(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(),
            0.5
        );
        assert_eq!(generator_overlap(&[0, 0], &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn report_without_gold_leaves_prf_empty() {
        let r =
            EvalReport::compute(&[vec![1, 0]], &[vec![0.3, 0.7]], &[1], &[None], false).unwrap();
        assert!(r.prf1.is_none());
        assert!(r.csv_row().starts_with(",,,"));
    }

    #[test]
    fn dump_format() {
        assert_eq!(
            rationale_dump(&[1], &[0], &[vec![0, 1, 1]]),
            "0\t1\t0\t011\n"
        );
    }

    fn masks(len: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (
            prop::collection::vec(0u8..2, len),
            prop::collection::vec(0u8..2, len),
        )
    }

    proptest! {
        #[test]
        fn prf1_matches_confusion_matrix((p, g) in (1usize..12).prop_flat_map(masks)) {
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (&a, &b) in p.iter().zip(&g) {
                match (a, b) {
                    (1, 1) => tp += 1.0,
                    (1, 0) => fp += 1.0,
                    (0, 1) => fneg += 1.0,
                    _ => {}
                }
            }
            let m = token_prf1(std::slice::from_ref(&p), &[Some(g.clone())]).unwrap();
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            prop_assert!((m.precision - prec).abs() < 1e-12);
            prop_assert!((m.recall - rec).abs() < 1e-12);
            if tp + fp > 0.0 && tp + fneg > 0.0 {
                prop_assert_eq!(m.f1 == 0.0, tp == 0.0);
            }
        }

        #[test]
        fn overlap_symmetric_and_bounded((a, b) in (1usize..12).prop_flat_map(masks)) {
            let x = generator_overlap(&a, &b).unwrap();
            prop_assert_eq!(x, generator_overlap(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}
