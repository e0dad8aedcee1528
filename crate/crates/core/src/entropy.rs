//! Discrete entropies of generator rationales viewed as random variables.
//!
//! For a joint over `Z_1..Z_n`:
//! `max_i H(Z_i) <= H(Z_1..Z_n) <= sum_k H(Z_k)`, with equality on the right
//! iff the variables are independent and on the left iff they coincide.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::data::DatasetSplit;
use crate::models::MgrModel;
use crate::training::{predict_split, TrainError};

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("support sizes must be positive and non-empty")]
    Support,
    #[error("table has {got} cells, supports imply {want}")]
    TableSize { got: usize, want: usize },
    #[error("probability {value} at cell {index} is negative or not finite")]
    Negative { index: usize, value: f64 },
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("invalid variable subset {0:?}")]
    Subset(Vec<usize>),
    #[error("max_tokens must be in 1..={max}, got {got}")]
    Window { got: usize, max: usize },
    #[error("no samples")]
    NoSamples,
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Base {
    #[default]
    Bits,
    Nats,
}

impl Base {
    fn log(self, p: f64) -> f64 {
        match self {
            Base::Bits => p.log2(),
            Base::Nats => p.ln(),
        }
    }
}

const NORMALIZATION_TOL: f64 = 1e-12;

/// Probability table over outcome tuples, row-major with the first
/// variable most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    supports: Vec<usize>,
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(supports: Vec<usize>, probs: Vec<f64>) -> Result<Self, EntropyError> {
        if supports.is_empty() || supports.contains(&0) {
            return Err(EntropyError::Support);
        }
        let want: usize = supports.iter().product();
        if probs.len() != want {
            return Err(EntropyError::TableSize {
                got: probs.len(),
                want,
            });
        }
        if let Some(index) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(EntropyError::Negative {
                index,
                value: probs[index],
            });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(EntropyError::NotNormalized(total));
        }
        Ok(JointDistribution { supports, probs })
    }

    /// Normalizes non-negative weights (e.g. counts).
    pub fn from_weights(supports: Vec<usize>, weights: &[f64]) -> Result<Self, EntropyError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(EntropyError::NotNormalized(total));
        }
        Self::new(supports, weights.iter().map(|w| w / total).collect())
    }

    /// Product of independent marginals.
    pub fn independent(marginals: &[Vec<f64>]) -> Result<Self, EntropyError> {
        let supports: Vec<usize> = marginals.iter().map(Vec::len).collect();
        let mut probs = vec![1.0];
        for m in marginals {
            probs = probs
                .iter()
                .flat_map(|p| m.iter().map(move |q| p * q))
                .collect();
        }
        let total: f64 = probs.iter().sum();
        Self::new(supports, probs.iter().map(|p| p / total).collect())
    }

    /// `n` copies of one variable with distribution `p`.
    pub fn identical(p: &[f64], n: usize) -> Result<Self, EntropyError> {
        let k = p.len();
        let supports = vec![k; n];
        let mut probs = vec![0.0; k.pow(n as u32)];
        let stride: usize = (0..n).map(|i| k.pow(i as u32)).sum();
        for (v, &pv) in p.iter().enumerate() {
            probs[v * stride] = pv;
        }
        Self::new(supports, probs)
    }

    /// Random joint with per-variable support in `2..=max_support`.
    pub fn random(rng: &mut impl Rng, n: usize, max_support: usize) -> Self {
        let supports: Vec<usize> = (0..n)
            .map(|_| rng.gen_range(2..=max_support.max(2)))
            .collect();
        let cells: usize = supports.iter().product();
        let mut w: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>()).collect();
        // Sparse tables exercise the zero-probability convention.
        for x in w.iter_mut() {
            if rng.gen_bool(0.2) {
                *x = 0.0;
            }
        }
        if w.iter().all(|&x| x == 0.0) {
            w[0] = 1.0;
        }
        Self::from_weights(supports, &w).expect("positive weights")
    }

    pub fn variable_count(&self) -> usize {
        self.supports.len()
    }

    pub fn supports(&self) -> &[usize] {
        &self.supports
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn marginal(&self, subset: &[usize]) -> Result<Vec<f64>, EntropyError> {
        let mut seen = vec![false; self.supports.len()];
        if subset.is_empty() {
            return Err(EntropyError::Subset(subset.to_vec()));
        }
        for &i in subset {
            if i >= self.supports.len() || seen[i] {
                return Err(EntropyError::Subset(subset.to_vec()));
            }
            seen[i] = true;
        }
        let out_size: usize = subset.iter().map(|&i| self.supports[i]).product();
        let mut out = vec![0.0; out_size];
        let mut digits = vec![0usize; self.supports.len()];
        for &p in &self.probs {
            let idx = subset
                .iter()
                .fold(0, |acc, &i| acc * self.supports[i] + digits[i]);
            out[idx] += p;
            for d in (0..digits.len()).rev() {
                digits[d] += 1;
                if digits[d] < self.supports[d] {
                    break;
                }
                digits[d] = 0;
            }
        }
        Ok(out)
    }

    /// Shannon entropy of the marginal over `subset`, with `0 log 0 = 0`.
    pub fn entropy(&self, subset: &[usize], base: Base) -> Result<f64, EntropyError> {
        Ok(shannon(&self.marginal(subset)?, base))
    }

    pub fn joint_entropy(&self, base: Base) -> f64 {
        shannon(&self.probs, base)
    }

    /// `H(Z_i) + H(Z_j) - H(Z_i, Z_j)`, clamped at 0.
    pub fn mutual_information(&self, i: usize, j: usize, base: Base) -> Result<f64, EntropyError> {
        if i == j {
            return Err(EntropyError::Subset(vec![i, j]));
        }
        let mi =
            self.entropy(&[i], base)? + self.entropy(&[j], base)? - self.entropy(&[i, j], base)?;
        Ok(mi.max(0.0))
    }
}

pub fn shannon(p: &[f64], base: Base) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * base.log(x))
        .sum::<f64>()
}

pub const THEOREM2_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem2Report {
    pub marginals: Vec<f64>,
    pub joint: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub lower_tight: bool,
    pub upper_tight: bool,
}

impl Theorem2Report {
    pub fn max_marginal(&self) -> f64 {
        self.marginals.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum_marginals(&self) -> f64 {
        self.marginals.iter().sum()
    }
}

/// Checks `max_i H(Z_i) <= H(joint) <= sum_k H(Z_k)` within 1e-9, in bits.
pub fn verify_theorem2(dist: &JointDistribution) -> Theorem2Report {
    let marginals: Vec<f64> = (0..dist.variable_count())
        .map(|i| dist.entropy(&[i], Base::Bits).expect("valid index"))
        .collect();
    let joint = dist.joint_entropy(Base::Bits);
    let lo = marginals.iter().copied().fold(0.0, f64::max);
    let hi: f64 = marginals.iter().sum();
    Theorem2Report {
        lower_ok: lo <= joint + THEOREM2_TOL,
        upper_ok: joint <= hi + THEOREM2_TOL,
        lower_tight: (joint - lo).abs() <= THEOREM2_TOL,
        upper_tight: (hi - joint).abs() <= THEOREM2_TOL,
        marginals,
        joint,
    }
}

/// Largest window for [`empirical_mask_entropy`]; `2^16` outcomes per
/// generator keeps the joint enumerable.
pub const MAX_WINDOW: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskEntropy {
    /// Plug-in entropy of each generator's truncated masks, in bits.
    pub marginals: Vec<f64>,
    /// Plug-in entropy of the tuple of all generators' truncated masks.
    pub joint: f64,
    pub samples: usize,
}

impl MaskEntropy {
    pub fn sum_marginals(&self) -> f64 {
        self.marginals.iter().sum()
    }

    pub fn max_marginal(&self) -> f64 {
        self.marginals.iter().copied().fold(0.0, f64::max)
    }
}

fn window_code(mask: &[u8], window: usize) -> u32 {
    mask.iter()
        .take(window)
        .enumerate()
        .fold(0, |acc, (t, &m)| acc | (u32::from(m != 0) << t))
}

fn plug_in<K: Ord>(outcomes: impl Iterator<Item = K>) -> (f64, usize) {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    let mut total = 0;
    for o in outcomes {
        *counts.entry(o).or_default() += 1;
        total += 1;
    }
    let p: Vec<f64> = counts.values().map(|&c| c as f64 / total as f64).collect();
    (shannon(&p, Base::Bits), total)
}

/// Plug-in entropies of masks indexed `[generator][example]`, each mask cut
/// to its first `max_tokens` positions.
pub fn mask_entropy(
    masks: &[Vec<Vec<u8>>],
    max_tokens: usize,
) -> Result<MaskEntropy, EntropyError> {
    if max_tokens == 0 || max_tokens > MAX_WINDOW {
        return Err(EntropyError::Window {
            got: max_tokens,
            max: MAX_WINDOW,
        });
    }
    let samples = masks.first().map_or(0, Vec::len);
    if samples == 0 || masks.iter().any(|g| g.len() != samples) {
        return Err(EntropyError::NoSamples);
    }
    let codes: Vec<Vec<u32>> = masks
        .iter()
        .map(|g| g.iter().map(|m| window_code(m, max_tokens)).collect())
        .collect();
    let marginals = codes.iter().map(|c| plug_in(c.iter().copied()).0).collect();
    let (joint, _) =
        plug_in((0..samples).map(|e| codes.iter().map(|c| c[e]).collect::<Vec<u32>>()));
    Ok(MaskEntropy {
        marginals,
        joint,
        samples,
    })
}

/// Eval-mode mask entropies of every generator of `model` over `split`.
pub fn empirical_mask_entropy(
    model: &MgrModel,
    split: &DatasetSplit,
    max_tokens: usize,
) -> Result<MaskEntropy, EntropyError> {
    if max_tokens == 0 || max_tokens > MAX_WINDOW {
        return Err(EntropyError::Window {
            got: max_tokens,
            max: MAX_WINDOW,
        });
    }
    let all: Vec<usize> = (0..model.generator_count()).collect();
    let preds = predict_split(model, split, &all)?;
    mask_entropy(&preds.masks, max_tokens)
}

pub const CSV_HEADER_PREFIX: &str = "tag";

/// `tag,H_marginal_1..n,H_joint,sum_marginals` header for `n` variables.
pub fn csv_header(n: usize) -> String {
    let mut s = String::from(CSV_HEADER_PREFIX);
    for i in 1..=n {
        let _ = write!(s, ",H_marginal_{i}");
    }
    s.push_str(",H_joint,sum_marginals");
    s
}

pub fn csv_row(tag: &str, marginals: &[f64], joint: f64) -> String {
    let mut s = tag.to_string();
    for m in marginals {
        let _ = write!(s, ",{m}");
    }
    let _ = write!(s, ",{joint},{}", marginals.iter().sum::<f64>());
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub checked: usize,
    pub violations: usize,
    pub csv: String,
}

/// Joint entropy bounds on `count` random joints with `n` in {2, 3} and
/// supports up to `max_support`, plus the independent and identical
/// equality cases. Rows are padded to three marginal columns.
pub fn theorem2_sweep(count: usize, max_support: usize, seed: u64) -> SweepSummary {
    let mut r = crate::rng::stream(seed, "entropy/sweep");
    let width = 3;
    let mut csv = csv_header(width);
    csv.push('\n');
    let mut violations = 0;
    let mut push = |tag: String, rep: &Theorem2Report, ok: bool, csv: &mut String| {
        let mut m = rep.marginals.clone();
        m.resize(width, 0.0);
        let mut row = tag;
        for v in &m {
            let _ = write!(row, ",{v}");
        }
        let _ = writeln!(csv, "{row},{},{}", rep.joint, rep.sum_marginals());
        if !ok {
            violations += 1;
        }
    };
    for i in 0..count {
        let n = if i % 2 == 0 { 2 } else { 3 };
        let d = JointDistribution::random(&mut r, n, max_support);
        let rep = verify_theorem2(&d);
        push(
            format!("random_{i}"),
            &rep,
            rep.lower_ok && rep.upper_ok,
            &mut csv,
        );
    }
    let indep =
        JointDistribution::independent(&[vec![0.3, 0.7], vec![0.1, 0.6, 0.3], vec![0.5, 0.5]])
            .expect("valid");
    let rep = verify_theorem2(&indep);
    push("independent".into(), &rep, rep.upper_tight, &mut csv);
    let same = JointDistribution::identical(&[0.2, 0.3, 0.5], 3).expect("valid");
    let rep = verify_theorem2(&same);
    push("identical".into(), &rep, rep.lower_tight, &mut csv);
    SweepSummary {
        checked: count + 2,
        violations,
        csv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example() -> JointDistribution {
        JointDistribution::new(vec![2, 2], vec![0.5, 0.25, 0.25, 0.0]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let det = JointDistribution::new(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(det.entropy(&[0], Base::Bits).unwrap(), 0.0);
        let bits = JointDistribution::independent(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(bits.joint_entropy(Base::Bits), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            example().entropy(&[0, 1], Base::Bits).unwrap(),
            1.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            example().entropy(&[0], Base::Bits).unwrap(),
            0.811278,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            example().entropy(&[0, 1], Base::Nats).unwrap(),
            1.5 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mutual_information_examples() {
        assert_abs_diff_eq!(
            example().mutual_information(0, 1, Base::Bits).unwrap(),
            0.122556,
            epsilon = 1e-6
        );
        let same = JointDistribution::identical(&[0.5, 0.5], 2).unwrap();
        assert_abs_diff_eq!(
            same.mutual_information(0, 1, Base::Bits).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let ind = JointDistribution::independent(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
        assert_eq!(ind.mutual_information(1, 0, Base::Bits).unwrap(), 0.0);
        assert!(ind.mutual_information(1, 1, Base::Bits).is_err());
    }

    #[test]
    fn invalid_inputs() {
        assert!(JointDistribution::new(vec![2], vec![0.6, 0.6]).is_err());
        assert!(JointDistribution::new(vec![2], vec![1.5, -0.5]).is_err());
        assert!(JointDistribution::new(vec![2, 2], vec![1.0]).is_err());
        assert!(example().entropy(&[2], Base::Bits).is_err());
        assert!(example().entropy(&[0, 0], Base::Bits).is_err());
        assert!(example().entropy(&[], Base::Bits).is_err());
    }

    #[test]
    fn theorem2_equality_cases() {
        let ind =
            JointDistribution::independent(&[vec![0.3, 0.7], vec![0.25, 0.75], vec![0.9, 0.1]])
                .unwrap();
        assert!(verify_theorem2(&ind).upper_tight);
        let same = JointDistribution::identical(&[0.1, 0.2, 0.7], 3).unwrap();
        let rep = verify_theorem2(&same);
        assert!(rep.lower_tight && !rep.upper_tight);
    }

    #[test]
    fn theorem2_holds_on_random_joints() {
        let s = theorem2_sweep(1000, 8, 5);
        assert_eq!(s.violations, 0);
        assert_eq!(s.csv.lines().count(), 1003);
    }

    #[test]
    fn entropy_is_permutation_invariant() {
        let a = JointDistribution::new(vec![3], vec![0.2, 0.5, 0.3]).unwrap();
        let b = JointDistribution::new(vec![3], vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(a.joint_entropy(Base::Bits), b.joint_entropy(Base::Bits));
    }

    #[test]
    fn mask_entropy_orders() {
        let g1 = vec![vec![1, 0, 0], vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1]];
        let g2 = vec![vec![1, 0, 0], vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 0]];
        let e = mask_entropy(&[g1.clone(), g2], 3).unwrap();
        assert!(e.joint + 1e-9 >= e.max_marginal());
        assert!(e.joint <= e.sum_marginals() + 1e-9);
        let single = mask_entropy(&[g1], 3).unwrap();
        assert_eq!(single.joint, single.marginals[0]);
        assert!(mask_entropy(&[vec![vec![1]]], 17).is_err());
    }

    #[test]
    fn csv_shapes() {
        assert_eq!(
            csv_header(2),
            "tag,H_marginal_1,H_marginal_2,H_joint,sum_marginals"
        );
        assert_eq!(csv_row("x", &[1.0, 0.5], 1.25), "x,1,0.5,1.25,1.5");
    }
}
