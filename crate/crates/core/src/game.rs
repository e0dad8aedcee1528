//! The cooperative payoff game between n generators and one predictor.
//!
//! A generator selects the causal feature with probability `P_c`; `k` of
//! the `n` generators do so. The predictor's tendency `alpha` is the weight
//! it puts on fitting the causal feature. The predictor overfits the
//! spurious feature when `k < n - k`; ties count as non-spurious.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("{name} must lie in {range}, got {value}")]
    OutOfRange {
        name: &'static str,
        range: &'static str,
        value: f64,
    },
    #[error("payoffs need a > b, got a={a}, b={b}")]
    Payoffs { a: f64, b: f64 },
    #[error("k={k} exceeds n={n}")]
    Count { k: usize, n: usize },
    #[error("n must be at least 1")]
    NoGenerators,
    #[error("P_c={0} does not favour the causal feature; the bound needs P_c > 0.5")]
    CausalNotFavoured(f64),
    #[error("counts are both zero")]
    EmptyCounts,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("no n up to {limit} reaches the tolerance")]
    SearchLimit { limit: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameSpec {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub pc: f64,
    pub ps: f64,
    pub alpha: f64,
    pub k: usize,
}

fn open_unit(name: &'static str, value: f64) -> Result<(), GameError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(GameError::OutOfRange {
            name,
            range: "(0, 1)",
            value,
        })
    }
}

impl GameSpec {
    pub fn validate(&self) -> Result<(), GameError> {
        if self.n == 0 {
            return Err(GameError::NoGenerators);
        }
        if !(self.a > self.b) {
            return Err(GameError::Payoffs {
                a: self.a,
                b: self.b,
            });
        }
        open_unit("P_c", self.pc)?;
        open_unit("P_s", self.ps)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(GameError::OutOfRange {
                name: "alpha",
                range: "[0, 1]",
                value: self.alpha,
            });
        }
        if self.k > self.n {
            return Err(GameError::Count {
                k: self.k,
                n: self.n,
            });
        }
        Ok(())
    }
}

/// Expected predictor payoff
/// `k*alpha*a + k*(1-alpha)*b + (n-k)*(1-alpha)*a + (n-k)*alpha*b`.
pub fn predictor_payoff(spec: &GameSpec) -> Result<f64, GameError> {
    spec.validate()?;
    let (k, m) = (spec.k as f64, (spec.n - spec.k) as f64);
    let (al, a, b) = (spec.alpha, spec.a, spec.b);
    Ok(k * al * a + k * (1.0 - al) * b + m * (1.0 - al) * a + m * al * b)
}

/// `dR/dalpha = (a - b) * (2k - n)`; positive exactly when causal
/// generators are the majority.
pub fn payoff_gradient(spec: &GameSpec) -> Result<f64, GameError> {
    spec.validate()?;
    Ok((spec.a - spec.b) * (2.0 * spec.k as f64 - spec.n as f64))
}

fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Probability that fewer than half of `n` generators select the causal
/// feature: `sum_{k < n/2} C(n,k) P_c^k (1-P_c)^(n-k)`, summed in log space.
pub fn p_spurious(n: usize, pc: f64) -> Result<f64, GameError> {
    if n == 0 {
        return Err(GameError::NoGenerators);
    }
    open_unit("P_c", pc)?;
    let (lp, lq) = (pc.ln(), (-pc).ln_1p());
    let upper = n.div_ceil(2) - 1;
    let terms: Vec<f64> = (0..=upper)
        .map(|k| ln_choose(n, k) + k as f64 * lp + (n - k) as f64 * lq)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp())
}

const SEARCH_LIMIT: usize = 100_001;

/// Smallest `n` (odd only by default) with `p_spurious(n, P_c) < P_s`.
pub fn min_generators(ps: f64, pc: f64, odd_only: bool) -> Result<usize, GameError> {
    open_unit("P_s", ps)?;
    open_unit("P_c", pc)?;
    if pc <= 0.5 {
        return Err(GameError::CausalNotFavoured(pc));
    }
    let step = if odd_only { 2 } else { 1 };
    let mut n = 1;
    while n <= SEARCH_LIMIT {
        if p_spurious(n, pc)? < ps {
            return Ok(n);
        }
        n += step;
    }
    Err(GameError::SearchLimit {
        limit: SEARCH_LIMIT,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

/// Draws `k ~ Binomial(n, P_c)` per trial and counts `k < n - k`. Each call
/// uses its own stream derived from `(seed, n)`.
pub fn monte_carlo_spurious(
    n: usize,
    pc: f64,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, GameError> {
    if n == 0 {
        return Err(GameError::NoGenerators);
    }
    if trials == 0 {
        return Err(GameError::NoTrials);
    }
    if !(0.0..=1.0).contains(&pc) {
        return Err(GameError::OutOfRange {
            name: "P_c",
            range: "[0, 1]",
            value: pc,
        });
    }
    let mut r = rng::indexed_stream(seed, "montecarlo/spurious", n);
    let mut hits = 0u64;
    for _ in 0..trials {
        let k = (0..n).filter(|_| r.gen_bool(pc)).count();
        hits += u64::from(2 * k < n);
    }
    let mean = hits as f64 / trials as f64;
    Ok(McEstimate {
        mean,
        stderr: (mean * (1.0 - mean) / trials as f64).sqrt(),
        trials,
    })
}

/// `1 - C / (2C + D)` from counts of correlated and decorrelated texts.
pub fn estimate_pc(correlated: u64, decorrelated: u64) -> Result<f64, GameError> {
    if correlated == 0 && decorrelated == 0 {
        return Err(GameError::EmptyCounts);
    }
    let c = correlated as f64;
    Ok(1.0 - c / (2.0 * c + decorrelated as f64))
}

pub const SWEEP_HEADER: &str = "n,P_c,p_spurious_exact,p_spurious_mc,stderr";

/// Exact and Monte Carlo spurious probabilities for odd `n` up to `n_max`.
pub fn sweep_csv(pc: f64, n_max: usize, trials: u64, seed: u64) -> Result<String, GameError> {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for n in (1..=n_max).step_by(2) {
        let exact = p_spurious(n, pc)?;
        let mc = monte_carlo_spurious(n, pc, trials, seed)?;
        let _ = writeln!(s, "{n},{pc},{exact},{},{}", mc.mean, mc.stderr);
    }
    Ok(s)
}
