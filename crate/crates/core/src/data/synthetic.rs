//! Synthetic binary-sentiment corpora with a planted causal span and a
//! label-consistent spurious span.
//!
//! Vocabulary layout: `<pad>`, `<unk>`, then four disjoint cue sets
//! (`c0_*`, `c1_*` causal per class; `s0_*`, `s1_*` spurious per class), then
//! filler tokens `w*`. The causal span's tokens come from the label's causal
//! set; with probability `rho` a span from the label's spurious set is
//! added. The gold mask marks exactly the causal span.

use rand::Rng;

use super::corpus::{DatasetSplit, Example};
use super::vocab::Vocabulary;
use super::DataError;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seq_len: usize,
    pub causal_len: usize,
    pub spurious_len: usize,
    /// Probability that an example carries the spurious span.
    pub rho: f64,
    /// Tokens per cue set.
    pub cue_set_size: usize,
    /// Place the spurious span (when present) at offset 0 so it forms the
    /// leading segment of the text.
    pub spurious_first: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 100,
            train_size: 2000,
            dev_size: 500,
            test_size: 500,
            seq_len: 40,
            causal_len: 5,
            spurious_len: 5,
            rho: 0.8,
            cue_set_size: 4,
            spurious_first: false,
            seed: 0,
        }
    }
}

pub const CLASS_COUNT: usize = 2;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| Err(DataError::Synthetic(reason));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho={} outside [0,1]", self.rho));
        }
        if self.causal_len == 0 || self.spurious_len == 0 {
            return bad("span lengths must be positive".into());
        }
        if self.causal_len + self.spurious_len > self.seq_len {
            return bad(format!(
                "causal ({}) + spurious ({}) spans do not fit in length {}",
                self.causal_len, self.spurious_len, self.seq_len
            ));
        }
        if self.cue_set_size == 0 || self.filler_count() == 0 {
            return bad(format!(
                "vocab_size {} leaves no filler tokens after {} cue tokens",
                self.vocab_size,
                4 * self.cue_set_size
            ));
        }
        Ok(())
    }

    fn filler_count(&self) -> usize {
        self.vocab_size.saturating_sub(2 + 4 * self.cue_set_size)
    }

    /// Fraction of each text covered by the causal span.
    pub fn causal_fraction(&self) -> f64 {
        self.causal_len as f64 / self.seq_len as f64
    }
}

/// Where the planted spans sit in one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanLayout {
    pub causal_start: usize,
    pub spurious_start: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticSplit {
    pub split: DatasetSplit,
    pub layouts: Vec<SpanLayout>,
}

impl SyntheticSplit {
    pub fn spurious_count(&self) -> usize {
        self.layouts
            .iter()
            .filter(|l| l.spurious_start.is_some())
            .count()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub spec: SyntheticSpec,
    pub vocab: Vocabulary,
    pub train: SyntheticSplit,
    pub dev: SyntheticSplit,
    pub test: SyntheticSplit,
}

struct CueSets {
    causal: [Vec<usize>; 2],
    spurious: [Vec<usize>; 2],
    filler: Vec<usize>,
}

fn build_vocab(spec: &SyntheticSpec) -> Result<(Vocabulary, CueSets), DataError> {
    let mut vocab = Vocabulary::new(CLASS_COUNT)?;
    let mut set = |prefix: &str| -> Vec<usize> {
        (0..spec.cue_set_size)
            .map(|j| vocab.insert(&format!("{prefix}_{j}")))
            .collect()
    };
    let causal = [set("c0"), set("c1")];
    let spurious = [set("s0"), set("s1")];
    let filler = (0..spec.filler_count())
        .map(|k| vocab.insert(&format!("w{k}")))
        .collect();
    Ok((
        vocab,
        CueSets {
            causal,
            spurious,
            filler,
        },
    ))
}

fn pick(rng: &mut rng::Rng, set: &[usize]) -> usize {
    set[rng.gen_range(0..set.len())]
}

fn generate_split(
    spec: &SyntheticSpec,
    cues: &CueSets,
    size: usize,
    rng: &mut rng::Rng,
) -> SyntheticSplit {
    let l = spec.seq_len;
    let (lc, ls) = (spec.causal_len, spec.spurious_len);
    let mut examples = Vec::with_capacity(size);
    let mut layouts = Vec::with_capacity(size);
    for _ in 0..size {
        let label = rng.gen_range(0..CLASS_COUNT);
        let with_spurious = rng.gen_bool(spec.rho);
        let mut tokens: Vec<usize> = (0..l).map(|_| pick(rng, &cues.filler)).collect();

        let layout = if !with_spurious {
            SpanLayout {
                causal_start: rng.gen_range(0..=l - lc),
                spurious_start: None,
            }
        } else if spec.spurious_first {
            SpanLayout {
                causal_start: rng.gen_range(ls..=l - lc),
                spurious_start: Some(0),
            }
        } else {
            // uniform over non-overlapping placements
            loop {
                let c = rng.gen_range(0..=l - lc);
                let s = rng.gen_range(0..=l - ls);
                if s + ls <= c || c + lc <= s {
                    break SpanLayout {
                        causal_start: c,
                        spurious_start: Some(s),
                    };
                }
            }
        };

        for t in &mut tokens[layout.causal_start..layout.causal_start + lc] {
            *t = pick(rng, &cues.causal[label]);
        }
        if let Some(s) = layout.spurious_start {
            for t in &mut tokens[s..s + ls] {
                *t = pick(rng, &cues.spurious[label]);
            }
        }
        let mut mask = vec![0u8; l];
        mask[layout.causal_start..layout.causal_start + lc].fill(1);
        examples.push(Example::new(tokens, label, Some(mask)).expect("mask matches tokens"));
        layouts.push(layout);
    }
    SyntheticSplit {
        split: DatasetSplit::new(examples),
        layouts,
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, DataError> {
    spec.validate()?;
    let (vocab, cues) = build_vocab(spec)?;
    let gen = |name: &str, size: usize| {
        let mut r = rng::stream(spec.seed, &format!("data/{name}"));
        generate_split(spec, &cues, size, &mut r)
    };
    let train = gen("train", spec.train_size);
    let dev = gen("dev", spec.dev_size);
    let test = gen("test", spec.test_size);
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        vocab,
        train,
        dev,
        test,
    })
}
