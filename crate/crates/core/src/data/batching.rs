use rand::seq::SliceRandom;

use super::corpus::{DatasetSplit, Example};
use super::vocab::PAD_ID;
use super::DataError;
use crate::rng;

/// Per-epoch class-balanced batches: every class contributes as many
/// examples as the smallest class, the majority classes are undersampled,
/// and the selection is redrawn each epoch. Fully determined by the seed.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    by_class: Vec<Vec<usize>>,
    batch_size: usize,
    seed: u64,
}

impl BalancedSampler {
    pub fn new(
        split: &DatasetSplit,
        class_count: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::Format("batch_size must be positive".into()));
        }
        let mut by_class = vec![Vec::new(); class_count];
        for (i, ex) in split.examples.iter().enumerate() {
            let bucket = by_class.get_mut(ex.label).ok_or(DataError::UnknownLabel {
                record: i,
                label: ex.label.to_string(),
            })?;
            bucket.push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(DataError::EmptyClass(c));
        }
        Ok(BalancedSampler {
            by_class,
            batch_size,
            seed,
        })
    }

    pub fn per_class(&self) -> usize {
        self.by_class.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn epoch_len(&self) -> usize {
        self.per_class() * self.by_class.len()
    }

    /// Example indices for `epoch`, chunked into batches.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = rng::indexed_stream(self.seed, "batches", epoch);
        let take = self.per_class();
        let mut chosen = Vec::with_capacity(self.epoch_len());
        for bucket in &self.by_class {
            let mut b = bucket.clone();
            b.shuffle(&mut rng);
            chosen.extend_from_slice(&b[..take]);
        }
        chosen.shuffle(&mut rng);
        chosen
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Padded token matrix for a group of examples.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[batch][max_len]`, padded with [`PAD_ID`].
    pub token_ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    pub gold_masks: Vec<Option<Vec<u8>>>,
    pub max_len: usize,
}

impl Batch {
    pub fn from_examples(examples: &[&Example]) -> Result<Self, DataError> {
        if examples.is_empty() {
            return Err(DataError::EmptyBatch);
        }
        let max_len = examples.iter().map(|e| e.len()).max().unwrap_or(0);
        if max_len == 0 || examples.iter().any(|e| e.is_empty()) {
            return Err(DataError::EmptyExample);
        }
        let token_ids = examples
            .iter()
            .map(|e| {
                let mut ids = e.token_ids.clone();
                ids.resize(max_len, PAD_ID);
                ids
            })
            .collect();
        Ok(Batch {
            token_ids,
            lengths: examples.iter().map(|e| e.len()).collect(),
            labels: examples.iter().map(|e| e.label).collect(),
            gold_masks: examples.iter().map(|e| e.gold_mask.clone()).collect(),
            max_len,
        })
    }

    pub fn from_indices(split: &DatasetSplit, indices: &[usize]) -> Result<Self, DataError> {
        let refs: Vec<&Example> = indices.iter().map(|&i| &split.examples[i]).collect();
        Batch::from_examples(&refs)
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Token ids at position `t` for every row.
    pub fn column(&self, t: usize) -> Vec<usize> {
        self.token_ids.iter().map(|row| row[t]).collect()
    }

    /// 1.0 where position `t` is inside row `r`'s true length.
    pub fn valid_column(&self, t: usize) -> Vec<f64> {
        self.lengths
            .iter()
            .map(|&l| if t < l { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Sequential, unshuffled index chunks for evaluation.
pub fn sequential_batches(len: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..len)
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
