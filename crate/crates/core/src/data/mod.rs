//! Corpus ingestion, embeddings, balanced batching, synthetic corpora.

mod batching;
mod corpus;
mod embeddings;
mod synthetic;
mod vocab;

pub use batching::{sequential_batches, BalancedSampler, Batch};
pub use corpus::{
    format_dataset, load_dataset, mask_to_spans, parse_dataset, spans_to_mask, tokenize,
    write_dataset, DatasetSplit, Example, LoadedCorpus, DEFAULT_MAX_LEN,
};
pub use embeddings::{load_embeddings, parse_embeddings};
pub use synthetic::{
    generate_synthetic, SpanLayout, SyntheticCorpus, SyntheticSpec, SyntheticSplit,
};
pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("class count must be at least 2, got {0}")]
    ClassCount(usize),
    #[error("record {record}: unknown label `{label}`")]
    UnknownLabel { record: usize, label: String },
    #[error("record {record}: span [{start},{end}) outside text of length {len}")]
    SpanOutOfRange {
        record: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("record {record}: {reason}")]
    Record { record: usize, reason: String },
    #[error("gold mask length {mask} differs from token count {tokens}")]
    MaskLength { tokens: usize, mask: usize },
    #[error("no vectors")]
    NoVectors,
    #[error("embedding line {line}: {reason}")]
    Embedding { line: usize, reason: String },
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty example")]
    EmptyExample,
    #[error("invalid synthetic spec: {0}")]
    Synthetic(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("{0}: {1}")]
    Io(String, String),
}
