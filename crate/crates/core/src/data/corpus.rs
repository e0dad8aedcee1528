//! Annotated corpus records.
//!
//! One record per line, tab separated:
//!
//! ```text
//! label<TAB>text<TAB>[[start,end],...]
//! ```
//!
//! The third field is optional. Spans are half-open token-index ranges over
//! the lowercased, whitespace-tokenized text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::vocab::Vocabulary;
use super::DataError;

pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub token_ids: Vec<usize>,
    pub label: usize,
    /// Gold rationale, one 0/1 entry per token.
    pub gold_mask: Option<Vec<u8>>,
}

impl Example {
    pub fn new(
        token_ids: Vec<usize>,
        label: usize,
        gold_mask: Option<Vec<u8>>,
    ) -> Result<Self, DataError> {
        if let Some(m) = &gold_mask {
            if m.len() != token_ids.len() {
                return Err(DataError::MaskLength {
                    tokens: token_ids.len(),
                    mask: m.len(),
                });
            }
        }
        Ok(Example {
            token_ids,
            label,
            gold_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub examples: Vec<Example>,
}

impl DatasetSplit {
    pub fn new(examples: Vec<Example>) -> Self {
        DatasetSplit { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn has_gold(&self) -> bool {
        self.examples.iter().any(|e| e.gold_mask.is_some())
    }
}

pub fn spans_to_mask(spans: &[(usize, usize)], len: usize) -> Vec<u8> {
    let mut mask = vec![0u8; len];
    for &(s, e) in spans {
        for m in &mut mask[s.min(len)..e.min(len)] {
            *m = 1;
        }
    }
    mask
}

/// Maximal runs of ones as half-open spans.
pub fn mask_to_spans(mask: &[u8]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, mask.len()));
    }
    spans
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub split: DatasetSplit,
    pub vocab: Vocabulary,
}

struct RawRecord {
    label: usize,
    tokens: Vec<String>,
    spans: Option<Vec<(usize, usize)>>,
}

fn parse_record(line: &str, index: usize) -> Result<RawRecord, DataError> {
    let mut fields = line.split('\t');
    let label_field = fields.next().unwrap_or("").trim();
    let label = label_field
        .parse::<usize>()
        .map_err(|_| DataError::UnknownLabel {
            record: index,
            label: label_field.to_string(),
        })?;
    let text = fields.next().ok_or_else(|| DataError::Record {
        record: index,
        reason: "missing text field".into(),
    })?;
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(DataError::Record {
            record: index,
            reason: "empty text".into(),
        });
    }
    let spans = match fields.next().map(str::trim).filter(|s| !s.is_empty()) {
        None => None,
        Some(raw) => {
            let parsed: Vec<(usize, usize)> =
                serde_json::from_str(raw).map_err(|e| DataError::Record {
                    record: index,
                    reason: format!("bad span list `{raw}`: {e}"),
                })?;
            for &(s, e) in &parsed {
                if s >= e || e > tokens.len() {
                    return Err(DataError::SpanOutOfRange {
                        record: index,
                        start: s,
                        end: e,
                        len: tokens.len(),
                    });
                }
            }
            Some(parsed)
        }
    };
    if fields.next().is_some() {
        return Err(DataError::Record {
            record: index,
            reason: "too many fields".into(),
        });
    }
    Ok(RawRecord {
        label,
        tokens,
        spans,
    })
}

/// Parses corpus text. With `vocab = None` a vocabulary is built from the
/// records (first-seen order, class count from the largest label); with a
/// vocabulary, unseen tokens map to `<unk>` and labels must be below its
/// class count.
pub fn parse_dataset(
    text: &str,
    vocab: Option<&Vocabulary>,
    max_len: usize,
) -> Result<LoadedCorpus, DataError> {
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(line, index)?);
    }
    let (mut vocab, frozen) = match vocab {
        Some(v) => (v.clone(), true),
        None => {
            let classes = records
                .iter()
                .map(|r| r.label + 1)
                .max()
                .unwrap_or(2)
                .max(2);
            (Vocabulary::new(classes)?, false)
        }
    };
    let mut examples = Vec::with_capacity(records.len());
    for (index, rec) in records.into_iter().enumerate() {
        if rec.label >= vocab.class_count() {
            return Err(DataError::UnknownLabel {
                record: index,
                label: rec.label.to_string(),
            });
        }
        let full_len = rec.tokens.len();
        let kept = full_len.min(max_len);
        let ids = rec.tokens[..kept]
            .iter()
            .map(|t| if frozen { vocab.id(t) } else { vocab.insert(t) })
            .collect();
        let mask = rec.spans.map(|s| {
            let mut m = spans_to_mask(&s, full_len);
            m.truncate(kept);
            m
        });
        examples.push(Example::new(ids, rec.label, mask)?);
    }
    Ok(LoadedCorpus {
        split: DatasetSplit::new(examples),
        vocab,
    })
}

pub fn load_dataset(
    path: &Path,
    vocab: Option<&Vocabulary>,
    max_len: usize,
) -> Result<LoadedCorpus, DataError> {
    let text = fs::read_to_string(path)
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    parse_dataset(&text, vocab, max_len)
}

/// Renders a split back into the record format.
pub fn format_dataset(split: &DatasetSplit, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for ex in &split.examples {
        let text: Vec<&str> = ex
            .token_ids
            .iter()
            .map(|&id| vocab.token(id).unwrap_or(super::vocab::UNK_TOKEN))
            .collect();
        let _ = write!(out, "{}\t{}", ex.label, text.join(" "));
        if let Some(m) = &ex.gold_mask {
            let spans: Vec<[usize; 2]> =
                mask_to_spans(m).into_iter().map(|(s, e)| [s, e]).collect();
            let _ = write!(
                out,
                "\t{}",
                serde_json::to_string(&spans).expect("spans serialize")
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(
    path: &Path,
    split: &DatasetSplit,
    vocab: &Vocabulary,
) -> Result<(), DataError> {
    fs::write(path, format_dataset(split, vocab))
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn span_to_mask_record() {
        let c =
            parse_dataset("1\tThe beer smells great\t[[1,3]]\n", None, DEFAULT_MAX_LEN).unwrap();
        let ex = &c.split.examples[0];
        assert_eq!(ex.gold_mask.as_deref(), Some(&[0u8, 1, 1, 0][..]));
        assert_eq!(ex.label, 1);
        assert_eq!(c.vocab.token(ex.token_ids[0]), Some("the"));
    }

    #[test]
    fn long_text_is_truncated_with_its_mask() {
        let words: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let line = format!("0\t{}\t[[250,280]]", words.join(" "));
        let c = parse_dataset(&line, None, DEFAULT_MAX_LEN).unwrap();
        let ex = &c.split.examples[0];
        assert_eq!(ex.token_ids.len(), 256);
        let m = ex.gold_mask.as_ref().unwrap();
        assert_eq!(m.len(), 256);
        assert_eq!(m.iter().filter(|&&x| x == 1).count(), 6);
    }

    #[test]
    fn record_without_spans() {
        let c = parse_dataset("0\tno rationale here\n1\tnor here\t\n", None, 256).unwrap();
        assert!(c.split.examples.iter().all(|e| e.gold_mask.is_none()));
        assert_eq!(c.split.len(), 2);
    }

    #[test]
    fn span_outside_text_is_rejected() {
        let err = parse_dataset("0\ta b\n1\ta b c\t[[2,4]]\n", None, 256).unwrap_err();
        assert!(
            matches!(err, DataError::SpanOutOfRange { record: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn unknown_label_is_rejected() {
        assert!(matches!(
            parse_dataset("pos\ta b\n", None, 256),
            Err(DataError::UnknownLabel { record: 0, .. })
        ));
        let vocab = Vocabulary::new(2).unwrap();
        assert!(matches!(
            parse_dataset("2\ta b\n", Some(&vocab), 256),
            Err(DataError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn frozen_vocab_maps_unseen_to_unk() {
        let mut vocab = Vocabulary::new(2).unwrap();
        let a = vocab.insert("a");
        let c = parse_dataset("0\tA zzz\n", Some(&vocab), 256).unwrap();
        assert_eq!(
            c.split.examples[0].token_ids,
            vec![a, super::super::vocab::UNK_ID]
        );
        assert_eq!(c.vocab.len(), vocab.len());
    }

    #[test]
    fn format_then_parse_round_trip() {
        let text = "1\tthe beer smells great\t[[1,3]]\n0\tflat and dull\n";
        let c = parse_dataset(text, None, 256).unwrap();
        assert_eq!(format_dataset(&c.split, &c.vocab), text);
    }

    proptest! {
        #[test]
        fn mask_spans_mask_is_identity(mask in proptest::collection::vec(0u8..2, 0..64)) {
            let spans = mask_to_spans(&mask);
            prop_assert_eq!(spans_to_mask(&spans, mask.len()), mask);
        }

        #[test]
        fn truncation_never_lengthens_mask(n in 1usize..40, max_len in 1usize..40, s in 0usize..40, w in 1usize..10) {
            let words: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let (s, e) = (s.min(n - 1), (s + w).min(n));
            let line = format!("0\t{}\t[[{s},{e}]]", words.join(" "));
            let c = parse_dataset(&line, None, max_len).unwrap();
            let ex = &c.split.examples[0];
            prop_assert_eq!(ex.gold_mask.as_ref().unwrap().len(), ex.token_ids.len());
            prop_assert!(ex.token_ids.len() <= max_len);
        }
    }
}
