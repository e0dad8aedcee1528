use std::fs;
use std::path::Path;

use super::vocab::{Vocabulary, PAD_ID, UNK_ID};
use super::DataError;
use crate::numeric::Tensor;

/// Builds a `[vocab, d]` matrix from `token v1 ... vd` lines.
///
/// Vocabulary tokens missing from the text get a zero row; the unknown
/// token's row is the mean of every vector in the text and padding stays
/// zero. The first occurrence of a duplicated token wins.
pub fn parse_embeddings(text: &str, vocab: &Vocabulary) -> Result<(Tensor, usize), DataError> {
    let mut dim = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| DataError::Embedding {
                line: line_no,
                reason: e.to_string(),
            })?;
        match dim {
            None if values.is_empty() => {
                return Err(DataError::Embedding {
                    line: line_no,
                    reason: "no values".into(),
                })
            }
            None => {
                dim = Some(values.len());
                sum = vec![0.0; values.len()];
            }
            Some(d) if d != values.len() => {
                return Err(DataError::Embedding {
                    line: line_no,
                    reason: format!("expected {d} values, found {}", values.len()),
                })
            }
            Some(_) => {}
        }
        for (s, v) in sum.iter_mut().zip(&values) {
            *s += v;
        }
        count += 1;
        if let Some(id) = vocab.get(token) {
            if id != PAD_ID && rows[id].is_none() {
                rows[id] = Some(values);
            }
        }
    }

    let d = dim.ok_or(DataError::NoVectors)?;
    let mut table = Tensor::zeros(&[vocab.len(), d]);
    for (id, row) in rows.into_iter().enumerate() {
        if let Some(r) = row {
            table.data_mut()[id * d..(id + 1) * d].copy_from_slice(&r);
        }
    }
    for (j, s) in sum.iter().enumerate() {
        table.data_mut()[UNK_ID * d + j] = s / count as f64;
    }
    Ok((table, d))
}

pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<(Tensor, usize), DataError> {
    let text = fs::read_to_string(path)
        .map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    parse_embeddings(&text, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::new(2).unwrap();
        v.insert("beer");
        v.insert("foam");
        v.insert("absent");
        v
    }

    #[test]
    fn rows_match_file_values() {
        let v = vocab();
        let (t, d) = parse_embeddings("beer 0.1 0.2 0.3\nfoam -1 0 2.5\n", &v).unwrap();
        assert_eq!(d, 3);
        assert_eq!(t.row(v.id("beer")), &[0.1, 0.2, 0.3]);
        assert_eq!(t.row(v.id("foam")), &[-1.0, 0.0, 2.5]);
        assert_eq!(t.row(v.id("absent")), &[0.0, 0.0, 0.0]);
        assert_eq!(t.row(PAD_ID), &[0.0, 0.0, 0.0]);
        let unk = t.row(UNK_ID);
        assert!((unk[0] + 0.45).abs() < 1e-15 && (unk[2] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn empty_file_has_no_vectors() {
        let err = parse_embeddings("", &vocab()).unwrap_err();
        assert_eq!(err.to_string(), "no vectors");
    }

    #[test]
    fn inconsistent_dimension_names_line() {
        let err = parse_embeddings("beer 1 2\nfoam 1 2 3\n", &vocab()).unwrap_err();
        assert!(matches!(err, DataError::Embedding { line: 2, .. }), "{err}");
    }
}
