//! Case base and nearest-neighbor retrieval.
//!
//! Dense mode ranks stored cases by cosine similarity of their (externally
//! computed, entity-masked) query embeddings. Synthetic mode groups cases by
//! pattern type id. Search is exact and exhaustive.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Split;

/// Little-endian `u32` at the start of an embedding file ("CBRE").
pub const EMBEDDING_MAGIC: u32 = u32::from_le_bytes(*b"CBRE");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    pub query_entities: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_type_id: Option<u32>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Train
}

#[derive(Clone, Debug)]
pub struct CaseBase {
    cases: Vec<Case>,
    /// Unit-norm rows, aligned with `cases`; `None` for cases without embeddings.
    normalized: Vec<Option<Vec<f64>>>,
    dim: Option<usize>,
}

fn l2_normalize(case_id: u64, v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm(case_id));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl CaseBase {
    /// L2-normalizes every embedding. All embeddings must share one
    /// dimensionality; cases without one need a pattern type id.
    pub fn normalize_and_index(cases: Vec<Case>) -> Result<Self> {
        let mut dim = None;
        let mut normalized = Vec::with_capacity(cases.len());
        for case in &cases {
            match &case.embedding {
                Some(e) => {
                    let expected = *dim.get_or_insert(e.len());
                    if e.len() != expected {
                        return Err(Error::EmbeddingDim {
                            case: case.case_id,
                            got: e.len(),
                            expected,
                        });
                    }
                    normalized.push(Some(l2_normalize(case.case_id, e)?));
                }
                None if case.pattern_type_id.is_some() => normalized.push(None),
                None => return Err(Error::UnkeyedCase(case.case_id)),
            }
        }
        Ok(CaseBase { cases, normalized, dim })
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn normalized(&self, index: usize) -> Option<&[f64]> {
        self.normalized[index].as_deref()
    }

    /// Top-`k` stored cases for `query`, best first. The query's own id is
    /// never returned. Fewer than `k` results when fewer are available.
    pub fn knn(&self, query: &Case, k: usize) -> Result<Vec<(u64, f64)>> {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        if let Some(emb) = &query.embedding {
            if let Some(dim) = self.dim {
                if emb.len() != dim {
                    return Err(Error::EmbeddingDim {
                        case: query.case_id,
                        got: emb.len(),
                        expected: dim,
                    });
                }
                let q = l2_normalize(query.case_id, emb)?;
                let mut scored: Vec<(u64, f64)> = self
                    .cases
                    .iter()
                    .zip(&self.normalized)
                    .filter(|(c, _)| c.case_id != query.case_id)
                    .filter_map(|(c, n)| n.as_ref().map(|n| (c.case_id, dot(&q, n))))
                    .collect();
                scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                scored.truncate(k);
                return Ok(scored);
            }
        }
        let pattern = query.pattern_type_id.ok_or(Error::UnkeyedCase(query.case_id))?;
        let mut hits: Vec<(u64, f64)> = self
            .cases
            .iter()
            .filter(|c| c.pattern_type_id == Some(pattern) && c.case_id != query.case_id)
            .map(|c| (c.case_id, 1.0))
            .collect();
        hits.sort_by_key(|h| h.0);
        hits.truncate(k);
        Ok(hits)
    }
}

/// Reads a binary embedding matrix: `magic, count, dim` as little-endian
/// `u32`, then `count * dim` little-endian `f32` values, row-major.
pub fn read_embeddings(path: &Path) -> Result<Vec<Vec<f32>>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if bytes.len() < 12 {
        return Err(bad("truncated header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != EMBEDDING_MAGIC {
        return Err(bad(format!("bad magic {:#010x}", word(0))));
    }
    let (count, dim) = (word(1) as usize, word(2) as usize);
    let expected = 12 + 4 * count * dim;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes for {count}x{dim}, found {}", bytes.len())));
    }
    Ok(bytes[12..]
        .chunks_exact(4 * dim.max(1))
        .take(count)
        .map(|row| row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        .collect())
}

pub fn write_embeddings(path: &Path, rows: &[Vec<f32>]) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
        return Err(Error::Dimension(format!("row {bad} has {} values, expected {dim}", rows[bad].len())));
    }
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    for word in [EMBEDDING_MAGIC, rows.len() as u32, dim as u32] {
        w.write_all(&word.to_le_bytes())?;
    }
    for row in rows {
        for x in row {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One case id per line, naming the rows of the embedding file in order.
pub fn read_id_file(path: &Path) -> Result<Vec<u64>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut ids = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        ids.push(line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("'{line}' is not a case id"),
        })?);
    }
    Ok(ids)
}

pub fn read_cases(path: &Path) -> Result<Vec<Case>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut cases = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        cases.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(cases)
}

/// Loads cases and attaches embeddings by case id.
pub fn load_cases_with_embeddings(cases: &Path, embeddings: &Path, ids: &Path) -> Result<Vec<Case>> {
    let mut cases = read_cases(cases)?;
    let rows = read_embeddings(embeddings)?;
    let ids = read_id_file(ids)?;
    if rows.len() != ids.len() {
        return Err(Error::Dimension(format!(
            "{} embedding rows but {} ids",
            rows.len(),
            ids.len()
        )));
    }
    let by_id: HashMap<u64, usize> = ids.iter().enumerate().map(|(row, &id)| (id, row)).collect();
    for case in cases.iter_mut() {
        if let Some(&row) = by_id.get(&case.case_id) {
            case.embedding = Some(rows[row].iter().map(|&x| x as f64).collect());
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(id: u64, v: &[f64]) -> Case {
        Case {
            case_id: id,
            query_text: None,
            query_entities: vec![],
            answers: vec!["a".into()],
            embedding: Some(v.to_vec()),
            pattern_type_id: None,
            split: Split::Train,
        }
    }

    fn typed(id: u64, pattern: u32) -> Case {
        Case {
            embedding: None,
            pattern_type_id: Some(pattern),
            ..dense(id, &[])
        }
    }

    #[test]
    fn three_four_five() {
        let cb = CaseBase::normalize_and_index(vec![dense(0, &[3.0, 4.0])]).unwrap();
        assert_eq!(cb.normalized(0).unwrap(), &[0.6, 0.8]);
    }

    #[test]
    fn unit_vector_unchanged() {
        let cb = CaseBase::normalize_and_index(vec![dense(0, &[0.0, 1.0, 0.0])]).unwrap();
        assert_eq!(cb.normalized(0).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let err = CaseBase::normalize_and_index(vec![dense(0, &[1.0, 0.0]), dense(1, &[1.0])]).unwrap_err();
        assert!(matches!(err, Error::EmbeddingDim { case: 1, .. }));
    }

    #[test]
    fn zero_vector_rejected() {
        let err = CaseBase::normalize_and_index(vec![dense(7, &[0.0, 0.0])]).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm(7)));
    }

    #[test]
    fn identical_and_orthogonal_scores() {
        let cb = CaseBase::normalize_and_index(vec![dense(1, &[2.0, 0.0]), dense(2, &[0.0, 5.0])]).unwrap();
        let hits = cb.knn(&dense(9, &[1.0, 0.0]), 2).unwrap();
        assert_eq!(hits, vec![(1, 1.0), (2, 0.0)]);
    }

    #[test]
    fn self_match_excluded_and_ties_by_id() {
        let cb = CaseBase::normalize_and_index(vec![
            dense(3, &[1.0, 1.0]),
            dense(1, &[1.0, 1.0]),
            dense(2, &[1.0, 1.0]),
        ])
        .unwrap();
        let hits = cb.knn(&dense(1, &[1.0, 1.0]), 5).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.0).collect();
        assert_eq!(ids, vec![2, 3]);
    }

    #[test]
    fn k_zero_is_an_error() {
        let cb = CaseBase::normalize_and_index(vec![dense(1, &[1.0])]).unwrap();
        assert!(matches!(cb.knn(&dense(2, &[1.0]), 0), Err(Error::InvalidK)));
    }

    #[test]
    fn pattern_mode_groups_by_type() {
        let cases: Vec<_> = (0..12).map(|i| typed(i, (i % 2) as u32)).collect();
        let cb = CaseBase::normalize_and_index(cases).unwrap();
        let hits = cb.knn(&typed(100, 1), 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![1, 3, 5, 7, 9]);
        let hits = cb.knn(&typed(4, 0), 10).unwrap();
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 2, 6, 8, 10]);
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let rows = vec![vec![1.0f32, -2.5, 0.0], vec![3.25, 4.0, 1e-3]];
        write_embeddings(&path, &rows).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"CBRE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(read_embeddings(&path).unwrap(), rows);
    }
}
