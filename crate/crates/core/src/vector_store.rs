//! Exact cosine top-k store for unit embeddings.
//!
//! Two kinds of store share this type: the environment store (append-only,
//! full coverage of the map) and the navigational store (per-route, mutable).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{Heading, NodeId};

/// Allowed deviation of a stored vector's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains a non-finite component")]
    NonFinite,
    #[error("embedding is not unit length (norm {0})")]
    NotNormalized(f64),
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("unknown record id `{0}`")]
    UnknownId(String),
    #[error("records cannot be deleted from the environment store")]
    AppendOnly,
    #[error("record kind {found:?} does not match store kind {expected:?}")]
    KindMismatch { expected: StoreKind, found: StoreKind },
    #[error("query on an empty store")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wrap a vector that must already be unit length.
    pub fn new(values: Vec<f64>) -> Result<Self, StoreError> {
        check_finite(&values)?;
        let n = l2(&values);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(StoreError::NotNormalized(n));
        }
        Ok(Embedding(values))
    }

    /// L2-normalize `values`.
    pub fn normalized(values: Vec<f64>) -> Result<Self, StoreError> {
        check_finite(&values)?;
        let n = l2(&values);
        if n == 0.0 {
            return Err(StoreError::ZeroVector);
        }
        Ok(Embedding(values.into_iter().map(|v| v / n).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.0)
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = StoreError;
    fn try_from(value: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(value)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(value: Embedding) -> Self {
        value.0
    }
}

fn check_finite(values: &[f64]) -> Result<(), StoreError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StoreError::NonFinite)
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot(a, b) / (|a| |b|)` on raw slices.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, StoreError> {
    if a.len() != b.len() {
        return Err(StoreError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (l2(a), l2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(StoreError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, StoreError> {
    cosine(&a.0, &b.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Environment,
    Navigational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub node: NodeId,
    pub orientation: Heading,
    pub kind: StoreKind,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub embedding: Embedding,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub record: EmbeddingRecord,
    pub similarity: f64,
}

/// On-disk form: one JSON object per line.
#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    values: Vec<f64>,
    node: NodeId,
    orientation: Heading,
    kind: StoreKind,
    source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    kind: StoreKind,
    dim: Option<usize>,
    records: BTreeMap<String, EmbeddingRecord>,
}

/// Heap entry ordered so the *worst* of the current top-k sits on top.
struct Ranked<'a> {
    similarity: f64,
    id: &'a str,
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked<'_> {}
impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked<'_> {
    // "greater" = ranks worse: lower similarity, then larger id
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl VectorStore {
    pub fn new(kind: StoreKind) -> Self {
        VectorStore {
            kind,
            dim: None,
            records: BTreeMap::new(),
        }
    }

    pub fn with_dim(kind: StoreKind, dim: usize) -> Self {
        VectorStore {
            kind,
            dim: Some(dim),
            records: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.get(id)
    }

    /// Records in id order.
    pub fn records(&self) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.values()
    }

    /// First record (by id) for a `(node, orientation)` pair.
    pub fn find_place(&self, node: &NodeId, orientation: Heading) -> Option<&EmbeddingRecord> {
        self.records
            .values()
            .find(|r| &r.meta.node == node && r.meta.orientation == orientation)
    }

    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<(), StoreError> {
        if record.meta.kind != self.kind {
            return Err(StoreError::KindMismatch {
                expected: self.kind,
                found: record.meta.kind,
            });
        }
        let dim = record.embedding.dim();
        if let Some(expected) = self.dim {
            if expected != dim {
                return Err(StoreError::DimensionMismatch { expected, found: dim });
            }
        }
        check_finite(record.embedding.values())?;
        let n = record.embedding.norm();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(StoreError::NotNormalized(n));
        }
        if self.records.contains_key(&record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        self.dim = Some(dim);
        self.records.insert(record.id.clone(), record);
        Ok(())
    }

    /// Remove a record. Only navigational stores allow deletion.
    pub fn delete(&mut self, id: &str) -> Result<EmbeddingRecord, StoreError> {
        if self.kind == StoreKind::Environment {
            return Err(StoreError::AppendOnly);
        }
        self.records
            .remove(id)
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    /// Remove every record of a navigational store.
    pub fn clear(&mut self) -> Result<(), StoreError> {
        let ids: Vec<String> = self.records.keys().cloned().collect();
        for id in ids {
            self.delete(&id)?;
        }
        Ok(())
    }

    /// The `k` most similar records, by similarity descending then id
    /// ascending. Exhaustive scan with a bounded heap.
    pub fn query_top_k(&self, probe: &Embedding, k: usize) -> Result<Vec<QueryResult>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if self.records.is_empty() {
            return Err(StoreError::Empty);
        }
        if let Some(dim) = self.dim {
            if dim != probe.dim() {
                return Err(StoreError::DimensionMismatch {
                    expected: dim,
                    found: probe.dim(),
                });
            }
        }
        let probe_norm = probe.norm();
        if probe_norm == 0.0 {
            return Err(StoreError::ZeroVector);
        }
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        for r in self.records.values() {
            let similarity = (dot(probe.values(), r.embedding.values()) / probe_norm).clamp(-1.0, 1.0);
            let cand = Ranked { similarity, id: &r.id };
            if heap.len() < k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|r| QueryResult {
                record: self.records[r.id].clone(),
                similarity: r.similarity,
            })
            .collect())
    }

    /// Read a record-per-line file. An empty file yields an empty store of
    /// `kind`; otherwise every record must match `kind`.
    pub fn load(path: impl AsRef<Path>, kind: StoreKind) -> Result<Self, StoreError> {
        let file = std::fs::File::open(path).map_err(|e| StoreError::Io(e.to_string()))?;
        Self::read(BufReader::new(file), kind)
    }

    pub fn read(reader: impl BufRead, kind: StoreKind) -> Result<Self, StoreError> {
        let mut store = VectorStore::new(kind);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| StoreError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            let at_line = |e: StoreError| StoreError::Malformed {
                line: line_no,
                message: e.to_string(),
            };
            let embedding = Embedding::new(parsed.values).map_err(at_line)?;
            store
                .insert(EmbeddingRecord {
                    id: parsed.id,
                    embedding,
                    meta: RecordMeta {
                        node: parsed.node,
                        orientation: parsed.orientation,
                        kind: parsed.kind,
                        source: parsed.source,
                    },
                })
                .map_err(at_line)?;
        }
        Ok(store)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut file = std::fs::File::create(path).map_err(|e| StoreError::Io(e.to_string()))?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| StoreError::Io(e.to_string()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            let line = RecordLine {
                id: r.id.clone(),
                values: r.embedding.values().to_vec(),
                node: r.meta.node.clone(),
                orientation: r.meta.orientation,
                kind: r.meta.kind,
                source: r.meta.source.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, values: Vec<f64>, kind: StoreKind) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            embedding: Embedding::normalized(values).unwrap(),
            meta: RecordMeta {
                node: NodeId::new("A").unwrap(),
                orientation: Heading::EAST,
                kind,
                source: "test".into(),
            },
        }
    }

    #[test]
    fn cosine_hand_values() {
        let e1 = Embedding::new(vec![1.0, 0.0]).unwrap();
        let e2 = Embedding::new(vec![0.0, 1.0]).unwrap();
        let d = Embedding::normalized(vec![1.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
        assert!((cosine_similarity(&d, &e1).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0]),
            Err(StoreError::DimensionMismatch { .. })
        ));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(StoreError::ZeroVector));
        assert_eq!(Embedding::normalized(vec![0.0, 0.0]), Err(StoreError::ZeroVector));
        assert_eq!(Embedding::normalized(vec![f64::NAN, 1.0]), Err(StoreError::NonFinite));
        assert!(matches!(
            Embedding::new(vec![2.0, 0.0]),
            Err(StoreError::NotNormalized(_))
        ));
    }

    #[test]
    fn insert_query_delete() {
        let mut s = VectorStore::new(StoreKind::Navigational);
        s.insert(rec("a", vec![1.0, 0.0], StoreKind::Navigational)).unwrap();
        s.insert(rec("b", vec![0.0, 1.0], StoreKind::Navigational)).unwrap();
        let probe = Embedding::new(vec![0.0, 1.0]).unwrap();
        let top = s.query_top_k(&probe, 1).unwrap();
        assert_eq!(top[0].record.id, "b");
        assert_eq!(top[0].similarity, 1.0);
        assert_eq!(
            s.insert(rec("b", vec![1.0, 1.0], StoreKind::Navigational)),
            Err(StoreError::DuplicateId("b".into()))
        );
        s.delete("b").unwrap();
        assert!(s.query_top_k(&probe, 5).unwrap().iter().all(|r| r.record.id != "b"));
        assert_eq!(s.delete("b"), Err(StoreError::UnknownId("b".into())));
    }

    #[test]
    fn environment_store_is_append_only() {
        let mut s = VectorStore::new(StoreKind::Environment);
        s.insert(rec("a", vec![1.0, 0.0], StoreKind::Environment)).unwrap();
        assert_eq!(s.delete("a"), Err(StoreError::AppendOnly));
        assert!(matches!(
            s.insert(rec("n", vec![1.0, 0.0], StoreKind::Navigational)),
            Err(StoreError::KindMismatch { .. })
        ));
    }

    #[test]
    fn single_record_always_wins_and_empty_errors() {
        let mut s = VectorStore::new(StoreKind::Environment);
        let probe = Embedding::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(s.query_top_k(&probe, 1), Err(StoreError::Empty));
        s.insert(rec("only", vec![1.0, 0.0], StoreKind::Environment)).unwrap();
        let top = s.query_top_k(&probe, 3).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].record.id, "only");
        assert_eq!(s.query_top_k(&probe, 0), Err(StoreError::ZeroK));
    }

    #[test]
    fn ties_break_by_id() {
        let mut s = VectorStore::new(StoreKind::Navigational);
        for id in ["c", "a", "b"] {
            s.insert(rec(id, vec![1.0, 0.0], StoreKind::Navigational)).unwrap();
        }
        let probe = Embedding::new(vec![1.0, 0.0]).unwrap();
        let ids: Vec<_> = s
            .query_top_k(&probe, 2)
            .unwrap()
            .into_iter()
            .map(|r| r.record.id)
            .collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn dimension_checks() {
        let mut s = VectorStore::with_dim(StoreKind::Navigational, 3);
        assert!(matches!(
            s.insert(rec("a", vec![1.0, 0.0], StoreKind::Navigational)),
            Err(StoreError::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn load_reports_line_numbers() {
        let empty = VectorStore::read("".as_bytes(), StoreKind::Environment).unwrap();
        assert!(empty.is_empty());

        let good = r#"{"id":"a","values":[1.0,0.0],"node":"A","orientation":0,"kind":"environment","source":"x"}"#;
        let short = r#"{"id":"b","values":[1.0],"node":"A","orientation":0,"kind":"environment","source":"x"}"#;
        let text = format!("{good}\n{short}\n");
        match VectorStore::read(text.as_bytes(), StoreKind::Environment) {
            Err(StoreError::Malformed { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match VectorStore::read("{not json\n".as_bytes(), StoreKind::Environment) {
            Err(StoreError::Malformed { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
