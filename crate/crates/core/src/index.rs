//! Exact cosine top-k index over embedding vectors.
//!
//! Vectors are L2-normalized on insert and on query, so a score is a plain
//! dot product. Search is a full scan; ties are broken by insertion order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

const MAGIC: &str = "cap2skill-index";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("vector has no components")]
    EmptyVector,
    #[error("vector has a non-finite component")]
    NonFinite,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("index is frozen")]
    Frozen,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index was built with model {found:?}, expected {expected:?}")]
    ModelMismatch { expected: String, found: String },
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad index file (format version {version:?}): {message}")]
    Format { version: Option<u32>, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self, IndexError> {
        if components.is_empty() {
            return Err(IndexError::EmptyVector);
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        Ok(Self(components))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Vector, IndexError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(IndexError::ZeroVector);
        }
        Ok(Vector(self.0.iter().map(|c| c / n).collect()))
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|c| c * factor).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// dot(a,b) / (|a|·|b|) in 64-bit arithmetic.
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64, IndexError> {
    if a.dimension() != b.dimension() {
        return Err(IndexError::DimensionMismatch { expected: a.dimension(), found: b.dimension() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    // product of norms is commutative, so the result is exactly symmetric
    Ok(dot(&a.0, &b.0) / (na * nb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub chunk_text: String,
    pub vector: Vector,
    pub insert_ordinal: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    model: String,
    dimension: Option<usize>,
    records: Vec<EmbeddingRecord>,
    ids: HashSet<String>,
    next_ordinal: u64,
    frozen: bool,
}

struct Candidate {
    score: f64,
    ordinal: u64,
    slot: usize,
}

// Max-heap order is "worse first": lower score, then later insertion.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.ordinal.cmp(&other.ordinal))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl VectorIndex {
    /// `model` names the embedding model; it is written to the file header.
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            dimension: None,
            records: Vec::new(),
            ids: HashSet::new(),
            next_ordinal: 0,
            frozen: false,
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Ends the build phase; later inserts fail.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Inserts a record and returns its ordinal. The first insert fixes the
    /// index dimension.
    pub fn insert(&mut self, id: &str, chunk_text: &str, vector: &Vector) -> Result<u64, IndexError> {
        if self.frozen {
            return Err(IndexError::Frozen);
        }
        if let Some(dim) = self.dimension {
            if vector.dimension() != dim {
                return Err(IndexError::DimensionMismatch { expected: dim, found: vector.dimension() });
            }
        }
        if self.ids.contains(id) {
            return Err(IndexError::DuplicateId(id.to_string()));
        }
        let normalized = vector.normalized()?;
        let ordinal = self.next_ordinal;
        self.dimension = Some(vector.dimension());
        self.ids.insert(id.to_string());
        self.records.push(EmbeddingRecord {
            id: id.to_string(),
            chunk_text: chunk_text.to_string(),
            vector: normalized,
            insert_ordinal: ordinal,
        });
        self.next_ordinal += 1;
        Ok(ordinal)
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// The `min(k, len)` most similar records, best first.
    pub fn top_k(&self, query: &Vector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let Some(dim) = self.dimension.filter(|_| !self.records.is_empty()) else {
            return Err(IndexError::EmptyIndex);
        };
        if query.dimension() != dim {
            return Err(IndexError::DimensionMismatch { expected: dim, found: query.dimension() });
        }
        let q = query.normalized()?;
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (slot, r) in self.records.iter().enumerate() {
            // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie
            let c = Candidate { score: dot(&q.0, &r.vector.0) + 0.0, ordinal: r.insert_ordinal, slot };
            if heap.len() < k {
                heap.push(c);
            } else if heap.peek().is_some_and(|worst| c < *worst) {
                heap.pop();
                heap.push(c);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(n, c)| SearchHit {
                id: self.records[c.slot].id.clone(),
                score: c.score.clamp(-1.0, 1.0),
                rank: n + 1,
            })
            .collect())
    }

    /// Text serialization; identical indexes produce identical bytes.
    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} v{FORMAT_VERSION}");
        let _ = writeln!(out, "model {}", json_str(&self.model));
        let _ = writeln!(out, "dimension {}", self.dimension.unwrap_or(0));
        let _ = writeln!(out, "count {}", self.records.len());
        for r in &self.records {
            let _ = writeln!(out, "record {} {}", r.insert_ordinal, json_str(&r.id));
            let _ = writeln!(out, "text {}", json_str(&r.chunk_text));
            out.push_str("vector");
            for c in &r.vector.0 {
                // shortest representation that round-trips exactly
                let _ = write!(out, " {c:?}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_file_text(text: &str) -> Result<Self, IndexError> {
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or("");
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok());
        let Some(version) = version else {
            return Err(format_err(None, "missing header"));
        };
        if version != FORMAT_VERSION {
            return Err(format_err(Some(version), "unsupported version"));
        }
        let fail = |m: &str| format_err(Some(version), m);
        let mut field = |name: &str| -> Result<String, IndexError> {
            let line = lines.next().ok_or_else(|| fail(&format!("missing {name} line")))?;
            line.strip_prefix(name)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| fail(&format!("expected {name} line")))
        };
        let model: String = parse_json_str(&field("model")?).ok_or_else(|| fail("bad model"))?;
        let dimension: usize = field("dimension")?.parse().map_err(|_| fail("bad dimension"))?;
        let count: usize = field("count")?.parse().map_err(|_| fail("bad count"))?;
        let mut index = VectorIndex::new(model);
        if count > 0 {
            index.dimension = Some(dimension);
        }
        for n in 0..count {
            let rec = field("record").map_err(|_| fail(&format!("truncated at record {n}")))?;
            let (ordinal, id) = rec.split_once(' ').ok_or_else(|| fail("bad record line"))?;
            let ordinal: u64 = ordinal.parse().map_err(|_| fail("bad ordinal"))?;
            let id: String = parse_json_str(id).ok_or_else(|| fail("bad id"))?;
            let chunk_text: String =
                parse_json_str(&field("text").map_err(|_| fail(&format!("truncated at record {n}")))?)
                    .ok_or_else(|| fail("bad text"))?;
            let comps = field("vector").map_err(|_| fail(&format!("truncated at record {n}")))?;
            let comps: Vec<f64> = comps
                .split(' ')
                .map(|c| c.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| fail("bad vector component"))?;
            if comps.len() != dimension {
                return Err(fail(&format!("record {n} has {} components, expected {dimension}", comps.len())));
            }
            let vector = Vector::new(comps).map_err(|e| fail(&e.to_string()))?;
            if vector.norm() == 0.0 {
                return Err(fail("zero vector"));
            }
            if ordinal < index.next_ordinal && n > 0 {
                return Err(fail("ordinals not increasing"));
            }
            if !index.ids.insert(id.clone()) {
                return Err(fail(&format!("duplicate id {id}")));
            }
            index.records.push(EmbeddingRecord { id, chunk_text, vector, insert_ordinal: ordinal });
            index.next_ordinal = ordinal + 1;
        }
        if lines.next() != Some("end") {
            return Err(fail("missing end marker"));
        }
        if lines.any(|l| !l.is_empty()) {
            return Err(fail("trailing content"));
        }
        index.frozen = true;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_file_text())
            .map_err(|source| IndexError::Io { path: path.to_path_buf(), source })
    }

    /// Loads a saved index, refusing one built with a different model.
    pub fn load(path: &Path, expected_model: Option<&str>) -> Result<Self, IndexError> {
        let text = fs::read_to_string(path)
            .map_err(|source| IndexError::Io { path: path.to_path_buf(), source })?;
        let index = Self::from_file_text(&text)?;
        if let Some(expected) = expected_model {
            if index.model != expected {
                return Err(IndexError::ModelMismatch {
                    expected: expected.to_string(),
                    found: index.model,
                });
            }
        }
        Ok(index)
    }
}

fn format_err(version: Option<u32>, message: &str) -> IndexError {
    IndexError::Format { version, message: message.to_string() }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn parse_json_str(s: &str) -> Option<String> {
    serde_json::from_str(s).ok()
}
