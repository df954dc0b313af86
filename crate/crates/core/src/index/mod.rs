//! Immutable id → embedding store: exact kNN, kernel matrices, farthest
//! pairs and a PCA map.
//!
//! File layout (little-endian): `"ICNE" | u32 version = 1 | u32 count | u32 dim`,
//! then per entry `u16 id len | id | u16 keyword len | keyword | dim × f32`.

mod project;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::training::{embed_eval, squared_distance};

pub use project::{project_2d, Projection};

pub const INDEX_MAGIC: [u8; 4] = *b"ICNE";
pub const INDEX_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    ids: Vec<String>,
    keywords: Vec<Option<String>>,
    vectors: Vec<f32>,
    positions: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub a: String,
    pub b: String,
    pub distance: f64,
}

pub enum Query<'a> {
    Id(&'a str),
    Vector(&'a [f32]),
}

impl EmbeddingIndex {
    pub fn new(dim: usize, entries: Vec<(String, Option<String>, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("index dimension must be at least 1"));
        }
        let mut index = Self {
            dim,
            ids: Vec::with_capacity(entries.len()),
            keywords: Vec::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len() * dim),
            positions: HashMap::with_capacity(entries.len()),
        };
        for (id, keyword, v) in entries {
            if v.len() != dim {
                return Err(Error::ShapeMismatch {
                    op: "index entry",
                    left: vec![dim],
                    right: vec![v.len()],
                });
            }
            if index.positions.insert(id.clone(), index.ids.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            index.ids.push(id);
            index.keywords.push(keyword);
            index.vectors.extend(v);
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn keyword(&self, i: usize) -> Option<&str> {
        self.keywords[i].as_deref()
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.positions.get(id).copied().ok_or_else(|| Error::UnknownId(id.to_owned()))
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector_of(&self, id: &str) -> Result<&[f32]> {
        Ok(self.vector(self.position(id)?))
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        squared_distance(self.vector(i), self.vector(j)).sqrt()
    }

    pub fn distance_ids(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.distance(self.position(a)?, self.position(b)?))
    }

    /// Ids whose keyword equals `keyword`, in index order.
    pub fn with_keyword(&self, keyword: &str) -> Vec<&str> {
        (0..self.len())
            .filter(|&i| self.keyword(i) == Some(keyword))
            .map(|i| self.ids[i].as_str())
            .collect()
    }

    /// Exact scan: ascending distance, ties by id. A query by id excludes itself.
    pub fn knn(&self, query: Query<'_>, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let (q, skip) = match query {
            Query::Id(id) => {
                let p = self.position(id)?;
                (self.vector(p), Some(p))
            }
            Query::Vector(v) => {
                if v.len() != self.dim {
                    return Err(Error::ShapeMismatch {
                        op: "knn query",
                        left: vec![self.dim],
                        right: vec![v.len()],
                    });
                }
                (v, None)
            }
        };
        let mut all: Vec<(f64, usize)> = (0..self.len())
            .filter(|&i| Some(i) != skip)
            .map(|i| (squared_distance(q, self.vector(i)).sqrt(), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]));
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, order);
            all.truncate(k);
        }
        all.sort_by(order);
        Ok(all
            .into_iter()
            .map(|(d, i)| Neighbor {
                id: self.ids[i].clone(),
                distance: d,
            })
            .collect())
    }

    /// Pairwise distances divided by the largest off-diagonal entry.
    pub fn kernel_matrix<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<Vec<f64>>> {
        if ids.len() < 2 {
            return Err(Error::invalid("a kernel needs at least two ids"));
        }
        let pos = ids.iter().map(|id| self.position(id.as_ref())).collect::<Result<Vec<_>>>()?;
        let n = pos.len();
        let mut m = vec![vec![0.0; n]; n];
        let mut max = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let d = self.distance(pos[i], pos[j]);
                m[i][j] = d;
                m[j][i] = d;
                max = max.max(d);
            }
        }
        if max == 0.0 {
            return Err(Error::Degenerate("all embeddings identical; kernel undefined".into()));
        }
        for row in &mut m {
            for v in row.iter_mut() {
                *v /= max;
            }
        }
        Ok(m)
    }

    /// The `top_n` farthest unordered pairs within `scope` (the whole index
    /// when `None`), descending; equal distances keep scope order.
    pub fn max_distance_pairs<S: AsRef<str>>(&self, scope: Option<&[S]>, top_n: usize) -> Result<Vec<PairDistance>> {
        let pos: Vec<usize> = match scope {
            Some(ids) => ids.iter().map(|id| self.position(id.as_ref())).collect::<Result<_>>()?,
            None => (0..self.len()).collect(),
        };
        if pos.len() < 2 {
            return Err(Error::invalid("pairs need at least two ids"));
        }
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(pos.len() * (pos.len() - 1) / 2);
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                pairs.push((self.distance(pos[i], pos[j]), i, j));
            }
        }
        let order = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        if top_n < pairs.len() && top_n > 0 {
            pairs.select_nth_unstable_by(top_n - 1, order);
        }
        pairs.truncate(top_n);
        pairs.sort_by(order);
        Ok(pairs
            .into_iter()
            .map(|(d, i, j)| PairDistance {
                a: self.ids[pos[i]].clone(),
                b: self.ids[pos[j]].clone(),
                distance: d,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(16 + self.vectors.len() * 4 + self.len() * 24);
        out.extend_from_slice(&INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for i in 0..self.len() {
            for s in [self.ids[i].as_str(), self.keyword(i).unwrap_or("")] {
                let len = u16::try_from(s.len()).map_err(|_| Error::invalid(format!("string too long for index: {s}")))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            for v in self.vector(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(Error::Truncated { what: "index" })?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let magic: [u8; 4] = take(4)?.try_into().unwrap();
        if magic != INDEX_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = u32_at(take(4)?) as usize;
        let dim = u32_at(take(4)?) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut text = || -> Result<String> {
                let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
                String::from_utf8(take(len)?.to_vec()).map_err(|e| Error::Malformed {
                    what: "index",
                    detail: e.to_string(),
                })
            };
            let id = text()?;
            let keyword = text()?;
            let raw = take(dim * 4)?;
            let v = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            entries.push((id, (!keyword.is_empty()).then_some(keyword), v));
        }
        if pos != bytes.len() {
            return Err(Error::Malformed {
                what: "index",
                detail: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        Self::new(dim, entries)
    }
}

/// Eval-mode embedding of every manifest icon, in manifest order.
pub fn build_index(model: &Model<f32>, dataset: &Dataset) -> Result<EmbeddingIndex> {
    let images: Vec<_> = dataset.images().iter().collect();
    let vectors = embed_eval(model, &images, 32)?;
    let entries = dataset
        .manifest
        .records
        .iter()
        .zip(vectors)
        .map(|(r, v)| (r.id.clone(), r.keyword.clone(), v))
        .collect();
    EmbeddingIndex::new(model.config().embedding_dim, entries)
}

pub fn save_index(index: &EmbeddingIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, index.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<EmbeddingIndex> {
    let path = path.as_ref();
    EmbeddingIndex::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Total order used by [`EmbeddingIndex::knn`].
pub fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id))
}
