//! Adaptive hard-triplet sampling: for each reference, the farthest icon of
//! its own class and the nearest icon of one randomly chosen other class.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::squared_distance;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub reference_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

/// Candidate icons grouped by class, in input order.
#[derive(Clone, Debug)]
pub struct MiningPool {
    ids: Vec<String>,
    class_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl MiningPool {
    pub fn new<I: AsRef<str>, C: AsRef<str>>(ids: &[I], classes: &[C]) -> Result<Self> {
        if ids.len() != classes.len() {
            return Err(Error::invalid("one class label per id required"));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut class_of = Vec::with_capacity(ids.len());
        for (i, c) in classes.iter().enumerate() {
            let next = members.len();
            let k = *index.entry(c.as_ref()).or_insert(next);
            if k == next {
                members.push(Vec::new());
            }
            members[k].push(i);
            class_of.push(k);
        }
        if members.len() < 2 {
            return Err(Error::Degenerate("triplet mining needs at least two classes".into()));
        }
        Ok(Self {
            ids: ids.iter().map(|s| s.as_ref().to_owned()).collect(),
            class_of,
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.class_of[i]
    }

    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn class_count(&self) -> usize {
        self.members.len()
    }

    /// Mines `n` triplets. `references` index into the pool; they are drawn
    /// in a shuffled order without repetition, reshuffling whenever the
    /// list is exhausted. `embeddings[i]` belongs to pool entry `i`.
    pub fn mine<R: Rng + ?Sized>(&self, embeddings: &[Vec<f32>], references: &[usize], n: usize, rng: &mut R) -> Result<Vec<Triplet>> {
        if embeddings.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} embeddings for a pool of {}",
                embeddings.len(),
                self.len()
            )));
        }
        if n > 0 && references.is_empty() {
            return Err(Error::Degenerate("no reference icons to mine from".into()));
        }
        for &r in references {
            if r >= self.len() {
                return Err(Error::invalid(format!("reference index {r} out of range")));
            }
            if self.members[self.class_of[r]].len() < 2 {
                return Err(Error::Degenerate(format!(
                    "icon {} is the only member of its class; no positive exists",
                    self.ids[r]
                )));
            }
        }
        let mut out = Vec::with_capacity(n);
        let mut order = references.to_vec();
        let mut cursor = order.len();
        while out.len() < n {
            if cursor == order.len() {
                order.copy_from_slice(references);
                order.shuffle(rng);
                cursor = 0;
            }
            let r = order[cursor];
            cursor += 1;
            let own = self.class_of[r];
            let d = |j: usize| squared_distance(&embeddings[r], &embeddings[j]);

            let positive = argbest(self.members[own].iter().copied().filter(|&j| j != r), d, |a, b| a > b);
            let mut other = rng.random_range(0..self.members.len() - 1);
            if other >= own {
                other += 1;
            }
            let negative = argbest(self.members[other].iter().copied(), d, |a, b| a < b);
            out.push(Triplet {
                reference_id: self.ids[r].clone(),
                positive_id: self.ids[positive].clone(),
                negative_id: self.ids[negative].clone(),
            });
        }
        Ok(out)
    }
}

/// First candidate whose key beats every earlier one under `better`.
fn argbest(candidates: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64, better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for j in candidates {
        let k = key(j);
        if best.is_none_or(|(_, b)| better(k, b)) {
            best = Some((j, k));
        }
    }
    best.expect("nonempty candidate set").0
}
