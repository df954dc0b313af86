//! Icon-set proposals: one icon per keyword pool, minimizing the sum of
//! pairwise embedding distances.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::EmbeddingIndex;

pub const DEFAULT_EXHAUSTIVE_CAP: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordPool {
    pub keyword: String,
    pub ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// One id per pool, in pool order.
    pub ids: Vec<String>,
    pub keywords: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SearchMode {
    Exhaustive { cap: u128 },
    Beam { width: usize },
}

impl Default for SearchMode {
    fn default() -> Self {
        SearchMode::Exhaustive {
            cap: DEFAULT_EXHAUSTIVE_CAP,
        }
    }
}

/// Sum of 𝒟 over unordered pairs, accumulated as (0,1), (0,2), …, (1,2), ….
pub fn d_set<S: AsRef<str>>(ids: &[S], index: &EmbeddingIndex) -> Result<f64> {
    if ids.len() < 2 {
        return Err(Error::invalid("a set needs at least two icons"));
    }
    let pos = ids.iter().map(|id| index.position(id.as_ref())).collect::<Result<Vec<_>>>()?;
    Ok(pair_sum(&pos, |a, b| index.distance(a, b)))
}

fn pair_sum(items: &[usize], d: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            total += d(items[i], items[j]);
        }
    }
    total
}

/// Product of pool sizes, saturating.
pub fn candidate_count(pools: &[KeywordPool]) -> u128 {
    pools.iter().fold(1u128, |acc, p| acc.saturating_mul(p.ids.len() as u128))
}

/// Pools of the given keywords, members in index order.
pub fn pools_for_keywords<S: AsRef<str>>(index: &EmbeddingIndex, keywords: &[S]) -> Result<Vec<KeywordPool>> {
    keywords
        .iter()
        .map(|k| {
            let ids: Vec<String> = index.with_keyword(k.as_ref()).into_iter().map(str::to_owned).collect();
            if ids.is_empty() {
                return Err(Error::UnknownId(format!("keyword {}", k.as_ref())));
            }
            Ok(KeywordPool {
                keyword: k.as_ref().to_owned(),
                ids,
            })
        })
        .collect()
}

/// Positions of every pool member, checking resolvability and disjointness.
fn resolve(pools: &[KeywordPool], index: &EmbeddingIndex) -> Result<Vec<Vec<usize>>> {
    if pools.len() < 2 {
        return Err(Error::invalid("set optimization needs at least two pools"));
    }
    let mut seen = HashSet::new();
    pools
        .iter()
        .map(|p| {
            if p.ids.is_empty() {
                return Err(Error::invalid(format!("pool {} is empty", p.keyword)));
            }
            p.ids
                .iter()
                .map(|id| {
                    if !seen.insert(id.as_str()) {
                        return Err(Error::invalid(format!("icon {id} appears in more than one pool")));
                    }
                    index.position(id)
                })
                .collect()
        })
        .collect()
}

/// Ascending score, then lexicographic id tuple.
fn set_order(a: &CandidateSet, b: &CandidateSet) -> Ordering {
    a.score.total_cmp(&b.score).then_with(|| a.ids.cmp(&b.ids))
}

fn make_set(pools: &[KeywordPool], choice: &[usize], score: f64) -> CandidateSet {
    CandidateSet {
        ids: pools.iter().zip(choice).map(|(p, &i)| p.ids[i].clone()).collect(),
        keywords: pools.iter().map(|p| p.keyword.clone()).collect(),
        score,
    }
}

/// Keeps the `cap` best sets under [`set_order`].
struct TopN {
    cap: usize,
    sets: Vec<CandidateSet>,
}

impl TopN {
    fn admits(&self, score: f64) -> bool {
        self.sets.len() < self.cap || self.sets.last().is_some_and(|w| score <= w.score)
    }

    fn offer(&mut self, set: CandidateSet) {
        let at = self.sets.partition_point(|s| set_order(s, &set) == Ordering::Less);
        if at < self.cap {
            self.sets.insert(at, set);
            self.sets.truncate(self.cap);
        }
    }
}

/// Scores every candidate; errors when there are more than `cap`.
pub fn optimize_exhaustive(pools: &[KeywordPool], index: &EmbeddingIndex, top_n: usize, cap: u128) -> Result<Vec<CandidateSet>> {
    let pos = resolve(pools, index)?;
    let count = candidate_count(pools);
    if count > cap {
        return Err(Error::ExhaustiveCapExceeded { count, cap });
    }
    if top_n == 0 {
        return Ok(Vec::new());
    }
    let n = pools.len();
    // tables[p][q] holds 𝒟 between members of pools p < q, row-major.
    let mut tables: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for p in 0..n {
        for q in 0..n {
            let t = if q > p {
                let mut t = Vec::with_capacity(pos[p].len() * pos[q].len());
                for &a in &pos[p] {
                    for &b in &pos[q] {
                        t.push(index.distance(a, b));
                    }
                }
                t
            } else {
                Vec::new()
            };
            tables[p].push(t);
        }
    }
    let mut best = TopN { cap: top_n, sets: Vec::new() };
    let mut choice = vec![0usize; n];
    loop {
        let mut score = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                score += tables[p][q][choice[p] * pos[q].len() + choice[q]];
            }
        }
        if best.admits(score) {
            best.offer(make_set(pools, &choice, score));
        }
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best.sets);
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < pos[k].len() {
                break;
            }
            choice[k] = 0;
        }
    }
}

/// Beam search over pools in ascending-size order. Returned scores are the
/// exact set scores; optimality is not guaranteed when the beam prunes.
pub fn optimize_beam(pools: &[KeywordPool], index: &EmbeddingIndex, beam_width: usize, top_n: usize) -> Result<Vec<CandidateSet>> {
    if beam_width == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    let pos = resolve(pools, index)?;
    let n = pools.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&p| (pos[p].len(), p));

    // Partial choice per pool (usize::MAX = unassigned) and partial score.
    let mut beam: Vec<(Vec<usize>, f64)> = vec![(vec![usize::MAX; n], 0.0)];
    for (depth, &p) in order.iter().enumerate() {
        let mut next = Vec::with_capacity(beam.len() * pos[p].len());
        for (choice, partial) in &beam {
            for m in 0..pos[p].len() {
                let added: f64 = order[..depth]
                    .iter()
                    .map(|&q| index.distance(pos[q][choice[q]], pos[p][m]))
                    .sum();
                let mut c = choice.clone();
                c[p] = m;
                next.push((c, partial + added));
            }
        }
        let key = |c: &[usize]| -> Vec<&str> {
            (0..n)
                .filter(|&q| c[q] != usize::MAX)
                .map(|q| pools[q].ids[c[q]].as_str())
                .collect()
        };
        next.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| key(&a.0).cmp(&key(&b.0))));
        next.truncate(beam_width);
        beam = next;
    }
    let mut sets: Vec<CandidateSet> = beam
        .into_iter()
        .map(|(choice, _)| {
            let members: Vec<usize> = (0..n).map(|q| pos[q][choice[q]]).collect();
            let score = pair_sum(&members, |a, b| index.distance(a, b));
            make_set(pools, &choice, score)
        })
        .collect();
    sets.sort_by(set_order);
    sets.truncate(top_n);
    Ok(sets)
}

/// Optimizes the unlocked pools with each locked pool pinned to its icon.
/// `locked` maps keyword → id.
pub fn lock_and_reoptimize(
    pools: &[KeywordPool],
    locked: &HashMap<String, String>,
    index: &EmbeddingIndex,
    mode: SearchMode,
    top_n: usize,
) -> Result<Vec<CandidateSet>> {
    for keyword in locked.keys() {
        if !pools.iter().any(|p| &p.keyword == keyword) {
            return Err(Error::invalid(format!("locked keyword {keyword} is not among the pools")));
        }
    }
    let pinned = pools
        .iter()
        .map(|p| match locked.get(&p.keyword) {
            Some(id) if p.ids.contains(id) => Ok(KeywordPool {
                keyword: p.keyword.clone(),
                ids: vec![id.clone()],
            }),
            Some(id) => Err(Error::invalid(format!("locked icon {id} is not in pool {}", p.keyword))),
            None => Ok(p.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    match mode {
        SearchMode::Exhaustive { cap } => optimize_exhaustive(&pinned, index, top_n, cap),
        SearchMode::Beam { width } => optimize_beam(&pinned, index, width, top_n),
    }
}
