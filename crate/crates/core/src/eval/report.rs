use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{choice_probability, distance, perplexity, precision, similarity, Choice, Criterion, RelativeComparison};
use crate::data::{Dataset, Manifest, Split};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::training::{embed_eval, Triplet};

/// Scores derived from the votes alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    /// Chance that two different raters of the same comparison agree.
    pub humans_raw_precision: f64,
    /// Each vote scored against the majority of the remaining votes.
    pub humans_majority_precision: Option<f64>,
    /// The per-comparison majority scored against every vote.
    pub oracle_raw_precision: f64,
    pub oracle_majority_precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub comparisons: usize,
    /// Comparisons with a strict vote majority.
    pub majority_comparisons: usize,
    pub raw_precision: f64,
    pub majority_precision: Option<f64>,
    pub raw_perplexity: f64,
    pub majority_perplexity: Option<f64>,
    /// Comparisons where both options were equally similar (scored as A).
    pub model_ties: usize,
    pub baselines: Baselines,
}

/// Scores embeddings against comparisons. The model picks the option with
/// the higher similarity, A on ties.
pub fn evaluate_embeddings<'a>(
    comparisons: &[RelativeComparison],
    lookup: impl Fn(&str) -> Option<&'a [f32]>,
) -> Result<EvalReport> {
    if comparisons.is_empty() {
        return Err(Error::invalid("no comparisons to evaluate"));
    }
    let mut missing: Vec<&str> = Vec::new();
    for c in comparisons {
        c.validate()?;
        for id in [&c.reference_id, &c.option_a_id, &c.option_b_id] {
            if lookup(id).is_none() && !missing.contains(&id.as_str()) {
                missing.push(id);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnknownId(missing.join(", ")));
    }

    let mut choices = Vec::with_capacity(comparisons.len());
    let mut p_a = Vec::with_capacity(comparisons.len());
    let mut ties = 0;
    for c in comparisons {
        let r = lookup(&c.reference_id).unwrap();
        let sa = similarity(distance(r, lookup(&c.option_a_id).unwrap())?)?;
        let sb = similarity(distance(r, lookup(&c.option_b_id).unwrap())?)?;
        if sa == sb {
            ties += 1;
        }
        choices.push(if sa >= sb { Choice::A } else { Choice::B });
        p_a.push(choice_probability(sa, sb)?);
    }
    let prob = |i: usize, side: Choice| match side {
        Choice::A => p_a[i],
        Choice::B => 1.0 - p_a[i],
    };

    let mut raw_probs = Vec::new();
    let mut majority_probs = Vec::new();
    for (i, c) in comparisons.iter().enumerate() {
        for side in [Choice::A, Choice::B] {
            raw_probs.extend(std::iter::repeat_n(prob(i, side), c.votes_for(side) as usize));
        }
        if let Some(m) = c.majority() {
            majority_probs.push(prob(i, m));
        }
    }
    let has_majority = !majority_probs.is_empty();
    Ok(EvalReport {
        comparisons: comparisons.len(),
        majority_comparisons: majority_probs.len(),
        raw_precision: precision(comparisons, &choices, Criterion::Raw)?,
        majority_precision: has_majority
            .then(|| precision(comparisons, &choices, Criterion::Majority))
            .transpose()?,
        raw_perplexity: perplexity(&raw_probs)?,
        majority_perplexity: has_majority.then(|| perplexity(&majority_probs)).transpose()?,
        model_ties: ties,
        baselines: baselines(comparisons),
    })
}

pub fn baselines(comparisons: &[RelativeComparison]) -> Baselines {
    let (mut agree_pairs, mut pairs) = (0u64, 0u64);
    let (mut loo_hits, mut loo_trials) = (0u64, 0u64);
    let (mut oracle_hits, mut votes) = (0u64, 0u64);
    let mut oracle_majority = 0u64;
    for c in comparisons {
        let (a, b) = (c.votes_a as u64, c.votes_b as u64);
        let n = a + b;
        agree_pairs += a * a.saturating_sub(1) + b * b.saturating_sub(1);
        pairs += n * n.saturating_sub(1);
        // A vote for A leaves (a-1, b) among the others, and symmetrically.
        for (mine, same, other) in [(a, a.saturating_sub(1), b), (b, b.saturating_sub(1), a)] {
            if mine == 0 || same == other {
                continue;
            }
            loo_trials += mine;
            if same > other {
                loo_hits += mine;
            }
        }
        oracle_hits += a.max(b);
        votes += n;
        oracle_majority += (a != b) as u64;
    }
    Baselines {
        humans_raw_precision: if pairs == 0 { 1.0 } else { agree_pairs as f64 / pairs as f64 },
        humans_majority_precision: (loo_trials > 0).then(|| loo_hits as f64 / loo_trials as f64),
        oracle_raw_precision: oracle_hits as f64 / votes.max(1) as f64,
        oracle_majority_precision: if oracle_majority > 0 { 1.0 } else { 0.0 },
    }
}

/// Embeds every icon the comparisons reference (once each, eval mode,
/// rescaled, no augmentation) and scores the model.
pub fn evaluate(model: &Model<f32>, comparisons: &[RelativeComparison], dataset: &Dataset) -> Result<EvalReport> {
    let mut ids: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    let mut missing = Vec::new();
    for c in comparisons {
        for id in [&c.reference_id, &c.option_a_id, &c.option_b_id] {
            if seen.insert(id.as_str()) {
                if dataset.position(id).is_ok() {
                    ids.push(id);
                } else {
                    missing.push(id.as_str());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::UnknownId(missing.join(", ")));
    }
    let images = ids.iter().map(|id| dataset.image(id)).collect::<Result<Vec<_>>>()?;
    let vectors = embed_eval(model, &images, 32)?;
    let table: HashMap<&str, &[f32]> = ids.iter().copied().zip(vectors.iter().map(Vec::as_slice)).collect();
    evaluate_embeddings(comparisons, |id| table.get(id).copied())
}

/// Uniformly sampled triplets within one split: reference and positive
/// from one collection, negative from another. Collections with fewer than
/// two icons in the split never supply a reference.
pub fn sample_triplets(manifest: &Manifest, split: Split, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let mut by_class: Vec<(&str, Vec<&str>)> = Vec::new();
    for r in manifest.in_split(split) {
        match by_class.iter_mut().find(|(c, _)| *c == r.collection) {
            Some((_, members)) => members.push(&r.id),
            None => by_class.push((&r.collection, vec![&r.id])),
        }
    }
    let eligible: Vec<usize> = (0..by_class.len()).filter(|&k| by_class[k].1.len() >= 2).collect();
    if eligible.is_empty() || by_class.len() < 2 {
        return Err(Error::Degenerate(format!(
            "split {split} needs two collections and one with at least two icons"
        )));
    }
    let references: Vec<(usize, &str)> = eligible
        .iter()
        .flat_map(|&k| by_class[k].1.iter().map(move |&id| (k, id)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let &(k, reference) = references.choose(&mut rng).unwrap();
        let positives: Vec<&str> = by_class[k].1.iter().copied().filter(|&id| id != reference).collect();
        let positive = *positives.choose(&mut rng).unwrap();
        let mut other = rng.random_range(0..by_class.len() - 1);
        if other >= k {
            other += 1;
        }
        let negative = *by_class[other].1.choose(&mut rng).unwrap();
        out.push(Triplet {
            reference_id: reference.to_owned(),
            positive_id: positive.to_owned(),
            negative_id: negative.to_owned(),
        });
    }
    Ok(out)
}

/// Ground-truth comparisons from collection labels: the in-collection
/// option wins 10–0 and sits at A or B at random.
pub fn ground_truth_comparisons(manifest: &Manifest, split: Split, count: usize, seed: u64) -> Result<Vec<RelativeComparison>> {
    let triplets = sample_triplets(manifest, split, count, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let sides: Vec<bool> = (0..triplets.len()).map(|_| rng.random_bool(0.5)).collect();
    Ok(triplets
        .into_iter()
        .zip(sides)
        .map(|(t, positive_first)| {
            let (a, b, va, vb) = if positive_first {
                (t.positive_id, t.negative_id, 10, 0)
            } else {
                (t.negative_id, t.positive_id, 0, 10)
            };
            RelativeComparison {
                reference_id: t.reference_id,
                option_a_id: a,
                option_b_id: b,
                votes_a: va,
                votes_b: vb,
            }
        })
        .collect())
}

/// Share of triplets with 𝒟(R,P) < 𝒟(R,N).
pub fn triplet_satisfaction<'a>(triplets: &[Triplet], lookup: impl Fn(&str) -> Option<&'a [f32]>) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::invalid("no triplets"));
    }
    let get = |id: &str| lookup(id).ok_or_else(|| Error::UnknownId(id.to_owned()));
    let mut hits = 0;
    for t in triplets {
        let r = get(&t.reference_id)?;
        if distance(r, get(&t.positive_id)?)? < distance(r, get(&t.negative_id)?)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / triplets.len() as f64)
}

pub fn parse_comparisons(text: &str) -> Result<Vec<RelativeComparison>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let c: RelativeComparison = serde_json::from_str(line).map_err(|e| Error::Malformed {
            what: "comparisons",
            detail: format!("line {}: {e}", i + 1),
        })?;
        c.validate().map_err(|e| Error::Malformed {
            what: "comparisons",
            detail: format!("line {}: {e}", i + 1),
        })?;
        out.push(c);
    }
    Ok(out)
}

pub fn load_comparisons(path: impl AsRef<Path>) -> Result<Vec<RelativeComparison>> {
    let path = path.as_ref();
    parse_comparisons(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_comparisons(comparisons: &[RelativeComparison], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for c in comparisons {
        text.push_str(&serde_json::to_string(c)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
