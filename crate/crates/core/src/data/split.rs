use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Manifest, Split};
use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

/// Largest-remainder allocation of `n` items over `fractions`; remainder
/// ties go to the earlier split.
pub fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| (q + 1e-9).floor() as usize);
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    let rem = |i: usize| quotas[i] - counts[i] as f64;
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() < 1e-9 {
            a.cmp(&b)
        } else {
            rb.total_cmp(&ra)
        }
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Per collection: shuffle with the seeded stream, then cut into
/// train/val/test by [`allocate`]. Collections with fewer than three
/// records go entirely to train.
pub fn stratified_split(manifest: &Manifest, fractions: [f64; 3], seed: u64) -> Result<Manifest> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut by_class: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.collection.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Train; manifest.len()];
    for class in manifest.collections() {
        let mut members = by_class.remove(class).unwrap_or_default();
        if members.len() < 3 {
            log::warn!("collection {class:?} has {} icons; all assigned to train", members.len());
            continue;
        }
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = allocate(members.len(), fractions);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    let mut out = manifest.clone();
    for (r, s) in out.records.iter_mut().zip(assignment) {
        r.split = Some(s);
    }
    Ok(out)
}
