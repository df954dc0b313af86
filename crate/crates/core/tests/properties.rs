use std::collections::{BTreeMap, HashSet};

use iconsim_core::data::{allocate, stratified_split, Augmentation, IconRecord, Manifest, Split, DEFAULT_FRACTIONS};
use iconsim_core::eval::{distance, precision, Choice, Criterion, RelativeComparison};
use iconsim_core::index::EmbeddingIndex;
use iconsim_core::setopt::d_set;
use iconsim_core::tensor::{Graph, Tensor};
use iconsim_core::training::{lr_at, triplet_loss, MiningPool, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn manifest(class_sizes: &[usize]) -> Manifest {
    let mut records = Vec::new();
    for (c, &n) in class_sizes.iter().enumerate() {
        for i in 0..n {
            records.push(IconRecord {
                id: format!("c{c}-{i}"),
                path: format!("{c}-{i}.pgm"),
                collection: format!("c{c}"),
                split: None,
                keyword: None,
            });
        }
    }
    Manifest::new(records, ".").unwrap()
}

fn index(vectors: &[Vec<f32>]) -> EmbeddingIndex {
    let d = vectors[0].len();
    EmbeddingIndex::new(d, vectors.iter().enumerate().map(|(i, v)| (format!("e{i:03}"), None, v.clone())).collect())
        .unwrap()
}

fn vectors(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(-5.0f32..5.0, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(sizes in prop::collection::vec(1usize..25, 1..6), seed in any::<u64>()) {
        let m = manifest(&sizes);
        let s = stratified_split(&m, DEFAULT_FRACTIONS, seed).unwrap();
        let ids: HashSet<_> = s.records.iter().map(|r| r.id.clone()).collect();
        prop_assert_eq!(ids.len(), m.len());
        prop_assert_eq!(ids, m.records.iter().map(|r| r.id.clone()).collect::<HashSet<_>>());
        let mut counts: BTreeMap<(&str, Split), usize> = BTreeMap::new();
        for r in &s.records {
            let split = r.split.expect("every record assigned");
            *counts.entry((r.collection.as_str(), split)).or_default() += 1;
        }
        for (c, &n) in sizes.iter().enumerate() {
            let class = format!("c{c}");
            for (k, split) in [Split::Train, Split::Val, Split::Test].into_iter().enumerate() {
                let got = counts.get(&(class.as_str(), split)).copied().unwrap_or(0) as f64;
                if n >= 3 {
                    prop_assert!((got - n as f64 * DEFAULT_FRACTIONS[k]).abs() <= 1.0);
                } else if split == Split::Train {
                    prop_assert_eq!(got as usize, n);
                }
            }
        }
    }

    #[test]
    fn allocation_is_exhaustive(n in 0usize..1000) {
        prop_assert_eq!(allocate(n, DEFAULT_FRACTIONS).iter().sum::<usize>(), n);
    }

    #[test]
    fn augmentation_preserves_histogram(side in 1usize..9, seed in any::<u64>(), turns in 0u8..4, h in any::<bool>(), v in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::from_fn(vec![1, side, side], |_| rand::Rng::random_range(&mut rng, 0u8..6) as f32 / 5.0);
        let out = Augmentation { quarter_turns: turns, flip_horizontal: h, flip_vertical: v }.apply(&img).unwrap();
        let sorted = |t: &Tensor<f32>| {
            let mut d = t.data().to_vec();
            d.sort_by(f32::total_cmp);
            d
        };
        prop_assert_eq!(sorted(&out), sorted(&img));
    }

    #[test]
    fn distance_is_symmetric(pair in vectors(2..3, 7)) {
        let (a, b) = (&pair[0], &pair[1]);
        prop_assert_eq!(distance(a, b).unwrap(), distance(b, a).unwrap());
        prop_assert_eq!(distance(a, a).unwrap(), 0.0);
    }

    #[test]
    fn choices_depend_only_on_distance_order(vs in vectors(3..12, 4), scale in 0.1f32..10.0) {
        let idx = index(&vs);
        let scaled: Vec<Vec<f32>> = vs.iter().map(|v| v.iter().map(|x| x * scale).collect()).collect();
        let idx2 = index(&scaled);
        let n = vs.len();
        let comps: Vec<RelativeComparison> = (0..n)
            .map(|r| RelativeComparison {
                reference_id: idx.ids()[r].clone(),
                option_a_id: idx.ids()[(r + 1) % n].clone(),
                option_b_id: idx.ids()[(r + 2) % n].clone(),
                votes_a: 7,
                votes_b: 3,
            })
            .collect();
        let choose = |ix: &EmbeddingIndex| -> Vec<Choice> {
            comps.iter().map(|c| {
                let da = ix.distance_ids(&c.reference_id, &c.option_a_id).unwrap();
                let db = ix.distance_ids(&c.reference_id, &c.option_b_id).unwrap();
                if db < da { Choice::B } else { Choice::A }
            }).collect()
        };
        let (a, b) = (choose(&idx), choose(&idx2));
        prop_assume!(a == b);
        prop_assert_eq!(
            precision(&comps, &a, Criterion::Raw).unwrap(),
            precision(&comps, &b, Criterion::Raw).unwrap()
        );
    }

    #[test]
    fn kernel_permutes_with_ids(vs in vectors(3..9, 3), seed in any::<u64>()) {
        let idx = index(&vs);
        let ids: Vec<String> = idx.ids().to_vec();
        let mut perm: Vec<usize> = (0..ids.len()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let permuted: Vec<&String> = perm.iter().map(|&i| &ids[i]).collect();
        let (Ok(k), Ok(kp)) = (idx.kernel_matrix(&ids), idx.kernel_matrix(&permuted)) else {
            return Ok(());
        };
        for i in 0..ids.len() {
            for j in 0..ids.len() {
                prop_assert!((kp[i][j] - k[perm[i]][perm[j]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn set_score_is_permutation_invariant(vs in vectors(2..7, 5), seed in any::<u64>()) {
        let idx = index(&vs);
        let ids: Vec<String> = idx.ids().to_vec();
        let mut shuffled = ids.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (d_set(&ids, &idx).unwrap(), d_set(&shuffled, &idx).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn triplet_loss_nonnegative_and_zero_iff_satisfied(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 9), 1..6),
        margin in 0.01f64..1.0,
    ) {
        let m = rows.len();
        let pick = |k: usize| Tensor::from_fn(vec![m, 3], |i| rows[i / 3][k * 3 + i % 3]);
        let mut g = Graph::<f64>::new();
        let (r, p, n) = (g.constant(pick(0)), g.constant(pick(1)), g.constant(pick(2)));
        let loss = triplet_loss(&mut g, r, p, n, margin).unwrap();
        let value = g.value(loss).item().unwrap();
        prop_assert!(value >= 0.0);
        let sq = |row: &[f64], a: usize, b: usize| (0..3).map(|j| (row[a * 3 + j] - row[b * 3 + j]).powi(2)).sum::<f64>();
        let satisfied = rows.iter().all(|row| sq(row, 0, 1) - sq(row, 0, 2) + margin <= 0.0);
        prop_assert_eq!(value == 0.0, satisfied);
    }

    #[test]
    fn learning_rate_never_increases(e in 0u32..1000) {
        let cfg = TrainConfig::default();
        prop_assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
    }

    #[test]
    fn mined_triplets_are_well_formed(
        classes in prop::collection::vec(0usize..4, 8..20),
        dims in vectors(20..21, 3),
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        let labels: Vec<String> = classes.iter().map(|c| format!("k{c}")).collect();
        let mut counts = BTreeMap::new();
        for l in &labels {
            *counts.entry(l.clone()).or_insert(0usize) += 1;
        }
        prop_assume!(counts.len() >= 2 && counts.values().all(|&c| c >= 2));
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("i{i}")).collect();
        let pool = MiningPool::new(&ids, &labels).unwrap();
        let emb = &dims[..labels.len()];
        let refs: Vec<usize> = (0..ids.len()).collect();
        let triplets = pool.mine(emb, &refs, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(triplets.len(), n);
        let class = |id: &str| labels[id[1..].parse::<usize>().unwrap()].clone();
        for t in &triplets {
            prop_assert_ne!(&t.reference_id, &t.positive_id);
            prop_assert_eq!(class(&t.reference_id), class(&t.positive_id));
            prop_assert_ne!(class(&t.reference_id), class(&t.negative_id));
        }
    }
}
