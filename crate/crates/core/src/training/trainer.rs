use std::collections::HashMap;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::config::{lr_at, TrainConfig};
use super::loss::{squared_distance, triplet_hinge, triplet_loss};
use super::mining::{MiningPool, Triplet};
use crate::data::{eval_view, train_view, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mode, Model};
use crate::tensor::{ops, Graph, Tensor};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub lr: f64,
    /// Mean hinge per mined triplet over the epoch's updates.
    pub train_loss: f64,
    /// Mean hinge per frozen validation triplet; `None` without a val split.
    pub val_loss: Option<f64>,
    /// Share of the epoch's triplets with d(R,P) < d(R,N) after the epoch.
    pub triplet_satisfaction: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Lowest validation loss seen; equals `last` when there is no val split.
    pub best: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// Eval-mode embeddings of `[1,H,W]` images after rescaling to the model input.
pub fn embed_eval(model: &Model<f32>, images: &[&Tensor<f32>], batch: usize) -> Result<Vec<Vec<f32>>> {
    let size = model.config().input_size;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let views = chunk.par_iter().map(|img| eval_view(img, size)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor<f32>> = views.iter().collect();
        out.extend(model.embed_images(&refs, refs.len())?);
    }
    Ok(out)
}

fn embed_positions(model: &Model<f32>, dataset: &Dataset, positions: &[usize], batch: usize) -> Result<Vec<Vec<f32>>> {
    let images: Vec<&Tensor<f32>> = positions.iter().map(|&i| dataset.image_at(i)).collect();
    embed_eval(model, &images, batch)
}

fn split_positions(dataset: &Dataset, split: Split) -> Vec<usize> {
    dataset
        .manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Some(split))
        .map(|(i, _)| i)
        .collect()
}

fn pool_for(dataset: &Dataset, positions: &[usize]) -> Result<MiningPool> {
    let records = &dataset.manifest.records;
    let ids: Vec<&str> = positions.iter().map(|&i| records[i].id.as_str()).collect();
    let classes: Vec<&str> = positions.iter().map(|&i| records[i].collection.as_str()).collect();
    MiningPool::new(&ids, &classes)
}

/// Trains from freshly initialized weights.
pub fn train(
    dataset: &Dataset,
    model: Model<f32>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    resume(dataset, Checkpoint::new(model), config, on_epoch)
}

/// Continues from `start.epoch` up to `config.epochs`. Epoch `e` draws all
/// randomness from stream `e + 1` of the seed, so a resumed run reproduces
/// the uninterrupted one.
pub fn resume(
    dataset: &Dataset,
    start: Checkpoint,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_pos = split_positions(dataset, Split::Train);
    let val_pos = split_positions(dataset, Split::Val);
    if train_pos.is_empty() {
        return Err(Error::Degenerate("manifest has no train icons".into()));
    }
    let pool = pool_for(dataset, &train_pos)?;
    for class in 0..pool.class_count() {
        let members = pool.class_members(class);
        if members.len() < 2 {
            return Err(Error::Degenerate(format!(
                "collection of {} has a single train icon; positives need at least two",
                pool.id(members[0])
            )));
        }
    }
    let references: Vec<usize> = (0..train_pos.len()).collect();
    let n_triplets = config.triplets_per_epoch.unwrap_or(train_pos.len());
    let pool_index: HashMap<&str, usize> = (0..pool.len()).map(|i| (pool.id(i), i)).collect();

    let mut model = start.model;
    let shapes: Vec<Vec<usize>> = model.trainable().iter().map(|t| t.shape().to_vec()).collect();
    let mut adam = start.optimizer.unwrap_or_else(|| AdamState::new(&shapes));
    if adam.first_moment.iter().map(|t| t.shape().to_vec()).ne(shapes.iter().cloned()) {
        return Err(Error::invalid("optimizer state does not match the model"));
    }

    let validation = ValidationSet::mine(dataset, &model, &train_pos, &val_pos, config)?;

    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut embeddings: Option<Vec<Vec<f32>>> = None;
    for epoch in start.epoch..config.epochs {
        let current = match embeddings.take() {
            Some(e) => e,
            None => embed_positions(&model, dataset, &train_pos, config.embed_batch)?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        let triplets = pool.mine(&current, &references, n_triplets, &mut rng)?;

        let lr = lr_at(epoch, config);
        let mut loss_sum = 0.0;
        for (b, batch) in triplets.chunks(config.batch_size).enumerate() {
            let loss = train_step(&mut model, &mut adam, dataset, batch, lr, config, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch as usize, batch: b });
            }
            loss_sum += loss;
        }

        let updated = embed_positions(&model, dataset, &train_pos, config.embed_batch)?;
        let satisfied = triplets
            .iter()
            .filter(|t| {
                let e = |id: &str| &updated[pool_index[id]];
                squared_distance(e(&t.reference_id), e(&t.positive_id)) < squared_distance(e(&t.reference_id), e(&t.negative_id))
            })
            .count();
        let val_loss = match &validation {
            Some(v) => Some(v.loss(&model, dataset, &updated, &train_pos, config)?),
            None => None,
        };
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / triplets.len().max(1) as f64,
            val_loss,
            triplet_satisfaction: satisfied as f64 / triplets.len().max(1) as f64,
        };
        log::info!(
            "epoch {epoch}: lr {lr:e} train {:.5} val {} satisfied {:.3}",
            metrics.train_loss,
            metrics.val_loss.map_or("-".into(), |v| format!("{v:.5}")),
            metrics.triplet_satisfaction
        );
        on_epoch(&metrics);
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((
                    v,
                    Checkpoint {
                        model: model.clone(),
                        optimizer: Some(adam.clone()),
                        epoch: epoch + 1,
                    },
                ));
            }
        }
        history.push(metrics);
        embeddings = Some(updated);
    }

    let last = Checkpoint {
        model,
        optimizer: Some(adam),
        epoch: config.epochs.max(start.epoch),
    };
    let best = best.map(|(_, c)| c).unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { last, best, history })
}

/// One ADAM update on a batch of triplets; returns the summed loss.
fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    dataset: &Dataset,
    batch: &[Triplet],
    lr: f64,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let size = model.config().input_size;
    let m = batch.len();
    let mut views = Vec::with_capacity(3 * m);
    for role in 0..3 {
        for t in batch {
            let id = match role {
                0 => &t.reference_id,
                1 => &t.positive_id,
                _ => &t.negative_id,
            };
            views.push(train_view(dataset.image(id)?, size, config.crop_ratio, rng)?.unsqueeze0());
        }
    }
    let refs: Vec<&Tensor<f32>> = views.iter().collect();
    let input = Tensor::stack_rows(&refs)?;

    let mut graph = Graph::new();
    let x = graph.constant(input);
    let fwd = model.forward(&mut graph, x, Mode::Train, Some(rng as &mut dyn RngCore), true)?;
    let fr = ops::slice_rows(&mut graph, fwd.embedding, 0, m)?;
    let fp = ops::slice_rows(&mut graph, fwd.embedding, m, m)?;
    let fneg = ops::slice_rows(&mut graph, fwd.embedding, 2 * m, m)?;
    let loss = triplet_loss(&mut graph, fr, fp, fneg, config.margin)?;
    let value = graph.value(loss).item()? as f64;
    if !value.is_finite() {
        return Ok(value);
    }
    graph.backward(loss)?;
    let grads: Vec<Vec<f32>> = fwd
        .params
        .iter()
        .map(|&p| match graph.grad(p) {
            Some(g) => g.to_vec(),
            None => vec![0.0; graph.value(p).numel()],
        })
        .collect();
    drop(graph);

    model.update_running_stats(&fwd.batch_stats);
    let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
    let mut params: Vec<&mut Tensor<f32>> = model.trainable_mut().into_iter().map(Arc::make_mut).collect();
    adam_step(&mut params, &grad_refs, adam, lr, &config.adam())?;
    Ok(value)
}

/// Validation triplets: references from val, candidates from val ∪ train,
/// mined once from a model freshly initialized with the config seed.
struct ValidationSet {
    val_pos: Vec<usize>,
    /// (reference, positive, negative) as indices into `val_pos ++ train_pos`.
    triplets: Vec<(usize, usize, usize)>,
}

impl ValidationSet {
    fn mine(
        dataset: &Dataset,
        model: &Model<f32>,
        train_pos: &[usize],
        val_pos: &[usize],
        config: &TrainConfig,
    ) -> Result<Option<Self>> {
        if val_pos.is_empty() {
            return Ok(None);
        }
        let all: Vec<usize> = val_pos.iter().chain(train_pos).copied().collect();
        let pool = pool_for(dataset, &all)?;
        let references: Vec<usize> = (0..val_pos.len())
            .filter(|&i| pool.class_members(pool.class_of(i)).len() >= 2)
            .collect();
        if references.is_empty() {
            return Ok(None);
        }
        let fresh = Model::build(model.config().clone(), config.seed)?;
        let embeddings = embed_positions(&fresh, dataset, &all, config.embed_batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mined = pool.mine(&embeddings, &references, references.len(), &mut rng)?;
        let index: HashMap<&str, usize> = (0..pool.len()).map(|i| (pool.id(i), i)).collect();
        let triplets = mined
            .iter()
            .map(|t| (index[t.reference_id.as_str()], index[t.positive_id.as_str()], index[t.negative_id.as_str()]))
            .collect();
        Ok(Some(Self {
            val_pos: val_pos.to_vec(),
            triplets,
        }))
    }

    fn loss(
        &self,
        model: &Model<f32>,
        dataset: &Dataset,
        train_embeddings: &[Vec<f32>],
        train_pos: &[usize],
        config: &TrainConfig,
    ) -> Result<f64> {
        debug_assert_eq!(train_embeddings.len(), train_pos.len());
        let val_embeddings = embed_positions(model, dataset, &self.val_pos, config.embed_batch)?;
        let e = |i: usize| {
            if i < val_embeddings.len() {
                &val_embeddings[i]
            } else {
                &train_embeddings[i - val_embeddings.len()]
            }
        };
        let total: f64 = self
            .triplets
            .iter()
            .map(|&(r, p, n)| triplet_hinge(squared_distance(e(r), e(p)), squared_distance(e(r), e(n)), config.margin))
            .sum();
        Ok(total / self.triplets.len() as f64)
    }
}
