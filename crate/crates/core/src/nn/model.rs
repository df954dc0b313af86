use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, BatchStats, Mode};
use crate::error::{Error, Result};
use crate::tensor::{ops, Element, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvBlockConfig {
    pub fn same3x3(out_channels: usize) -> Self {
        Self {
            out_channels,
            kernel_size: 3,
            stride: 1,
            padding: 1,
        }
    }
}

fn default_bn_momentum() -> f64 {
    0.1
}

fn default_bn_epsilon() -> f64 {
    1e-5
}

fn default_pool() -> usize {
    2
}

/// Architecture hyperparameters. Each conv block is conv → batch-norm →
/// (ReLU) → max-pool; the flattened features feed `fc_sizes` hidden layers
/// and a final `embedding_dim` layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub conv_blocks: Vec<ConvBlockConfig>,
    pub fc_sizes: Vec<usize>,
    pub embedding_dim: usize,
    pub dropout_rate: f64,
    pub use_relu: bool,
    #[serde(default)]
    pub l2_normalize_embedding: bool,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_epsilon")]
    pub bn_epsilon: f64,
}

impl Default for ModelConfig {
    /// Full-size network: 180 px input, four conv blocks, FC 4096 → 1024 → 256.
    fn default() -> Self {
        Self {
            input_size: 180,
            conv_blocks: [32, 64, 128, 128].map(ConvBlockConfig::same3x3).to_vec(),
            fc_sizes: vec![4096, 1024],
            embedding_dim: 256,
            dropout_rate: 0.3,
            use_relu: true,
            l2_normalize_embedding: false,
            pool_size: default_pool(),
            bn_momentum: default_bn_momentum(),
            bn_epsilon: default_bn_epsilon(),
        }
    }
}

impl ModelConfig {
    /// Same topology scaled for 64 px icons on a CPU.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            conv_blocks: [16, 32, 64, 64].map(ConvBlockConfig::same3x3).to_vec(),
            fc_sizes: vec![512, 128],
            embedding_dim: 32,
            ..Self::default()
        }
    }

    /// Checks the invariants and returns `(channels, side)` after the last block.
    pub fn feature_shape(&self) -> Result<(usize, usize)> {
        if self.embedding_dim == 0 {
            return Err(Error::InvalidConfig("embedding_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate {} outside [0,1)",
                self.dropout_rate
            )));
        }
        if self.conv_blocks.is_empty() {
            return Err(Error::InvalidConfig("conv_blocks must be non-empty".into()));
        }
        if self.pool_size == 0 || self.input_size == 0 || self.fc_sizes.contains(&0) {
            return Err(Error::InvalidConfig("sizes must be positive".into()));
        }
        let mut side = self.input_size;
        let mut channels = 1;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel_size == 0 || b.stride == 0 {
                return Err(Error::InvalidConfig(format!("conv block {i} has a zero size")));
            }
            if side + 2 * b.padding < b.kernel_size {
                return Err(Error::InvalidConfig(format!(
                    "spatial size collapses below 1 at conv block {i}"
                )));
            }
            side = (side + 2 * b.padding - b.kernel_size) / b.stride + 1;
            if side < self.pool_size {
                return Err(Error::InvalidConfig(format!(
                    "spatial size collapses below 1 at pool {i}"
                )));
            }
            side = (side - self.pool_size) / self.pool_size + 1;
            channels = b.out_channels;
        }
        Ok((channels, side))
    }

    /// Widths of the dense stack, input features first.
    pub fn dense_widths(&self) -> Result<Vec<usize>> {
        let (c, s) = self.feature_shape()?;
        let mut widths = vec![c * s * s];
        widths.extend(&self.fc_sizes);
        widths.push(self.embedding_dim);
        Ok(widths)
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> Result<usize> {
        let mut count = 0;
        let mut cin = 1;
        for b in &self.conv_blocks {
            count += b.out_channels * cin * b.kernel_size * b.kernel_size + b.out_channels;
            count += 2 * b.out_channels;
            cin = b.out_channels;
        }
        let widths = self.dense_widths()?;
        for w in widths.windows(2) {
            count += w[0] * w[1] + w[1];
        }
        Ok(count)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Element> {
    pub weight: Arc<Tensor<T>>,
    pub bias: Arc<Tensor<T>>,
    pub gamma: Arc<Tensor<T>>,
    pub beta: Arc<Tensor<T>>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T: Element> {
    /// `[in, out]`
    pub weight: Arc<Tensor<T>>,
    pub bias: Arc<Tensor<T>>,
}

/// The embedding network `f(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element = f32> {
    config: ModelConfig,
    pub conv: Vec<ConvLayer<T>>,
    pub dense: Vec<DenseLayer<T>>,
}

/// Result of a forward pass recorded on a graph.
pub struct Forward<T> {
    pub embedding: Var,
    /// Trainable parameters in [`Model::trainable_names`] order.
    pub params: Vec<Var>,
    /// Batch statistics per conv block (train mode only).
    pub batch_stats: Vec<BatchStats<T>>,
}

fn xavier<T: Element>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Arc<Tensor<T>> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Arc::new(Tensor::from_fn(shape, |_| {
        T::from_f64(rng.random_range(-bound..bound)).unwrap()
    }))
}

impl<T: Element> Model<T> {
    /// Xavier-uniform weights, zero biases, γ = 1, β = 0, running stats (0, 1).
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let widths = config.dense_widths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::with_capacity(config.conv_blocks.len());
        let mut cin = 1;
        for b in &config.conv_blocks {
            let (co, k) = (b.out_channels, b.kernel_size);
            conv.push(ConvLayer {
                weight: xavier(&mut rng, vec![co, cin, k, k], cin * k * k, co * k * k),
                bias: Arc::new(Tensor::zeros(vec![co])),
                gamma: Arc::new(Tensor::full(vec![co], T::one())),
                beta: Arc::new(Tensor::zeros(vec![co])),
                running_mean: Tensor::zeros(vec![co]),
                running_var: Tensor::full(vec![co], T::one()),
            });
            cin = co;
        }
        let dense = widths
            .windows(2)
            .map(|w| DenseLayer {
                weight: xavier(&mut rng, vec![w[0], w[1]], w[0], w[1]),
                bias: Arc::new(Tensor::zeros(vec![w[1]])),
            })
            .collect();
        Ok(Self { config, conv, dense })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.conv.len() {
            for suffix in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                names.push(format!("block{i}.{suffix}"));
            }
        }
        for i in 0..self.dense.len() {
            names.push(format!("fc{i}.weight"));
            names.push(format!("fc{i}.bias"));
        }
        names
    }

    pub fn trainable(&self) -> Vec<&Arc<Tensor<T>>> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.extend([&c.weight, &c.bias, &c.gamma, &c.beta]);
        }
        for d in &self.dense {
            out.extend([&d.weight, &d.bias]);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Arc<Tensor<T>>> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.extend([&mut c.weight, &mut c.bias, &mut c.gamma, &mut c.beta]);
        }
        for d in &mut self.dense {
            out.extend([&mut d.weight, &mut d.bias]);
        }
        out
    }

    /// Every stored tensor (trainable plus running statistics) by unique name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self
            .trainable_names()
            .into_iter()
            .zip(self.trainable().into_iter().map(|a| &**a))
            .collect();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((format!("block{i}.bn.running_mean"), &c.running_mean));
            out.push((format!("block{i}.bn.running_var"), &c.running_var));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let names = self.trainable_names();
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        let mut names = names.into_iter();
        let mut stats = Vec::new();
        for (i, c) in self.conv.iter_mut().enumerate() {
            for t in [&mut c.weight, &mut c.bias, &mut c.gamma, &mut c.beta] {
                out.push((names.next().unwrap(), Arc::make_mut(t)));
            }
            stats.push((format!("block{i}.bn.running_mean"), &mut c.running_mean));
            stats.push((format!("block{i}.bn.running_var"), &mut c.running_var));
        }
        for d in &mut self.dense {
            for t in [&mut d.weight, &mut d.bias] {
                out.push((names.next().unwrap(), Arc::make_mut(t)));
            }
        }
        out.extend(stats);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.numel()).sum()
    }

    /// Records the network on `graph`. `input` must be `[N,1,S,S]` with
    /// `S == input_size`. Parameters are registered as gradient-receiving
    /// leaves when `trainable` is set, otherwise as constants.
    pub fn forward(
        &self,
        graph: &mut Graph<T>,
        input: Var,
        mode: Mode,
        mut rng: Option<&mut dyn RngCore>,
        trainable: bool,
    ) -> Result<Forward<T>> {
        let shape = graph.value(input).shape().to_vec();
        let s = self.config.input_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != s || shape[3] != s {
            return Err(Error::ShapeMismatch {
                op: "embed input",
                left: shape,
                right: vec![0, 1, s, s],
            });
        }
        let batch = shape[0];
        let reg = |g: &mut Graph<T>, t: &Arc<Tensor<T>>| {
            if trainable {
                g.param(Arc::clone(t))
            } else {
                g.constant(Arc::clone(t))
            }
        };
        let mut params = Vec::new();
        let mut batch_stats = Vec::new();
        let mut h = input;
        for (layer, block) in self.conv.iter().zip(&self.config.conv_blocks) {
            let w = reg(graph, &layer.weight);
            let b = reg(graph, &layer.bias);
            let gamma = reg(graph, &layer.gamma);
            let beta = reg(graph, &layer.beta);
            params.extend([w, b, gamma, beta]);
            h = layers::conv2d(graph, h, w, b, block.stride, block.padding)?;
            let (y, stats) = layers::batchnorm2d(
                graph,
                h,
                gamma,
                beta,
                layer.running_mean.data(),
                layer.running_var.data(),
                mode,
                self.config.bn_epsilon,
            )?;
            batch_stats.extend(stats);
            h = y;
            if self.config.use_relu {
                h = ops::relu(graph, h)?;
            }
            h = layers::maxpool2d(graph, h, self.config.pool_size, self.config.pool_size)?;
        }
        let features = graph.value(h).numel() / batch;
        h = ops::reshape(graph, h, &[batch, features])?;
        let last = self.dense.len() - 1;
        for (i, layer) in self.dense.iter().enumerate() {
            let w = reg(graph, &layer.weight);
            let b = reg(graph, &layer.bias);
            params.extend([w, b]);
            h = layers::linear(graph, h, w, b)?;
            if i < last {
                if self.config.use_relu {
                    h = ops::relu(graph, h)?;
                }
                h = layers::dropout(
                    graph,
                    h,
                    self.config.dropout_rate,
                    mode,
                    rng.as_mut().map(|r| &mut **r as &mut dyn RngCore),
                )?;
            }
        }
        if self.config.l2_normalize_embedding {
            h = layers::l2_normalize_rows(graph, h)?;
        }
        Ok(Forward {
            embedding: h,
            params,
            batch_stats,
        })
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) {
        let m = T::from_f64(self.config.bn_momentum).unwrap();
        let keep = T::one() - m;
        for (layer, s) in self.conv.iter_mut().zip(stats) {
            for (r, &b) in layer.running_mean.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in layer.running_var.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * b;
            }
        }
    }

    /// Eval-mode embedding of a `[N,1,S,S]` batch; a pure function of the
    /// parameters and the input.
    pub fn embed(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let input = graph.constant(batch.clone());
        let fwd = self.forward(&mut graph, input, Mode::Eval, None, false)?;
        Ok(graph.value(fwd.embedding).clone())
    }

    /// Embeds `[1,S,S]` images in chunks of `chunk`, returning one vector each.
    pub fn embed_images(&self, images: &[&Tensor<T>], chunk: usize) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(images.len());
        for group in images.chunks(chunk.max(1)) {
            let stacked: Vec<Tensor<T>> = group.iter().map(|t| t.unsqueeze0()).collect();
            let refs: Vec<&Tensor<T>> = stacked.iter().collect();
            let batch = Tensor::stack_rows(&refs)?;
            let emb = self.embed(&batch)?;
            let d = self.config.embedding_dim;
            out.extend(emb.data().chunks(d).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        let c = |t: &Arc<Tensor<T>>| Arc::new(t.cast::<U>());
        Model {
            config: self.config.clone(),
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayer {
                    weight: c(&l.weight),
                    bias: c(&l.bias),
                    gamma: c(&l.gamma),
                    beta: c(&l.beta),
                    running_mean: l.running_mean.cast(),
                    running_var: l.running_var.cast(),
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|l| DenseLayer {
                    weight: c(&l.weight),
                    bias: c(&l.bias),
                })
                .collect(),
        }
    }

    /// Reassembles a model from a config and named tensors (checkpoint load).
    pub(crate) fn from_named(config: ModelConfig, mut tensors: std::collections::HashMap<String, Tensor<T>>) -> Result<Self> {
        let mut model = Self::build(config, 0)?;
        for (name, slot) in model.named_tensors_mut() {
            let t = tensors.remove(&name).ok_or_else(|| Error::Malformed {
                what: "checkpoint",
                detail: format!("missing tensor {name}"),
            })?;
            if t.shape() != slot.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint tensor",
                    left: slot.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(model)
    }
}
