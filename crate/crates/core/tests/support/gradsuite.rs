//! Analytic vs central finite-difference gradients, 64-bit.
//!
//! Each case reduces its output to a scalar through a fixed random
//! projection, so shift-invariant layers (batch-norm) still get a
//! non-trivial input gradient.

#![allow(dead_code)]

use std::sync::Arc;

use iconsim_core::nn::{batchnorm2d, conv2d, linear, maxpool2d, ConvBlockConfig, Mode, Model, ModelConfig};
use iconsim_core::tensor::{finite_difference_grad, max_relative_error, ops, Graph, Tensor, Var};
use iconsim_core::training::triplet_loss;
use iconsim_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
/// Denominator floor for the relative error.
pub const FLOOR: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
pub const TOL_COMPOSED: f64 = 1e-3;
pub const INSTANCES: usize = 20;

pub struct CaseResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Draws rejected because a kink fell inside the difference stencil.
    pub skipped: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES && self.max_rel_err < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, for kinks at the origin.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Distinct values at least 0.01 apart, in random order.
fn tie_free(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape.to_vec(), |i| order[i] as f64 * 0.05 + rng.random_range(0.0..0.01) - 1.0)
}

type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'a;

fn projected(inputs: &[Tensor<f64>], projection: &Tensor<f64>, build: &Build<'_>, grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), grads)).collect();
    let out = build(&mut g, &vars)?;
    let r = g.constant(projection.clone());
    let prod = ops::mul(&mut g, out, r)?;
    let loss = ops::sum(&mut g, prod, None)?;
    let value = g.value(loss).item()?;
    if !grads {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    Ok((value, grads))
}

/// Max relative error over every input of one instance.
pub fn check_instance(inputs: &[Tensor<f64>], out_shape: &[usize], seed: u64, build: &Build<'_>) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let projection = uniform(&mut rng, out_shape, -1.0, 1.0);
    let (_, analytic) = projected(inputs, &projection, build, true)?;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let numeric = finite_difference_grad(
            |probe| {
                let mut probed = inputs.to_vec();
                probed[i] = probe.clone();
                Ok(projected(&probed, &projection, build, false)?.0)
            },
            &inputs[i],
            STEP,
        )?;
        worst = worst.max(max_relative_error(a, numeric.data(), FLOOR));
    }
    Ok(worst)
}

fn run_case(
    name: &'static str,
    tolerance: f64,
    seed: u64,
    mut instance: impl FnMut(&mut ChaCha8Rng, u64) -> Result<f64>,
) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_err: f64 = 0.0;
    for k in 0..INSTANCES {
        max_rel_err = max_rel_err.max(instance(&mut rng, seed.wrapping_add(k as u64))?);
    }
    Ok(CaseResult {
        name,
        instances: INSTANCES,
        max_rel_err,
        tolerance,
        skipped: 0,
    })
}

pub fn conv_case(seed: u64) -> Result<CaseResult> {
    run_case("conv2d", TOL, seed, |rng, k| {
        let (stride, padding) = [(1, 1), (1, 0), (2, 1), (2, 0)][rng.random_range(0..4)];
        let cin = rng.random_range(1..=2);
        let cout = rng.random_range(1..=3);
        let x = uniform(rng, &[1, cin, 5, 5], -1.0, 1.0);
        let w = uniform(rng, &[cout, cin, 3, 3], -1.0, 1.0);
        let b = uniform(rng, &[cout], -1.0, 1.0);
        let side = (5 + 2 * padding - 3) / stride + 1;
        check_instance(&[x, w, b], &[1, cout, side, side], k, &|g, v| conv2d(g, v[0], v[1], v[2], stride, padding))
    })
}

pub fn batchnorm_case(seed: u64) -> Result<CaseResult> {
    run_case("batchnorm2d (train)", TOL_COMPOSED, seed, |rng, k| {
        let x = uniform(rng, &[4, 3, 2, 2], -2.0, 2.0);
        let gamma = uniform(rng, &[3], 0.5, 1.5);
        let beta = uniform(rng, &[3], -0.5, 0.5);
        let (mean, var) = ([0.0; 3], [1.0; 3]);
        check_instance(&[x, gamma, beta], &[4, 3, 2, 2], k, &|g, v| {
            Ok(batchnorm2d(g, v[0], v[1], v[2], &mean, &var, Mode::Train, 1e-5)?.0)
        })
    })
}

pub fn maxpool_case(seed: u64) -> Result<CaseResult> {
    run_case("maxpool2d", TOL, seed, |rng, k| {
        let x = tie_free(rng, &[1, 1, 6, 6]);
        check_instance(&[x], &[1, 1, 3, 3], k, &|g, v| maxpool2d(g, v[0], 2, 2))
    })
}

pub fn linear_case(seed: u64) -> Result<CaseResult> {
    run_case("linear", TOL, seed, |rng, k| {
        let (n, i, o) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=4));
        let x = uniform(rng, &[n, i], -1.0, 1.0);
        let w = uniform(rng, &[i, o], -1.0, 1.0);
        let b = uniform(rng, &[o], -1.0, 1.0);
        check_instance(&[x, w, b], &[n, o], k, &|g, v| linear(g, v[0], v[1], v[2]))
    })
}

pub fn relu_case(seed: u64) -> Result<CaseResult> {
    run_case("relu", TOL, seed, |rng, k| {
        let x = off_zero(rng, &[3, 7]);
        check_instance(&[x], &[3, 7], k, &|g, v| ops::relu(g, v[0]))
    })
}

/// A two-block network small enough to difference every parameter.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        input_size: 8,
        conv_blocks: vec![ConvBlockConfig::same3x3(2), ConvBlockConfig::same3x3(3)],
        fc_sizes: vec![5],
        embedding_dim: 3,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    }
}

fn network_loss(model: &Model<f64>, images: &Tensor<f64>, margin: f64, grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let input = g.constant(images.clone());
    let fwd = model.forward(&mut g, input, Mode::Train, None, grads)?;
    let m = images.shape()[0] / 3;
    let fr = ops::slice_rows(&mut g, fwd.embedding, 0, m)?;
    let fp = ops::slice_rows(&mut g, fwd.embedding, m, m)?;
    let fneg = ops::slice_rows(&mut g, fwd.embedding, 2 * m, m)?;
    let loss = triplet_loss(&mut g, fr, fp, fneg, margin)?;
    let value = g.value(loss).item()?;
    if !grads {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let out = fwd
        .params
        .iter()
        .map(|&p| g.grad(p).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(p).numel()]))
        .collect();
    Ok((value, out))
}

/// Kink test: one-sided slopes disagreeing by more than this (relative)
/// means a ReLU or pooling switch lies within ±h of the point.
pub const KINK: f64 = 1e-2;
const MAX_DRAWS: usize = 3 * INSTANCES;

/// Triplet loss through a train-mode forward pass, differentiated with
/// respect to every trainable parameter. Draws whose stencil straddles a
/// non-differentiable point are replaced by fresh ones.
pub fn end_to_end_case(seed: u64) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 10.0; // keeps every hinge active
    let (mut done, mut skipped, mut worst) = (0, 0, 0.0f64);
    for draw in 0..MAX_DRAWS {
        if done == INSTANCES {
            break;
        }
        let model: Model<f64> = Model::build(toy_config(), seed.wrapping_add(draw as u64))?;
        let images = uniform(&mut rng, &[6, 1, 8, 8], 0.0, 1.0);
        let (center, analytic) = network_loss(&model, &images, margin, true)?;
        let mut err: f64 = 0.0;
        let mut kinked = false;
        'params: for (p, a) in analytic.iter().enumerate() {
            let mut m = model.clone();
            let mut numeric = Vec::with_capacity(a.len());
            for i in 0..a.len() {
                let mut eval = |delta: f64| -> Result<f64> {
                    Arc::make_mut(m.trainable_mut()[p]).data_mut()[i] += delta;
                    let v = network_loss(&m, &images, margin, false)?.0;
                    Arc::make_mut(m.trainable_mut()[p]).data_mut()[i] -= delta;
                    Ok(v)
                };
                let (up, down) = (eval(STEP)?, eval(-STEP)?);
                let (right, left) = ((up - center) / STEP, (center - down) / STEP);
                if (right - left).abs() > KINK * right.abs().max(left.abs()).max(1.0) {
                    kinked = true;
                    break 'params;
                }
                numeric.push((up - down) / (2.0 * STEP));
            }
            err = err.max(max_relative_error(a, &numeric, FLOOR));
        }
        if kinked {
            skipped += 1;
            continue;
        }
        worst = worst.max(err);
        done += 1;
    }
    Ok(CaseResult {
        name: "triplet loss through network",
        instances: done,
        max_rel_err: worst,
        tolerance: TOL_COMPOSED,
        skipped,
    })
}

pub fn all_cases(seed: u64) -> Result<Vec<CaseResult>> {
    Ok(vec![
        conv_case(seed)?,
        batchnorm_case(seed + 1)?,
        maxpool_case(seed + 2)?,
        linear_case(seed + 3)?,
        relu_case(seed + 4)?,
        end_to_end_case(seed + 5)?,
    ])
}
