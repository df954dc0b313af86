//! Network layers recorded on the autodiff tape.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Adjoint, Element, Function, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_height: usize,
    out_width: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Unrolls one image into a `[C·k·k, Ho·Wo]` patch matrix.
    fn im2col<T: Element>(&self, image: &[T], cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let pixels = self.out_pixels();
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut cols[((c * k + ki) * k + kj) * pixels..][..pixels];
                    for oy in 0..self.out_height {
                        let iy = (oy * s + ki) as isize - p as isize;
                        let dst = &mut row[oy * self.out_width..(oy + 1) * self.out_width];
                        if iy < 0 || iy >= self.height as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p as isize;
                            *d = if ix < 0 || ix >= self.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the image.
    fn col2im<T: Element>(&self, cols: &[T], image: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let pixels = self.out_pixels();
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &cols[((c * k + ki) * k + kj) * pixels..][..pixels];
                    for oy in 0..self.out_height {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let base = iy as usize * self.width;
                        for ox in 0..self.out_width {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix >= 0 && ix < self.width as isize {
                                let at = base + ix as usize;
                                plane[at] = plane[at] + row[oy * self.out_width + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2d {
    geo: ConvGeometry,
}

impl<T: Element> Function<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let geo = self.geo;
        let x = ctx.input(0).data();
        let w = ctx.input(1).data();
        let (ckk, pixels, cout) = (geo.patch_len(), geo.out_pixels(), geo.out_channels);
        let out_len = cout * pixels;
        let need_dx = ctx.needs_grad(0);
        let need_dw = ctx.needs_grad(1);

        let mut dx = vec![T::zero(); if need_dx { x.len() } else { 0 }];
        let per_image = |n: usize, dx_n: Option<&mut [T]>| -> Option<Vec<T>> {
            let g_n = &g[n * out_len..(n + 1) * out_len];
            let mut cols = vec![T::zero(); ckk * pixels];
            if let Some(dx_n) = dx_n {
                T::gemm(ckk, cout, pixels, w, (1, ckk), g_n, (pixels, 1), &mut cols, false);
                geo.col2im(&cols, dx_n);
            }
            need_dw.then(|| {
                geo.im2col(&x[n * geo.in_len()..(n + 1) * geo.in_len()], &mut cols);
                let mut dw = vec![T::zero(); cout * ckk];
                T::gemm(cout, pixels, ckk, g_n, (pixels, 1), &cols, (1, pixels), &mut dw, false);
                dw
            })
        };
        let partials: Vec<Option<Vec<T>>> = if need_dx {
            dx.par_chunks_mut(geo.in_len())
                .enumerate()
                .map(|(n, dx_n)| per_image(n, Some(dx_n)))
                .collect()
        } else {
            let batch = x.len() / geo.in_len();
            (0..batch).into_par_iter().map(|n| per_image(n, None)).collect()
        };

        // Summed in batch order so results do not depend on scheduling.
        let dw = need_dw.then(|| {
            let mut acc = vec![T::zero(); cout * ckk];
            for p in partials.iter().flatten() {
                acc.iter_mut().zip(p).for_each(|(a, &v)| *a = *a + v);
            }
            acc
        });
        let db = ctx.needs_grad(2).then(|| {
            let mut acc = vec![T::zero(); cout];
            for g_n in g.chunks(out_len) {
                for (co, a) in acc.iter_mut().enumerate() {
                    *a = *a + g_n[co * pixels..(co + 1) * pixels].iter().copied().sum();
                }
            }
            acc
        });
        vec![need_dx.then_some(dx), dw, db]
    }
}

/// Cross-correlation of `x: [N,C,H,W]` with `weight: [Cout,C,k,k]` plus
/// per-channel `bias`, zero padded. Output side is `⌊(H+2p−k)/s⌋+1`.
pub fn conv2d<T: Element>(
    graph: &mut Graph<T>,
    x: Var,
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let (xv, wv, bv) = (graph.value(x), graph.value(weight), graph.value(bias));
    if xv.rank() != 4 || wv.rank() != 4 || wv.shape()[2] != wv.shape()[3] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: xv.shape().to_vec(),
            right: wv.shape().to_vec(),
        });
    }
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let (cout, wc, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
    if wc != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d channels",
            left: xv.shape().to_vec(),
            right: wv.shape().to_vec(),
        });
    }
    if bv.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: wv.shape().to_vec(),
            right: bv.shape().to_vec(),
        });
    }
    if stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::invalid(format!(
            "conv2d: kernel {k} with stride {stride} does not fit {h}x{w} padded by {padding}"
        )));
    }
    let geo = ConvGeometry {
        channels: c,
        height: h,
        width: w,
        out_channels: cout,
        kernel: k,
        stride,
        padding,
        out_height: (h + 2 * padding - k) / stride + 1,
        out_width: (w + 2 * padding - k) / stride + 1,
    };
    let (ckk, pixels) = (geo.patch_len(), geo.out_pixels());
    let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
    let mut out = vec![T::zero(); n * cout * pixels];
    out.par_chunks_mut(cout * pixels)
        .enumerate()
        .for_each(|(i, out_n)| {
            let mut cols = vec![T::zero(); ckk * pixels];
            geo.im2col(&xd[i * geo.in_len()..(i + 1) * geo.in_len()], &mut cols);
            T::gemm(cout, ckk, pixels, wd, (ckk, 1), &cols, (pixels, 1), out_n, false);
            for (co, plane) in out_n.chunks_mut(pixels).enumerate() {
                plane.iter_mut().for_each(|v| *v = *v + bd[co]);
            }
        });
    let value = Tensor::new(vec![n, cout, geo.out_height, geo.out_width], out)?;
    Ok(graph.record(value, &[x, weight, bias], Conv2d { geo }))
}

struct MaxPool2d {
    argmax: Vec<usize>,
}

impl<T: Element> Function<T> for MaxPool2d {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); ctx.input(0).numel()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            dx[src] = dx[src] + gv;
        }
        vec![Some(dx)]
    }
}

/// Per-window maximum over `[N,C,H,W]`. Ties go to the first element of the
/// window in row-major order.
pub fn maxpool2d<T: Element>(graph: &mut Graph<T>, x: Var, window: usize, stride: usize) -> Result<Var> {
    let xv = graph.value(x);
    if xv.rank() != 4 {
        return Err(Error::invalid(format!("maxpool2d expects rank 4, got {:?}", xv.shape())));
    }
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    if window == 0 || stride == 0 || h < window || w < window {
        return Err(Error::invalid(format!(
            "maxpool2d: window {window} does not fit {h}x{w}"
        )));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let xd = xv.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let at = base + (oy * stride + dy) * w + ox * stride + dx;
                        if xd[at] > xd[best] {
                            best = at;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let value = Tensor::new(vec![n, c, oh, ow], out)?;
    Ok(graph.record(value, &[x], MaxPool2d { argmax }))
}

/// Per-channel batch statistics from a train-mode batch-norm pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as folded into the running estimate.
    pub var: Vec<T>,
}

struct BatchNorm<T> {
    channels: usize,
    plane: usize,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Element> Function<T> for BatchNorm<T> {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let gamma = ctx.input(1).data();
        let (c_n, plane) = (self.channels, self.plane);
        let batch = g.len() / (c_n * plane);
        let count = T::from_usize(batch * plane).unwrap();
        let mut dgamma = vec![T::zero(); c_n];
        let mut dbeta = vec![T::zero(); c_n];
        for n in 0..batch {
            for c in 0..c_n {
                let at = (n * c_n + c) * plane;
                for i in at..at + plane {
                    dgamma[c] = dgamma[c] + g[i] * self.x_hat[i];
                    dbeta[c] = dbeta[c] + g[i];
                }
            }
        }
        let dx = ctx.needs_grad(0).then(|| {
            let mut dx = vec![T::zero(); g.len()];
            for n in 0..batch {
                for c in 0..c_n {
                    let at = (n * c_n + c) * plane;
                    let scale = gamma[c] * self.inv_std[c];
                    for i in at..at + plane {
                        dx[i] = if self.train {
                            // dβ = Σdy and dγ = Σdy·x̂ are exactly the batch sums
                            // the normalization adjoint needs.
                            scale * (g[i] - (dbeta[c] + self.x_hat[i] * dgamma[c]) / count)
                        } else {
                            scale * g[i]
                        };
                    }
                }
            }
            dx
        });
        vec![dx, Some(dgamma), Some(dbeta)]
    }
}

/// Batch normalization over `[N,C,H,W]`. Train mode normalizes with the
/// batch's biased variance and also returns the batch statistics; eval mode
/// uses the supplied running estimates.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<T: Element>(
    graph: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &[T],
    running_var: &[T],
    mode: Mode,
    eps: f64,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let xv = graph.value(x);
    if xv.rank() != 4 {
        return Err(Error::invalid(format!("batchnorm2d expects rank 4, got {:?}", xv.shape())));
    }
    let (n, c_n) = (xv.shape()[0], xv.shape()[1]);
    let plane = xv.shape()[2] * xv.shape()[3];
    for (what, v) in [("gamma", gamma), ("beta", beta)] {
        if graph.value(v).shape() != [c_n] {
            return Err(Error::ShapeMismatch {
                op: if what == "gamma" { "batchnorm2d gamma" } else { "batchnorm2d beta" },
                left: xv.shape().to_vec(),
                right: graph.value(v).shape().to_vec(),
            });
        }
    }
    if running_mean.len() != c_n || running_var.len() != c_n {
        return Err(Error::invalid("batchnorm2d: running statistics length mismatch"));
    }
    let count = n * plane;
    if mode == Mode::Train && count < 2 {
        return Err(Error::invalid(
            "batchnorm2d in train mode needs at least two values per channel",
        ));
    }
    let xd = xv.data();
    let eps_t = T::from_f64(eps).unwrap();
    let count_t = T::from_usize(count).unwrap();

    let (mean, var_biased, stats) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); c_n];
            let mut var = vec![T::zero(); c_n];
            for s in 0..n {
                for c in 0..c_n {
                    let at = (s * c_n + c) * plane;
                    mean[c] = mean[c] + xd[at..at + plane].iter().copied().sum();
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / count_t);
            for s in 0..n {
                for c in 0..c_n {
                    let at = (s * c_n + c) * plane;
                    let sq: T = xd[at..at + plane].iter().map(|&v| (v - mean[c]) * (v - mean[c])).sum();
                    var[c] = var[c] + sq;
                }
            }
            let unbiased = T::from_usize(count - 1).unwrap();
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.iter().map(|&v| v / unbiased).collect(),
            };
            var.iter_mut().for_each(|v| *v = *v / count_t);
            (mean, var, Some(stats))
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
    };
    let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let (gd, bd) = (graph.value(gamma).data(), graph.value(beta).data());
    let mut x_hat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for s in 0..n {
        for c in 0..c_n {
            let at = (s * c_n + c) * plane;
            for i in at..at + plane {
                x_hat[i] = (xd[i] - mean[c]) * inv_std[c];
                out[i] = gd[c] * x_hat[i] + bd[c];
            }
        }
    }
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    let var = graph.record(
        value,
        &[x, gamma, beta],
        BatchNorm {
            channels: c_n,
            plane,
            x_hat,
            inv_std,
            train: mode == Mode::Train,
        },
    );
    Ok((var, stats))
}

struct Linear {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
}

impl<T: Element> Function<T> for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, i, o) = (self.rows, self.fan_in, self.fan_out);
        let x = ctx.input(0).data();
        let w = ctx.input(1).data();
        let dx = ctx.needs_grad(0).then(|| {
            let mut dx = vec![T::zero(); n * i];
            T::gemm(n, o, i, g, (o, 1), w, (1, o), &mut dx, false);
            dx
        });
        let dw = ctx.needs_grad(1).then(|| {
            let mut dw = vec![T::zero(); i * o];
            T::gemm(i, n, o, x, (1, i), g, (o, 1), &mut dw, false);
            dw
        });
        let db = ctx.needs_grad(2).then(|| {
            let mut db = vec![T::zero(); o];
            for row in g.chunks(o) {
                db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
            }
            db
        });
        vec![dx, dw, db]
    }
}

/// `x·W + b` for `x: [N,in]`, `W: [in,out]`, `b: [out]`.
pub fn linear<T: Element>(graph: &mut Graph<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let (xv, wv, bv) = (graph.value(x), graph.value(weight), graph.value(bias));
    if xv.rank() != 2 || wv.rank() != 2 || xv.shape()[1] != wv.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            left: xv.shape().to_vec(),
            right: wv.shape().to_vec(),
        });
    }
    let (n, i, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
    if bv.shape() != [o] {
        return Err(Error::ShapeMismatch {
            op: "linear bias",
            left: wv.shape().to_vec(),
            right: bv.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); n * o];
    for row in out.chunks_mut(o) {
        row.copy_from_slice(bv.data());
    }
    T::gemm(n, i, o, xv.data(), (i, 1), wv.data(), (o, 1), &mut out, true);
    let value = Tensor::new(vec![n, o], out)?;
    Ok(graph.record(
        value,
        &[x, weight, bias],
        Linear {
            rows: n,
            fan_in: i,
            fan_out: o,
        },
    ))
}

struct Dropout<T> {
    mask: Vec<T>,
}

impl<T: Element> Function<T> for Dropout<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().zip(&self.mask).map(|(&g, &m)| g * m).collect())]
    }
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1−rate)`. Eval mode and `rate == 0`
/// return `x` unchanged.
pub fn dropout<T: Element>(
    graph: &mut Graph<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let rng = rng.ok_or_else(|| Error::invalid("train-mode dropout needs an rng"))?;
    let keep = T::from_f64(1.0 / (1.0 - rate)).unwrap();
    let xv = graph.value(x);
    let mask: Vec<T> = (0..xv.numel())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(graph.record(value, &[x], Dropout { mask }))
}

struct L2Normalize<T> {
    norms: Vec<T>,
}

impl<T: Element> Function<T> for L2Normalize<T> {
    fn name(&self) -> &'static str {
        "l2_normalize"
    }

    fn backward(&self, ctx: &Adjoint<'_, T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let y = ctx.output().data();
        let d = y.len() / self.norms.len();
        let mut dx = vec![T::zero(); y.len()];
        for (r, &norm) in self.norms.iter().enumerate() {
            let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            for j in 0..d {
                dx[r * d + j] = (gr[j] - yr[j] * dot) / norm;
            }
        }
        vec![Some(dx)]
    }
}

/// Scales each row of `[N,d]` to unit Euclidean norm.
pub fn l2_normalize_rows<T: Element>(graph: &mut Graph<T>, x: Var) -> Result<Var> {
    let xv = graph.value(x);
    if xv.rank() != 2 {
        return Err(Error::invalid(format!("l2_normalize_rows expects rank 2, got {:?}", xv.shape())));
    }
    let d = xv.shape()[1];
    let floor = T::from_f64(1e-12).unwrap();
    let norms: Vec<T> = xv
        .data()
        .chunks(d)
        .map(|r| r.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor))
        .collect();
    let out = xv
        .data()
        .chunks(d)
        .zip(&norms)
        .flat_map(|(r, &n)| r.iter().map(move |&v| v / n))
        .collect();
    let value = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(graph.record(value, &[x], L2Normalize { norms }))
}
