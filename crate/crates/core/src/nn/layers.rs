// SPDX-License-Identifier: Apache-2.0

//! Layer kernels with hand-written backward passes.
//!
//! Work is split into fixed-size sample chunks processed in parallel;
//! parameter gradients are reduced chunk by chunk in index order, so results
//! do not depend on the number of worker threads.

use rand::Rng;
use rayon::prelude::*;

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Samples per parallel work item. Fixed so reductions are reproducible.
pub const CHUNK: usize = 8;

/// Stride-1 convolution with zero ("same") padding.
///
/// Weights are laid out `(ky, kx, c_in)` by `c_out`, i.e. a
/// `kh*kw*c_in x c_out` matrix multiplied against im2col patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Self {
        Conv2d {
            kh,
            kw,
            c_in,
            c_out,
            weight: vec![0.0; kh * kw * c_in * c_out],
            bias: vec![0.0; c_out],
        }
    }

    /// He-uniform weights from `rng`, zero bias.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let bound = (6.0 / self.patch_len() as f64).sqrt();
        for w in &mut self.weight {
            *w = rng.gen_range(-bound..bound);
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.c_in {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {} (input {:?})",
                self.c_in,
                x.c(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Writes im2col patches for `count` samples starting at `x_chunk`.
    fn im2col(&self, x_chunk: &[f64], count: usize, h: usize, w: usize, cols: &mut [f64]) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let cin = self.c_in;
        let k = self.patch_len();
        for s in 0..count {
            let xs = &x_chunk[s * h * w * cin..(s + 1) * h * w * cin];
            for oy in 0..h {
                for ox in 0..w {
                    let row = &mut cols[((s * h + oy) * w + ox) * k..][..k];
                    for ky in 0..self.kh {
                        let iy = oy as isize + ky as isize - ph as isize;
                        for kx in 0..self.kw {
                            let ix = ox as isize + kx as isize - pw as isize;
                            let dst = &mut row[(ky * self.kw + kx) * cin..][..cin];
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                dst.fill(0.0);
                            } else {
                                let src = ((iy as usize) * w + ix as usize) * cin;
                                dst.copy_from_slice(&xs[src..src + cin]);
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], count: usize, h: usize, w: usize, dx_chunk: &mut [f64]) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let cin = self.c_in;
        let k = self.patch_len();
        dx_chunk.fill(0.0);
        for s in 0..count {
            let dxs = &mut dx_chunk[s * h * w * cin..(s + 1) * h * w * cin];
            for oy in 0..h {
                for ox in 0..w {
                    let row = &cols[((s * h + oy) * w + ox) * k..][..k];
                    for ky in 0..self.kh {
                        let iy = oy as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = ox as isize + kx as isize - pw as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = &row[(ky * self.kw + kx) * cin..][..cin];
                            let dst = ((iy as usize) * w + ix as usize) * cin;
                            for (d, s) in dxs[dst..dst + cin].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let [n, h, w, _] = x.shape();
        let mut y = Tensor::zeros([n, h, w, self.c_out]);
        let k = self.patch_len();
        let in_len = h * w * self.c_in;
        let out_len = h * w * self.c_out;
        y.data_mut()
            .par_chunks_mut(CHUNK * out_len)
            .zip(x.data().par_chunks(CHUNK * in_len))
            .for_each(|(yc, xc)| {
                let count = xc.len() / in_len;
                let rows = count * h * w;
                let mut cols = vec![0.0; rows * k];
                self.im2col(xc, count, h, w, &mut cols);
                for r in yc.chunks_exact_mut(self.c_out) {
                    r.copy_from_slice(&self.bias);
                }
                gemm(rows, k, self.c_out, &cols, false, &self.weight, false, yc, 1.0);
            });
        Ok(y)
    }

    /// Gradients w.r.t. the input (when `need_dx`), weights and bias.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Conv2dGrads)> {
        self.check(x)?;
        let [n, h, w, _] = x.shape();
        if dy.shape() != [n, h, w, self.c_out] {
            return Err(Error::Shape(format!(
                "conv upstream gradient {:?} does not match output [{n}, {h}, {w}, {}]",
                dy.shape(),
                self.c_out
            )));
        }
        let k = self.patch_len();
        let in_len = h * w * self.c_in;
        let out_len = h * w * self.c_out;
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));

        let work = |xc: &[f64], dyc: &[f64], dxc: Option<&mut [f64]>| -> (Vec<f64>, Vec<f64>) {
            let count = xc.len() / in_len;
            let rows = count * h * w;
            let mut cols = vec![0.0; rows * k];
            self.im2col(xc, count, h, w, &mut cols);
            let mut dw = vec![0.0; k * self.c_out];
            gemm(k, rows, self.c_out, &cols, true, dyc, false, &mut dw, 0.0);
            let mut db = vec![0.0; self.c_out];
            for r in dyc.chunks_exact(self.c_out) {
                for (b, v) in db.iter_mut().zip(r) {
                    *b += v;
                }
            }
            if let Some(dxc) = dxc {
                gemm(rows, self.c_out, k, dyc, false, &self.weight, true, &mut cols, 0.0);
                self.col2im(&cols, count, h, w, dxc);
            }
            (dw, db)
        };

        let partials: Vec<(Vec<f64>, Vec<f64>)> = match dx.as_mut() {
            Some(dx) => dx
                .data_mut()
                .par_chunks_mut(CHUNK * in_len)
                .zip(x.data().par_chunks(CHUNK * in_len))
                .zip(dy.data().par_chunks(CHUNK * out_len))
                .map(|((dxc, xc), dyc)| work(xc, dyc, Some(dxc)))
                .collect(),
            None => x
                .data()
                .par_chunks(CHUNK * in_len)
                .zip(dy.data().par_chunks(CHUNK * out_len))
                .map(|(xc, dyc)| work(xc, dyc, None))
                .collect(),
        };
        let mut grads = Conv2dGrads {
            weight: vec![0.0; k * self.c_out],
            bias: vec![0.0; self.c_out],
        };
        for (dw, db) in partials {
            add_into(&mut grads.weight, &dw);
            add_into(&mut grads.bias, &db);
        }
        Ok((dx, grads))
    }
}

pub(crate) fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Per-channel batch normalization over `(n, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch: bool,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got input {:?}",
                self.channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Per-channel mean and biased variance of `x`.
    pub fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let c = x.c();
        let m = (x.len() / c.max(1)) as f64;
        let mut mean = vec![0.0; c];
        for r in x.data().chunks_exact(c) {
            add_into(&mut mean, r);
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0; c];
        for r in x.data().chunks_exact(c) {
            for ((v, &xi), &mu) in var.iter_mut().zip(r).zip(&mean) {
                let d = xi - mu;
                *v += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        (mean, var)
    }

    /// Normalizes with batch statistics. When `update` is set the running
    /// statistics move toward the batch ones. The biased variance is tracked
    /// so a network evaluated on its own training batch sees the same
    /// normalization in both modes.
    pub fn forward_train(&mut self, x: &Tensor, update: bool) -> Result<(Tensor, BatchNormCache)> {
        self.check(x)?;
        let c = self.channels();
        let (mean, var) = Self::batch_stats(x);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        if update {
            for i in 0..c {
                self.running_mean[i] = (1.0 - self.momentum) * self.running_mean[i] + self.momentum * mean[i];
                self.running_var[i] =
                    (1.0 - self.momentum) * self.running_var[i] + self.momentum * var[i];
            }
        }
        Ok(self.apply(x, &mean, &inv_std, true))
    }

    /// Normalizes with the running statistics (an affine map).
    pub fn forward_eval(&self, x: &Tensor) -> Result<(Tensor, BatchNormCache)> {
        self.check(x)?;
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        Ok(self.apply(x, &self.running_mean, &inv_std, false))
    }

    fn apply(&self, x: &Tensor, mean: &[f64], inv_std: &[f64], batch: bool) -> (Tensor, BatchNormCache) {
        let c = self.channels();
        let mut xhat = x.data().to_vec();
        let mut y = Tensor::zeros(x.shape());
        for (xr, yr) in xhat.chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
            for i in 0..c {
                let v = (xr[i] - mean[i]) * inv_std[i];
                xr[i] = v;
                yr[i] = self.gamma[i] * v + self.beta[i];
            }
        }
        (
            y,
            BatchNormCache {
                xhat,
                inv_std: inv_std.to_vec(),
                batch,
            },
        )
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor) -> Result<(Tensor, BatchNormGrads)> {
        let c = self.channels();
        if dy.len() != cache.xhat.len() || dy.c() != c {
            return Err(Error::Shape(format!(
                "batch norm upstream gradient {:?} does not match cached input",
                dy.shape()
            )));
        }
        let m = (dy.len() / c) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (dr, xr) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for i in 0..c {
                dgamma[i] += dr[i] * xr[i];
                dbeta[i] += dr[i];
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        for ((dxr, dr), xr) in dx
            .data_mut()
            .chunks_exact_mut(c)
            .zip(dy.data().chunks_exact(c))
            .zip(cache.xhat.chunks_exact(c))
        {
            for i in 0..c {
                let g = self.gamma[i] * cache.inv_std[i];
                dxr[i] = if cache.batch {
                    // d/dx of (x - mean) / std with batch statistics
                    g * (dr[i] - dbeta[i] / m - xr[i] * dgamma[i] / m)
                } else {
                    g * dr[i]
                };
            }
        }
        Ok((
            dx,
            BatchNormGrads {
                gamma: dgamma,
                beta: dbeta,
            },
        ))
    }
}

/// In-place rectifier; returns the activation for use in backward.
pub fn relu_forward(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Masks `dy` where the forward output was not positive.
pub fn relu_backward(y: &Tensor, dy: &mut Tensor) -> Result<()> {
    if y.shape() != dy.shape() {
        return Err(Error::Shape(format!(
            "relu gradient {:?} vs activation {:?}",
            dy.shape(),
            y.shape()
        )));
    }
    for (d, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(())
}

/// Output side of a 2x2/2 max pool with ceiling-mode edges.
pub fn pooled_dim(d: usize) -> usize {
    d.div_ceil(2)
}

/// 2x2 max pool, stride 2. Odd edges pool over the elements that exist.
/// Ties resolve to the first element in row-major scan order.
pub fn maxpool2x2_forward(x: &Tensor) -> (Tensor, Vec<u32>) {
    let [n, h, w, c] = x.shape();
    let (oh, ow) = (pooled_dim(h), pooled_dim(w));
    let mut y = Tensor::zeros([n, oh, ow, c]);
    let mut arg = vec![0u32; n * oh * ow * c];
    let xd = x.data();
    let in_len = h * w * c;
    let out_len = oh * ow * c;
    y.data_mut()
        .par_chunks_mut(out_len.max(1))
        .zip(arg.par_chunks_mut(out_len.max(1)))
        .enumerate()
        .for_each(|(s, (ys, args))| {
            let base = s * in_len;
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut bi = 0usize;
                        for dy in 0..2 {
                            let iy = 2 * oy + dy;
                            if iy >= h {
                                continue;
                            }
                            for dx in 0..2 {
                                let ix = 2 * ox + dx;
                                if ix >= w {
                                    continue;
                                }
                                let i = base + (iy * w + ix) * c + ch;
                                if xd[i] > best {
                                    best = xd[i];
                                    bi = i - base;
                                }
                            }
                        }
                        let o = (oy * ow + ox) * c + ch;
                        ys[o] = best;
                        args[o] = bi as u32;
                    }
                }
            }
        });
    (y, arg)
}

pub fn maxpool2x2_backward(in_shape: [usize; 4], arg: &[u32], dy: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = in_shape;
    if dy.shape() != [n, pooled_dim(h), pooled_dim(w), c] || arg.len() != dy.len() {
        return Err(Error::Shape(format!(
            "pool gradient {:?} does not match input {in_shape:?}",
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(in_shape);
    let in_len = h * w * c;
    let out_len = dy.sample_len();
    dx.data_mut()
        .par_chunks_mut(in_len.max(1))
        .zip(dy.data().par_chunks(out_len.max(1)))
        .zip(arg.par_chunks(out_len.max(1)))
        .for_each(|((dxs, dys), args)| {
            for (&g, &a) in dys.iter().zip(args) {
                dxs[a as usize] += g;
            }
        });
    Ok(dx)
}

/// Fully connected layer, weights stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Uniform fan-in init; `gain` 6 suits a following ReLU, 1 a linear head.
    pub fn init(&mut self, rng: &mut impl Rng, gain: f64) {
        let bound = (gain / self.n_in as f64).sqrt();
        for w in &mut self.weight {
            *w = rng.gen_range(-bound..bound);
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.sample_len() != self.n_in {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs per sample, got {:?}",
                self.n_in,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let n = x.n();
        let mut y = Tensor::zeros([n, 1, 1, self.n_out]);
        for r in y.data_mut().chunks_exact_mut(self.n_out) {
            r.copy_from_slice(&self.bias);
        }
        gemm(n, self.n_in, self.n_out, x.data(), false, &self.weight, false, y.data_mut(), 1.0);
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, DenseGrads)> {
        self.check(x)?;
        let n = x.n();
        if dy.shape() != [n, 1, 1, self.n_out] {
            return Err(Error::Shape(format!(
                "dense upstream gradient {:?} does not match [{n}, 1, 1, {}]",
                dy.shape(),
                self.n_out
            )));
        }
        let mut dw = vec![0.0; self.n_in * self.n_out];
        gemm(self.n_in, n, self.n_out, x.data(), true, dy.data(), false, &mut dw, 0.0);
        let mut db = vec![0.0; self.n_out];
        for r in dy.data().chunks_exact(self.n_out) {
            add_into(&mut db, r);
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(n, self.n_out, self.n_in, dy.data(), false, &self.weight, true, dx.data_mut(), 0.0);
        Ok((
            dx,
            DenseGrads {
                weight: dw,
                bias: db,
            },
        ))
    }
}
