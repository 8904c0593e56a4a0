// SPDX-License-Identifier: Apache-2.0

//! Single-precision inference engine for a trained network with batch
//! normalization folded into the convolutions.

use rayon::prelude::*;

use super::gemm::sgemm_acc;
use super::model::Arch;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Windows per work item in [`FoldedCnn::forward`].
pub const INFER_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
struct ConvF {
    kernel: usize,
    c_in: usize,
    c_out: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvF {
    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.c_in
    }

    /// Same-padded convolution followed by ReLU.
    fn forward_relu(&self, x: &[f32], count: usize, side: usize, cols: &mut Vec<f32>, y: &mut Vec<f32>) {
        let k = self.patch_len();
        let cin = self.c_in;
        let rows = count * side * side;
        let pad = (self.kernel / 2) as isize;
        cols.clear();
        cols.resize(rows * k, 0.0);
        for s in 0..count {
            let xs = &x[s * side * side * cin..][..side * side * cin];
            for oy in 0..side {
                for ox in 0..side {
                    let row = &mut cols[((s * side + oy) * side + ox) * k..][..k];
                    for ky in 0..self.kernel {
                        let iy = oy as isize + ky as isize - pad;
                        if iy < 0 || iy >= side as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = ox as isize + kx as isize - pad;
                            if ix < 0 || ix >= side as isize {
                                continue;
                            }
                            let src = ((iy as usize) * side + ix as usize) * cin;
                            row[(ky * self.kernel + kx) * cin..][..cin].copy_from_slice(&xs[src..src + cin]);
                        }
                    }
                }
            }
        }
        y.clear();
        y.reserve(rows * self.c_out);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias);
        }
        sgemm_acc(rows, k, self.c_out, cols, &self.weight, y);
        y.iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

fn maxpool(x: &[f32], count: usize, side: usize, c: usize, y: &mut Vec<f32>) -> usize {
    let o = side.div_ceil(2);
    y.clear();
    y.resize(count * o * o * c, f32::NEG_INFINITY);
    for s in 0..count {
        let xs = &x[s * side * side * c..][..side * side * c];
        let ys = &mut y[s * o * o * c..][..o * o * c];
        for iy in 0..side {
            for ix in 0..side {
                let src = &xs[(iy * side + ix) * c..][..c];
                let dst = &mut ys[((iy / 2) * o + ix / 2) * c..][..c];
                for (d, &v) in dst.iter_mut().zip(src) {
                    if v > *d {
                        *d = v;
                    }
                }
            }
        }
    }
    o
}

/// Reusable buffers for one inference worker.
#[derive(Default)]
pub struct Scratch {
    a: Vec<f32>,
    b: Vec<f32>,
    cols: Vec<f32>,
}

/// Frozen network for fast, read-only inference.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedCnn {
    arch: Arch,
    convs: Vec<ConvF>,
    fc1_w: Vec<f32>,
    fc1_b: Vec<f32>,
    fc2_w: Vec<f32>,
    fc2_b: f32,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

impl FoldedCnn {
    /// `convs` holds `(weight, bias)` pairs already folded with their
    /// normalization; the dense layers are `in x out`.
    pub(crate) fn new(arch: Arch, convs: &[(Vec<f64>, Vec<f64>)], fc1: (&[f64], &[f64]), fc2: (&[f64], &[f64])) -> Self {
        let mut c_in = arch.in_channels;
        let convs = convs
            .iter()
            .zip(arch.conv)
            .map(|((w, b), c_out)| {
                let c = ConvF {
                    kernel: arch.kernel,
                    c_in,
                    c_out,
                    weight: to_f32(w),
                    bias: to_f32(b),
                };
                c_in = c_out;
                c
            })
            .collect();
        FoldedCnn {
            arch,
            convs,
            fc1_w: to_f32(fc1.0),
            fc1_b: to_f32(fc1.1),
            fc2_w: to_f32(fc2.0),
            fc2_b: fc2.1[0] as f32,
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn window_len(&self) -> usize {
        self.arch.k * self.arch.k * self.arch.in_channels
    }

    /// Outputs for `x.len() / window_len()` windows on the calling thread.
    pub fn forward_serial(&self, x: &[f32], scratch: &mut Scratch, out: &mut Vec<f32>) -> Result<()> {
        let per = self.window_len();
        if x.len() % per != 0 {
            return Err(Error::Shape(format!("{} values is not a whole number of {per}-value windows", x.len())));
        }
        let count = x.len() / per;
        let Scratch { a, b, cols } = scratch;
        let k = self.arch.k;
        self.convs[0].forward_relu(x, count, k, cols, a);
        self.convs[1].forward_relu(a, count, k, cols, b);
        let s1 = maxpool(b, count, k, self.arch.conv[1], a);
        self.convs[2].forward_relu(a, count, s1, cols, b);
        self.convs[3].forward_relu(b, count, s1, cols, a);
        maxpool(a, count, s1, self.arch.conv[3], b);
        let flat = self.arch.flat_len();
        let hidden = self.arch.hidden;
        a.clear();
        for _ in 0..count {
            a.extend_from_slice(&self.fc1_b);
        }
        sgemm_acc(count, flat, hidden, b, &self.fc1_w, a);
        out.clear();
        for h in a.chunks_exact(hidden) {
            let v = h.iter().zip(&self.fc2_w).fold(self.fc2_b, |s, (&x, &w)| s + x.max(0.0) * w);
            out.push(v);
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite network output {} for window {i}", out[i])));
        }
        Ok(())
    }

    /// Outputs for a batch of `[n, k, k, c]` windows, in parallel chunks.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        let a = &self.arch;
        if x.h() != a.k || x.w() != a.k || x.c() != a.in_channels {
            return Err(Error::Shape(format!(
                "network expects [n, {}, {}, {}] windows, got {:?}",
                a.k,
                a.k,
                a.in_channels,
                x.shape()
            )));
        }
        let per = self.window_len();
        let outs: Vec<Result<Vec<f32>>> = x
            .data()
            .par_chunks(INFER_CHUNK * per)
            .map_init(Scratch::default, |scratch, xc| {
                let xf = to_f32(xc);
                let mut out = Vec::new();
                self.forward_serial(&xf, scratch, &mut out)?;
                Ok(out)
            })
            .collect();
        let mut out = Vec::with_capacity(x.n());
        for o in outs {
            out.extend(o?.into_iter().map(f64::from));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Cnn;

    #[test]
    fn batching_does_not_change_outputs() {
        let arch = Arch::standard(9, 5);
        let f = Cnn::new(arch, 3).unwrap().fold();
        let per = f.window_len();
        let n = 45;
        let x: Vec<f64> = (0..n * per).map(|i| (i as f64 * 0.71).sin().abs()).collect();
        let batched = f.forward(&Tensor::from_vec([n, 9, 9, 5], x.clone()).unwrap()).unwrap();
        let mut scratch = Scratch::default();
        let mut out = Vec::new();
        for (i, w) in x.chunks(per).enumerate() {
            f.forward_serial(&to_f32(w), &mut scratch, &mut out).unwrap();
            assert_eq!(out.len(), 1);
            assert_eq!(f64::from(out[0]), batched[i], "window {i}");
        }
    }

    #[test]
    fn ragged_input_is_shape_error() {
        let f = Cnn::new(Arch::standard(5, 5), 0).unwrap().fold();
        let mut out = Vec::new();
        let err = f.forward_serial(&[0.0; 7], &mut Scratch::default(), &mut out).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
