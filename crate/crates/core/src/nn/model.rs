// SPDX-License-Identifier: Apache-2.0

//! The per-window regression network: four 3x3 convolutions with batch
//! normalization and ReLU, a 2x2 max pool after the second and fourth,
//! then two fully connected layers down to one scalar.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    maxpool2x2_backward, maxpool2x2_forward, pooled_dim, relu_backward, relu_forward, BatchNorm,
    BatchNormCache, Conv2d, Dense,
};
use super::infer::FoldedCnn;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Network shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    /// Input window side length.
    pub k: usize,
    pub in_channels: usize,
    /// Square kernel size of every convolution.
    pub kernel: usize,
    pub conv: [usize; 4],
    pub hidden: usize,
}

impl Arch {
    /// 16/16/32/32 convolution channels and a 128-unit hidden layer.
    pub fn standard(k: usize, in_channels: usize) -> Self {
        Arch {
            k,
            in_channels,
            kernel: 3,
            conv: [16, 16, 32, 32],
            hidden: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.in_channels == 0 || self.hidden == 0 || self.conv.contains(&0) {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Side length after both pools.
    pub fn pooled_side(&self) -> usize {
        pooled_dim(pooled_dim(self.k))
    }

    pub fn flat_len(&self) -> usize {
        self.pooled_side() * self.pooled_side() * self.conv[3]
    }

    /// Multiply-accumulates of one forward pass.
    pub fn macs(&self) -> usize {
        let s1 = self.k * self.k;
        let p1 = pooled_dim(self.k).pow(2);
        let kk = self.kernel * self.kernel;
        s1 * kk * (self.in_channels * self.conv[0] + self.conv[0] * self.conv[1])
            + p1 * kk * (self.conv[1] * self.conv[2] + self.conv[2] * self.conv[3])
            + self.flat_len() * self.hidden
            + self.hidden
    }
}

/// Whether batch normalization uses batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; `update` also moves the running statistics.
    Batch { update: bool },
    Running,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub arch: Arch,
    pub convs: Vec<Conv2d>,
    pub bns: Vec<BatchNorm>,
    pub fc1: Dense,
    pub fc2: Dense,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    x0: Tensor,
    r: [Tensor; 4],
    p1: Tensor,
    arg1: Vec<u32>,
    arg2: Vec<u32>,
    p2_shape: [usize; 4],
    flat: Tensor,
    h1: Tensor,
    bn: Vec<BatchNormCache>,
}

/// Gradients for every parameter tensor, in [`Cnn::params_mut`] order.
pub type Grads = Vec<Vec<f64>>;

impl Cnn {
    /// Fresh network with seeded fan-in uniform initialization.
    pub fn new(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ks = arch.kernel;
        let ins = [arch.in_channels, arch.conv[0], arch.conv[1], arch.conv[2]];
        let mut convs = Vec::with_capacity(4);
        for i in 0..4 {
            let mut c = Conv2d::new(ks, ks, ins[i], arch.conv[i]);
            c.init(&mut rng);
            convs.push(c);
        }
        let bns = arch.conv.iter().map(|&c| BatchNorm::new(c)).collect();
        let mut fc1 = Dense::new(arch.flat_len(), arch.hidden);
        fc1.init(&mut rng, 6.0);
        let mut fc2 = Dense::new(arch.hidden, 1);
        fc2.init(&mut rng, 1.0);
        Ok(Cnn {
            arch,
            convs,
            bns,
            fc1,
            fc2,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(20);
        for (c, b) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        out.push(&mut self.fc1.weight);
        out.push(&mut self.fc1.bias);
        out.push(&mut self.fc2.weight);
        out.push(&mut self.fc2.bias);
        out
    }

    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = Vec::with_capacity(20);
        for (c, b) in self.convs.iter().zip(self.bns.iter()) {
            out.push(&c.weight);
            out.push(&c.bias);
            out.push(&b.gamma);
            out.push(&b.beta);
        }
        out.push(&self.fc1.weight);
        out.push(&self.fc1.bias);
        out.push(&self.fc2.weight);
        out.push(&self.fc2.bias);
        out
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
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
        Ok(())
    }

    fn bn_forward(&mut self, i: usize, x: &Tensor, mode: BnMode) -> Result<(Tensor, BatchNormCache)> {
        match mode {
            BnMode::Batch { update } => self.bns[i].forward_train(x, update),
            BnMode::Running => self.bns[i].forward_eval(x),
        }
    }

    /// Forward pass over a batch of windows, keeping activations.
    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut bn = Vec::with_capacity(4);

        let a = self.convs[0].forward(x)?;
        let (mut r1, c) = self.bn_forward(0, &a, mode)?;
        bn.push(c);
        relu_forward(&mut r1);

        let a = self.convs[1].forward(&r1)?;
        let (mut r2, c) = self.bn_forward(1, &a, mode)?;
        bn.push(c);
        relu_forward(&mut r2);
        let (p1, arg1) = maxpool2x2_forward(&r2);

        let a = self.convs[2].forward(&p1)?;
        let (mut r3, c) = self.bn_forward(2, &a, mode)?;
        bn.push(c);
        relu_forward(&mut r3);

        let a = self.convs[3].forward(&r3)?;
        let (mut r4, c) = self.bn_forward(3, &a, mode)?;
        bn.push(c);
        relu_forward(&mut r4);
        let (p2, arg2) = maxpool2x2_forward(&r4);
        let p2_shape = p2.shape();

        let flat = p2.flatten();
        let mut h1 = self.fc1.forward(&flat)?;
        relu_forward(&mut h1);
        let out = self.fc2.forward(&h1)?.into_data();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("network output {i} is {}", out[i])));
        }
        Ok((
            out,
            ForwardCache {
                x0: x.clone(),
                r: [r1, r2, r3, r4],
                p1,
                arg1,
                arg2,
                p2_shape,
                flat,
                h1,
                bn,
            },
        ))
    }

    /// Backpropagates `dout` (one value per window). Returns parameter
    /// gradients and, when requested, the gradient w.r.t. the input.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], need_dx: bool) -> Result<(Grads, Option<Tensor>)> {
        let n = cache.x0.n();
        if dout.len() != n {
            return Err(Error::Shape(format!("{} output gradients for {n} windows", dout.len())));
        }
        let d = Tensor::from_vec([n, 1, 1, 1], dout.to_vec())?;
        let (mut dh1, g_fc2) = self.fc2.backward(&cache.h1, &d)?;
        relu_backward(&cache.h1, &mut dh1)?;
        let (dflat, g_fc1) = self.fc1.backward(&cache.flat, &dh1)?;
        let dp2 = dflat.reshape(cache.p2_shape)?;

        let mut dr4 = maxpool2x2_backward(cache.r[3].shape(), &cache.arg2, &dp2)?;
        relu_backward(&cache.r[3], &mut dr4)?;
        let (da, g_bn4) = self.bns[3].backward(&cache.bn[3], &dr4)?;
        let (dr3, g_c4) = self.convs[3].backward(&cache.r[2], &da, true)?;

        let mut dr3 = dr3.expect("requested");
        relu_backward(&cache.r[2], &mut dr3)?;
        let (da, g_bn3) = self.bns[2].backward(&cache.bn[2], &dr3)?;
        let (dp1, g_c3) = self.convs[2].backward(&cache.p1, &da, true)?;

        let mut dr2 = maxpool2x2_backward(cache.r[1].shape(), &cache.arg1, &dp1.expect("requested"))?;
        relu_backward(&cache.r[1], &mut dr2)?;
        let (da, g_bn2) = self.bns[1].backward(&cache.bn[1], &dr2)?;
        let (dr1, g_c2) = self.convs[1].backward(&cache.r[0], &da, true)?;

        let mut dr1 = dr1.expect("requested");
        relu_backward(&cache.r[0], &mut dr1)?;
        let (da, g_bn1) = self.bns[0].backward(&cache.bn[0], &dr1)?;
        let (dx, g_c1) = self.convs[0].backward(&cache.x0, &da, need_dx)?;

        let grads = vec![
            g_c1.weight,
            g_c1.bias,
            g_bn1.gamma,
            g_bn1.beta,
            g_c2.weight,
            g_c2.bias,
            g_bn2.gamma,
            g_bn2.beta,
            g_c3.weight,
            g_c3.bias,
            g_bn3.gamma,
            g_bn3.beta,
            g_c4.weight,
            g_c4.bias,
            g_bn4.gamma,
            g_bn4.beta,
            g_fc1.weight,
            g_fc1.bias,
            g_fc2.weight,
            g_fc2.bias,
        ];
        Ok((grads, dx))
    }

    /// Inference network with batch normalization folded into the convolutions.
    pub fn fold(&self) -> FoldedCnn {
        let convs: Vec<(Vec<f64>, Vec<f64>)> = self
            .convs
            .iter()
            .zip(&self.bns)
            .map(|(c, bn)| {
                let mut w = c.weight.clone();
                let mut b = c.bias.clone();
                for o in 0..c.c_out {
                    let s = bn.gamma[o] / (bn.running_var[o] + bn.eps).sqrt();
                    for r in 0..c.patch_len() {
                        w[r * c.c_out + o] *= s;
                    }
                    b[o] = (c.bias[o] - bn.running_mean[o]) * s + bn.beta[o];
                }
                (w, b)
            })
            .collect();
        FoldedCnn::new(
            self.arch,
            &convs,
            (&self.fc1.weight, &self.fc1.bias),
            (&self.fc2.weight, &self.fc2.bias),
        )
    }
}
