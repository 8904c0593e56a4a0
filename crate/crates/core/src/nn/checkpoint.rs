// SPDX-License-Identifier: Apache-2.0

//! Versioned little-endian checkpoint: architecture, every parameter tensor,
//! batch-norm running statistics, optional optimizer state, and an opaque
//! trailer owned by the caller.

use super::adam::{AdamConfig, AdamState};
use super::model::{Arch, Cnn};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"IRCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub cnn: Cnn,
    pub adam: Option<AdamState>,
    pub extra: Vec<u8>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vec(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn vec(&mut self, expect: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n != expect {
            return Err(Error::Format(format!("{what}: {n} values, architecture needs {expect}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    pub(crate) fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    let a = ck.cnn.arch;
    for v in [a.k, a.in_channels, a.kernel, a.conv[0], a.conv[1], a.conv[2], a.conv[3], a.hidden] {
        w.u32(v as u32);
    }
    for p in ck.cnn.params() {
        w.vec(p);
    }
    for bn in &ck.cnn.bns {
        w.f64(bn.eps);
        w.f64(bn.momentum);
        w.vec(&bn.running_mean);
        w.vec(&bn.running_var);
    }
    match &ck.adam {
        None => w.u32(0),
        Some(s) => {
            w.u32(1);
            w.f64(s.config.lr);
            w.f64(s.config.beta1);
            w.f64(s.config.beta2);
            w.f64(s.config.eps);
            w.u64(s.step);
            for m in &s.m {
                w.vec(m);
            }
            for v in &s.v {
                w.vec(v);
            }
        }
    }
    w.u64(ck.extra.len() as u64);
    w.0.extend_from_slice(&ck.extra);
    w.0
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let arch = Arch {
        k: dims[0],
        in_channels: dims[1],
        kernel: dims[2],
        conv: [dims[3], dims[4], dims[5], dims[6]],
        hidden: dims[7],
    };
    let mut cnn = Cnn::new(arch, 0).map_err(|e| Error::Format(e.to_string()))?;
    let sizes = cnn.param_sizes();
    for (t, p) in cnn.params_mut().into_iter().enumerate() {
        *p = r.vec(sizes[t], &format!("parameter tensor {t}"))?;
    }
    for bn in &mut cnn.bns {
        let c = bn.channels();
        bn.eps = r.f64()?;
        bn.momentum = r.f64()?;
        bn.running_mean = r.vec(c, "running mean")?;
        bn.running_var = r.vec(c, "running variance")?;
        if bn.running_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Format("running variance must be positive".into()));
        }
    }
    let adam = match r.u32()? {
        0 => None,
        1 => {
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let step = r.u64()?;
            let m = sizes.iter().map(|&n| r.vec(n, "adam m")).collect::<Result<Vec<_>>>()?;
            let v = sizes.iter().map(|&n| r.vec(n, "adam v")).collect::<Result<Vec<_>>>()?;
            Some(AdamState { config, step, m, v })
        }
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    let n = r.u64()? as usize;
    let extra = r.take(n)?.to_vec();
    if !r.done() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { cnn, adam, extra })
}
