// SPDX-License-Identifier: Apache-2.0

//! Maximum-over-instants CNN: one shared network scores the window of every
//! time-decomposed map and the largest score is the tile's IR drop.

mod baseline;
mod features;
mod train;

use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::design::{IrMap, PowerMapSet, TileGrid};
use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, write_checkpoint, AdamState, Arch, Checkpoint, Cnn, FoldedCnn, Reader, Scratch};

pub use baseline::{baseline_features, baseline_linear_train, least_squares, LinearBaseline, BASELINE_FEATURES};
pub use features::{get_input, Elem, Features, InputVariant};
pub use train::{
    max_branch_step, train, EpochLog, LabeledDesign, Selection, StepOutcome, TrainConfig, TrainReport,
};


/// Labels are learned in millivolts.
pub const LABEL_SCALE: f64 = 1e3;

/// Identity of a design the model has seen during training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignTag {
    pub name: String,
    pub fingerprint: [u8; 32],
}

/// SHA-256 over the shape and spatial power maps of a design, independent of
/// the instant count.
pub fn fingerprint(maps: &PowerMapSet) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((maps.w() as u64).to_le_bytes());
    h.update((maps.h() as u64).to_le_bytes());
    for g in [&maps.p_i, &maps.p_s, &maps.p_sca, &maps.p_all] {
        for v in g.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

/// A trained (or training) network together with everything needed to turn
/// power maps into volts.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxCnn {
    pub cnn: Cnn,
    /// Instant count the network was trained with.
    pub n: usize,
    pub variant: InputVariant,
    /// Power values are divided by this before entering the network.
    pub input_scale: f64,
    pub trained_on: Vec<DesignTag>,
    pub adam: Option<AdamState>,
}

const EXTRA_MAGIC: [u8; 4] = *b"MXCN";

impl MaxCnn {
    pub fn new(k: usize, n: usize, variant: InputVariant, input_scale: f64, seed: u64) -> Result<Self> {
        if k < 3 || k % 2 == 0 {
            return Err(Error::Config(format!("window size k = {k} must be odd and at least 3")));
        }
        if !(input_scale > 0.0 && input_scale.is_finite()) {
            return Err(Error::Config(format!("input scale {input_scale} must be positive")));
        }
        Ok(MaxCnn {
            cnn: Cnn::new(Arch::standard(k, variant.channels()), seed)?,
            n,
            variant,
            input_scale,
            trained_on: Vec::new(),
            adam: None,
        })
    }

    pub fn k(&self) -> usize {
        self.cnn.arch.k
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut extra = EXTRA_MAGIC.to_vec();
        extra.extend_from_slice(&(self.n as u64).to_le_bytes());
        extra.extend_from_slice(&self.variant.code().to_le_bytes());
        extra.extend_from_slice(&self.input_scale.to_le_bytes());
        extra.extend_from_slice(&(self.trained_on.len() as u32).to_le_bytes());
        for t in &self.trained_on {
            extra.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            extra.extend_from_slice(t.name.as_bytes());
            extra.extend_from_slice(&t.fingerprint);
        }
        write_checkpoint(&Checkpoint {
            cnn: self.cnn.clone(),
            adam: self.adam.clone(),
            extra,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck = read_checkpoint(bytes)?;
        let mut r = Reader::new(&ck.extra);
        if r.take(4)? != EXTRA_MAGIC {
            return Err(Error::Format("checkpoint does not hold a max-CNN model".into()));
        }
        let n = r.u64()? as usize;
        let variant = InputVariant::from_code(r.u32()?)?;
        let input_scale = r.f64()?;
        let count = r.u32()? as usize;
        let mut trained_on = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("design name is not UTF-8".into()))?;
            let fingerprint = r.take(32)?.try_into().expect("32 bytes");
            trained_on.push(DesignTag { name, fingerprint });
        }
        if !r.done() {
            return Err(Error::Format("trailing bytes in model metadata".into()));
        }
        if ck.cnn.arch.in_channels != variant.channels() {
            return Err(Error::Format(format!(
                "network takes {} channels but the {variant:?} input has {}",
                ck.cnn.arch.in_channels,
                variant.channels()
            )));
        }
        Ok(MaxCnn {
            cnn: ck.cnn,
            n,
            variant,
            input_scale,
            trained_on,
            adam: ck.adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses designs that took part in training, matched by name or by
    /// map fingerprint.
    pub fn check_unseen(&self, name: &str, maps: &PowerMapSet) -> Result<()> {
        let fp = fingerprint(maps);
        match self.trained_on.iter().find(|t| t.name == name || t.fingerprint == fp) {
            Some(t) => Err(Error::SeenDesign(t.name.clone())),
            None => Ok(()),
        }
    }

    /// Frozen predictor over one design's maps.
    pub fn predictor(&self, maps: &PowerMapSet) -> Result<Predictor> {
        if maps.n != self.n {
            return Err(Error::Config(format!(
                "model expects N = {} instants, maps have {}",
                self.n, maps.n
            )));
        }
        Ok(Predictor {
            net: self.cnn.fold(),
            features: Features::new(maps, self.variant, self.input_scale)?,
        })
    }
}

/// Network output per tile plus the instant that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ir_hat: IrMap,
    /// Selected instant per tile, `1..=N`, or `0` when `N = 0`.
    pub argmax: TileGrid,
}

/// A folded network bound to one design's scaled features.
pub struct Predictor {
    net: FoldedCnn,
    features: Features,
}

impl Predictor {
    fn slots(&self) -> Vec<Option<usize>> {
        match self.features.n() {
            0 => vec![None],
            n => (0..n).map(Some).collect(),
        }
    }

    /// Raw network outputs (millivolts) for every instant of each tile in `tiles`.
    fn scores(&self, tiles: &[(usize, usize)], scratch: &mut Scratch, out: &mut Vec<f32>) -> Result<()> {
        let k = self.net.arch().k;
        let per = self.net.window_len();
        let slots = self.slots();
        let mut buf = vec![0f32; tiles.len() * slots.len() * per];
        let mut chunks = buf.chunks_exact_mut(per);
        for &(x, y) in tiles {
            for &s in &slots {
                self.features.window(s, x, y, k, chunks.next().expect("sized above"))?;
            }
        }
        self.net.forward_serial(&buf, scratch, out)
    }

    /// `(volts, instant)` for one tile; ties go to the smallest instant.
    pub fn tile(&self, x: usize, y: usize) -> Result<(f64, usize)> {
        let mut out = Vec::new();
        self.scores(&[(x, y)], &mut Scratch::default(), &mut out)?;
        Ok(reduce_max(&out, self.features.n()))
    }

    /// Predictions for a list of tiles, in order.
    pub fn tiles(&self, tiles: &[(usize, usize)]) -> Result<Vec<(f64, usize)>> {
        let n_slots = self.features.n().max(1);
        let group = (64 / n_slots).max(1);
        let parts: Vec<Result<Vec<(f64, usize)>>> = tiles
            .par_chunks(group)
            .map_init(
                || (Scratch::default(), Vec::new()),
                |(scratch, out), ts| {
                    self.scores(ts, scratch, out)?;
                    Ok(out.chunks_exact(n_slots).map(|o| reduce_max(o, self.features.n())).collect())
                },
            )
            .collect();
        let mut res = Vec::with_capacity(tiles.len());
        for p in parts {
            res.extend(p?);
        }
        Ok(res)
    }

    pub fn design(&self, vdd: f64) -> Result<Prediction> {
        let (w, h) = (self.features.w(), self.features.h());
        let tiles: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
        let res = self.tiles(&tiles)?;
        let l = self.features.l();
        let ir = res.iter().map(|&(v, _)| v.min(vdd)).collect();
        let arg = res.iter().map(|&(_, j)| j as f64).collect();
        Ok(Prediction {
            ir_hat: IrMap::new(TileGrid::from_vec(w, h, l, ir)?, vdd)?,
            argmax: TileGrid::from_vec(w, h, l, arg)?,
        })
    }
}

/// Max over the outputs of one tile, floored at zero drop, converted to volts.
fn reduce_max(o: &[f32], n: usize) -> (f64, usize) {
    let mut best = 0usize;
    for (i, &v) in o.iter().enumerate() {
        if v > o[best] {
            best = i;
        }
    }
    let v = f64::from(o[best]).max(0.0) / LABEL_SCALE;
    (v, if n == 0 { 0 } else { best + 1 })
}

pub fn predict_tile(model: &MaxCnn, maps: &PowerMapSet, x: usize, y: usize) -> Result<(f64, usize)> {
    model.predictor(maps)?.tile(x, y)
}

/// Predicts every tile, clamping to `vdd`.
pub fn predict_design(model: &MaxCnn, maps: &PowerMapSet, vdd: f64) -> Result<Prediction> {
    model.predictor(maps)?.design(vdd)
}
