// SPDX-License-Identifier: Apache-2.0

//! Window extraction: the static channels of a tile neighbourhood stacked
//! with one instant map, zero outside the die.

use serde::{Deserialize, Serialize};

use crate::design::{PowerMapSet, TileGrid};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Which maps feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputVariant {
    /// `(P_i, P_s, P_sca, P_all, P_t[j])`.
    #[default]
    Full,
    /// `(P_all, toggle / max toggle, P_t[j])`: the reduced power-type input.
    Reduced,
}

impl InputVariant {
    pub fn channels(self) -> usize {
        match self {
            InputVariant::Full => 5,
            InputVariant::Reduced => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputVariant::Full => "full",
            InputVariant::Reduced => "reduced",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            InputVariant::Full => 0,
            InputVariant::Reduced => 1,
        }
    }

    pub(crate) fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(InputVariant::Full),
            1 => Ok(InputVariant::Reduced),
            _ => Err(Error::Format(format!("unknown input variant {c}"))),
        }
    }
}

/// Tile window for instant `j` with the full five-channel input, unscaled.
///
/// `j == 0` is accepted only for a design without instants and yields a zero
/// time channel.
pub fn get_input(maps: &PowerMapSet, j: usize, x: usize, y: usize, k: usize) -> Result<Tensor> {
    let f = Features::new(maps, InputVariant::Full, 1.0)?;
    let mut out = vec![0.0; k * k * 5];
    f.window(instant_slot(maps.n, j)?, x, y, k, &mut out)?;
    Tensor::from_vec([1, k, k, 5], out)
}

/// Maps a 1-based instant onto the stored index, `None` for the `N = 0` case.
pub(crate) fn instant_slot(n: usize, j: usize) -> Result<Option<usize>> {
    match (n, j) {
        (0, 0) => Ok(None),
        (n, j) if j >= 1 && j <= n => Ok(Some(j - 1)),
        _ => Err(Error::Index(format!("instant {j} outside [1, {n}]"))),
    }
}

/// Scaled channel planes of one design.
#[derive(Debug, Clone)]
pub struct Features {
    w: usize,
    h: usize,
    l: f64,
    /// Static channels interleaved per tile, `[y][x][c]`.
    statics: Vec<f64>,
    n_static: usize,
    instants: Vec<Vec<f64>>,
}

impl Features {
    /// Collects the channels of `variant`, each value divided by `scale`.
    pub fn new(maps: &PowerMapSet, variant: InputVariant, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("input scale {scale} must be positive")));
        }
        let toggle_norm;
        let planes: Vec<&TileGrid> = match variant {
            InputVariant::Full => vec![&maps.p_i, &maps.p_s, &maps.p_sca, &maps.p_all],
            InputVariant::Reduced => {
                // the toggle channel is already unitless, so undo the power scale
                let m = maps.toggle.max();
                let f = if m > 0.0 { scale / m } else { 0.0 };
                toggle_norm = maps.toggle.map(|v| v * f);
                vec![&maps.p_all, &toggle_norm]
            }
        };
        let (w, h) = (maps.w(), maps.h());
        let n_static = planes.len();
        let mut statics = vec![0.0; w * h * n_static];
        for (c, p) in planes.iter().enumerate() {
            for (i, &v) in p.data().iter().enumerate() {
                statics[i * n_static + c] = v / scale;
            }
        }
        let instants = maps.p_t.iter().map(|g| g.data().iter().map(|v| v / scale).collect()).collect();
        Ok(Features {
            w,
            h,
            l: maps.l(),
            statics,
            n_static,
            instants,
        })
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn n(&self) -> usize {
        self.instants.len()
    }

    pub fn channels(&self) -> usize {
        self.n_static + 1
    }

    pub fn instant_plane(&self, slot: usize) -> &[f64] {
        &self.instants[slot]
    }

    /// Writes the `k x k x channels` window centred on `(x, y)` into `out`.
    pub fn window<T: Elem>(&self, slot: Option<usize>, x: usize, y: usize, k: usize, out: &mut [T]) -> Result<()> {
        if x >= self.w || y >= self.h {
            return Err(Error::Index(format!("tile ({x}, {y}) outside {}x{} grid", self.w, self.h)));
        }
        let c = self.channels();
        if out.len() != k * k * c {
            return Err(Error::Shape(format!("window buffer holds {}, needs {}", out.len(), k * k * c)));
        }
        let inst = slot.map(|s| &self.instants[s]);
        let half = (k / 2) as isize;
        for wy in 0..k {
            let ty = y as isize + wy as isize - half;
            for wx in 0..k {
                let tx = x as isize + wx as isize - half;
                let dst = &mut out[(wy * k + wx) * c..][..c];
                if ty < 0 || tx < 0 || ty >= self.h as isize || tx >= self.w as isize {
                    dst.fill(T::default());
                    continue;
                }
                let t = ty as usize * self.w + tx as usize;
                for (d, &v) in dst.iter_mut().zip(&self.statics[t * self.n_static..][..self.n_static]) {
                    *d = T::from_f64(v);
                }
                dst[c - 1] = match inst {
                    Some(p) => T::from_f64(p[t]),
                    None => T::default(),
                };
            }
        }
        Ok(())
    }
}

/// Window element type: `f64` for training, `f32` for inference.
pub trait Elem: Copy + Default {
    fn from_f64(v: f64) -> Self;
}

impl Elem for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Elem for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}
