// SPDX-License-Identifier: Apache-2.0

//! Single-layer resistive power grid: one node per tile, conductances on the
//! edges between 4-neighbours, and pad ties from selected tiles to the supply.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{Cell, TileGrid};
use crate::error::{Error, Result};

/// Which tiles connect to the supply through a pad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PadLayout {
    /// A pad on every tile whose coordinates are `offset` mod `pitch`.
    Pitch { pitch: usize, #[serde(default)] offset: usize },
    /// Pads along all four die edges.
    Edges,
    Corners,
    Explicit { tiles: Vec<(usize, usize)> },
}

impl Default for PadLayout {
    fn default() -> Self {
        PadLayout::Pitch { pitch: 1, offset: 0 }
    }
}

impl PadLayout {
    pub fn tiles(&self, w: usize, h: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        match self {
            PadLayout::Pitch { pitch, offset } => {
                let p = (*pitch).max(1);
                for y in 0..h {
                    for x in 0..w {
                        if x % p == offset % p && y % p == offset % p {
                            out.push((x, y));
                        }
                    }
                }
            }
            PadLayout::Edges => {
                for y in 0..h {
                    for x in 0..w {
                        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                            out.push((x, y));
                        }
                    }
                }
            }
            PadLayout::Corners => {
                let mut c = vec![(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)];
                c.sort();
                c.dedup();
                out = c;
            }
            PadLayout::Explicit { tiles } => out = tiles.clone(),
        }
        out
    }
}

/// Rectangular region `[x0, x1) x [y0, y1)` whose internal edges are scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub factor: f64,
}

/// Deviation from a uniform grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Variation {
    /// Each edge is scaled by `1 + jitter * u`, `u` uniform in `[-1, 1]`.
    pub jitter: f64,
    pub seed: u64,
    pub blocks: Vec<Block>,
}

/// Contents of `pdn.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdnConfig {
    /// Conductance of each grid edge, siemens.
    pub g: f64,
    /// Conductance from a pad tile to the supply, siemens.
    pub g_pad: f64,
    pub vdd: f64,
    pub pads: PadLayout,
    pub variation: Variation,
}

impl Default for PdnConfig {
    fn default() -> Self {
        PdnConfig {
            g: 0.009,
            g_pad: 0.00025,
            vdd: 0.9,
            pads: PadLayout::default(),
            variation: Variation::default(),
        }
    }
}

impl PdnConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("pdn config: {e}")))
    }

    pub fn build(&self, w: usize, h: usize) -> Result<PdnModel> {
        if !(self.g > 0.0 && self.g_pad > 0.0 && self.vdd > 0.0) {
            return Err(Error::Config(format!(
                "g = {}, g_pad = {}, vdd = {} must all be positive",
                self.g, self.g_pad, self.vdd
            )));
        }
        let pdn = PdnModel::uniform(w, h, self.g, self.g_pad, &self.pads.tiles(w, h), self.vdd)?;
        Ok(make_nonuniform_pdn(&pdn, &self.variation))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdnModel {
    w: usize,
    h: usize,
    /// Edge `(x, y)-(x+1, y)` at `y * (w - 1) + x`.
    pub(crate) gx: Vec<f64>,
    /// Edge `(x, y)-(x, y+1)` at `y * w + x`.
    pub(crate) gy: Vec<f64>,
    /// Pad conductance per tile, zero where there is no pad.
    pub(crate) pad: Vec<f64>,
    pub vdd: f64,
}

impl PdnModel {
    pub fn uniform(w: usize, h: usize, g: f64, g_pad: f64, pads: &[(usize, usize)], vdd: f64) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::Config("power grid needs at least one tile".into()));
        }
        let mut pad = vec![0.0; w * h];
        for &(x, y) in pads {
            if x >= w || y >= h {
                return Err(Error::Config(format!("pad ({x}, {y}) outside {w}x{h} grid")));
            }
            pad[y * w + x] = g_pad;
        }
        let m = PdnModel {
            w,
            h,
            gx: vec![g; (w - 1) * h],
            gy: vec![g; w * (h - 1)],
            pad,
            vdd,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gx.iter().chain(&self.gy).any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Config("every grid edge needs positive conductance".into()));
        }
        if self.pad.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
            return Err(Error::Config("pad conductances must be non-negative".into()));
        }
        if !self.pad.iter().any(|&g| g > 0.0) {
            return Err(Error::Config("power grid needs at least one pad".into()));
        }
        Ok(())
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn pad_tiles(&self) -> Vec<(usize, usize)> {
        (0..self.w * self.h)
            .filter(|&i| self.pad[i] > 0.0)
            .map(|i| (i % self.w, i / self.w))
            .collect()
    }

    pub fn is_pad(&self, x: usize, y: usize) -> bool {
        self.pad[y * self.w + x] > 0.0
    }

    /// Sum of all grid edge conductances (pads excluded).
    pub fn total_edge_conductance(&self) -> f64 {
        self.gx.iter().chain(&self.gy).sum()
    }

    pub fn edge_count(&self) -> usize {
        self.gx.len() + self.gy.len()
    }

    /// Conductances of the edges touching tile `(x, y)`.
    pub fn incident(&self, x: usize, y: usize) -> impl Iterator<Item = f64> + '_ {
        let w = self.w;
        let left = (x > 0).then(|| self.gx[y * (w - 1) + x - 1]);
        let right = (x + 1 < w).then(|| self.gx[y * (w - 1) + x]);
        let down = (y > 0).then(|| self.gy[(y - 1) * w + x]);
        let up = (y + 1 < self.h).then(|| self.gy[y * w + x]);
        [left, right, down, up].into_iter().flatten()
    }

    /// Multiplies every edge touching any tile in `tiles` by `factor`,
    /// each edge at most once.
    pub fn scale_incident(&self, tiles: &[(usize, usize)], factor: f64) -> PdnModel {
        let w = self.w;
        let mut hx = vec![false; self.gx.len()];
        let mut hy = vec![false; self.gy.len()];
        for &(x, y) in tiles {
            if x > 0 {
                hx[y * (w - 1) + x - 1] = true;
            }
            if x + 1 < w {
                hx[y * (w - 1) + x] = true;
            }
            if y > 0 {
                hy[(y - 1) * w + x] = true;
            }
            if y + 1 < self.h {
                hy[y * w + x] = true;
            }
        }
        let mut out = self.clone();
        for (g, &hit) in out.gx.iter_mut().zip(&hx) {
            if hit {
                *g *= factor;
            }
        }
        for (g, &hit) in out.gy.iter_mut().zip(&hy) {
            if hit {
                *g *= factor;
            }
        }
        out
    }

    /// Multiplies the pad conductance of every pad tile in `tiles` by
    /// `factor`; tiles without a pad are left alone.
    pub fn scale_pads(&self, tiles: &[(usize, usize)], factor: f64) -> PdnModel {
        let mut out = self.clone();
        for &(x, y) in tiles {
            out.pad[y * self.w + x] *= factor;
        }
        out
    }

    /// Sum of all pad conductances.
    pub fn total_pad_conductance(&self) -> f64 {
        self.pad.iter().sum()
    }

    /// `A v` for the grid Laplacian plus pad ties.
    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (w, h) = (self.w, self.h);
        for i in 0..w * h {
            out[i] = self.pad[i] * v[i];
        }
        for y in 0..h {
            for x in 0..w.saturating_sub(1) {
                let g = self.gx[y * (w - 1) + x];
                let (a, b) = (y * w + x, y * w + x + 1);
                let d = g * (v[a] - v[b]);
                out[a] += d;
                out[b] -= d;
            }
        }
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                let g = self.gy[y * w + x];
                let (a, b) = (y * w + x, (y + 1) * w + x);
                let d = g * (v[a] - v[b]);
                out[a] += d;
                out[b] -= d;
            }
        }
    }

    pub(crate) fn diagonal(&self) -> Vec<f64> {
        let mut d = self.pad.clone();
        for y in 0..self.h {
            for x in 0..self.w {
                d[y * self.w + x] += self.incident(x, y).sum::<f64>();
            }
        }
        d
    }

    /// Dense system matrix, row-major. Only for small grids.
    pub fn dense_matrix(&self) -> Vec<f64> {
        let n = self.w * self.h;
        let mut a = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            for i in 0..n {
                a[i * n + j] = col[i];
            }
            e[j] = 0.0;
        }
        a
    }

    /// Effective-resistance proxy per tile: the reciprocal of the mean
    /// conductance of its incident edges, in ohms.
    pub fn r_eff_map(&self, l: f64) -> TileGrid {
        let mut g = TileGrid::zeros(self.w, self.h, l);
        for y in 0..self.h {
            for x in 0..self.w {
                let (s, n) = self.incident(x, y).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                let r = if n == 0 { 1.0 / self.pad[y * self.w + x].max(f64::MIN_POSITIVE) } else { n as f64 / s };
                g.set(x, y, r);
            }
        }
        g
    }

    /// Copies of `cells` carrying the resistance of the tile under each
    /// cell's center.
    pub fn assign_r_eff(&self, cells: &[Cell], l: f64) -> Vec<Cell> {
        let r = self.r_eff_map(l);
        cells
            .iter()
            .map(|c| {
                let x = (((c.x_min + c.x_max) / 2.0 / l).floor() as usize).min(self.w - 1);
                let y = (((c.y_min + c.y_max) / 2.0 / l).floor() as usize).min(self.h - 1);
                Cell {
                    r_eff: Some(r.get(x, y)),
                    ..c.clone()
                }
            })
            .collect()
    }
}

/// Applies per-edge jitter and block scaling. Zero variation is the identity.
pub fn make_nonuniform_pdn(pdn: &PdnModel, variation: &Variation) -> PdnModel {
    let mut out = pdn.clone();
    let w = pdn.w;
    if variation.jitter != 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(variation.seed);
        for g in out.gx.iter_mut().chain(out.gy.iter_mut()) {
            *g *= 1.0 + variation.jitter * rng.gen_range(-1.0..=1.0);
        }
    }
    for b in &variation.blocks {
        let inside = |x: usize, y: usize| x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
        for y in 0..pdn.h {
            for x in 0..w.saturating_sub(1) {
                if inside(x, y) && inside(x + 1, y) {
                    out.gx[y * (w - 1) + x] *= b.factor;
                }
            }
        }
        for y in 0..pdn.h.saturating_sub(1) {
            for x in 0..w {
                if inside(x, y) && inside(x, y + 1) {
                    out.gy[y * w + x] *= b.factor;
                }
            }
        }
    }
    out
}
