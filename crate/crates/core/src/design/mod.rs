// SPDX-License-Identifier: Apache-2.0

//! Domain types shared by every stage: cells, design metadata, tile grids
//! and the map sets derived from them.

mod io;

pub use io::{load_design, load_map, load_maps, save_design, save_map, save_map_csv, save_maps, TGRID_MAGIC};

use crate::error::{Error, Result};

/// Fraction of the supply voltage used as the default hotspot threshold.
pub const DEFAULT_HOTSPOT_FRACTION: f64 = 0.06;

/// One placed standard cell with its power and timing features.
///
/// Powers are in watts, times in seconds within one clock cycle, and
/// coordinates in micrometers.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: u64,
    pub p_i: f64,
    pub p_s: f64,
    pub p_l: f64,
    pub r_tog: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Effective supply resistance seen by the cell, in ohms.
    pub r_eff: Option<f64>,
}

impl Cell {
    /// Checks every per-cell invariant against the enclosing design.
    pub fn validate(&self, meta: &DesignMeta) -> Result<()> {
        let what = || format!("cell {}", self.id);
        let fields = [
            ("p_i", self.p_i),
            ("p_s", self.p_s),
            ("p_l", self.p_l),
            ("r_tog", self.r_tog),
            ("t_min", self.t_min),
            ("t_max", self.t_max),
            ("x_min", self.x_min),
            ("x_max", self.x_max),
            ("y_min", self.y_min),
            ("y_max", self.y_max),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::validation(what(), format!("{name} is not finite")));
            }
        }
        for (name, v) in [("p_i", self.p_i), ("p_s", self.p_s), ("p_l", self.p_l)] {
            if v < 0.0 {
                return Err(Error::validation(what(), format!("{name} = {v} is negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.r_tog) {
            return Err(Error::validation(
                what(),
                format!("r_tog = {} outside [0, 1]", self.r_tog),
            ));
        }
        if self.t_min < 0.0 {
            return Err(Error::validation(what(), format!("t_min = {} is negative", self.t_min)));
        }
        if self.t_min > self.t_max {
            return Err(Error::validation(
                what(),
                format!("t_min = {} exceeds t_max = {}", self.t_min, self.t_max),
            ));
        }
        if self.t_max > meta.period {
            return Err(Error::validation(
                what(),
                format!("t_max = {} exceeds clock period {}", self.t_max, meta.period),
            ));
        }
        if self.x_min >= self.x_max {
            return Err(Error::validation(
                what(),
                format!("x_min = {} not below x_max = {}", self.x_min, self.x_max),
            ));
        }
        if self.y_min >= self.y_max {
            return Err(Error::validation(
                what(),
                format!("y_min = {} not below y_max = {}", self.y_min, self.y_max),
            ));
        }
        if self.x_min < 0.0 || self.x_max > meta.width {
            return Err(Error::validation(
                what(),
                format!("x range [{}, {}] outside design width {}", self.x_min, self.x_max, meta.width),
            ));
        }
        if self.y_min < 0.0 || self.y_max > meta.height {
            return Err(Error::validation(
                what(),
                format!("y range [{}, {}] outside design height {}", self.y_min, self.y_max, meta.height),
            ));
        }
        if let Some(r) = self.r_eff {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::validation(what(), format!("r_eff = {r} must be positive")));
            }
        }
        Ok(())
    }

    /// Toggle-scaled total power `(p_i + p_s) * r_tog + p_l`.
    pub fn p_sca(&self) -> f64 {
        (self.p_i + self.p_s) * self.r_tog + self.p_l
    }

    /// Unscaled total power `p_i + p_s + p_l`.
    pub fn p_all(&self) -> f64 {
        self.p_i + self.p_s + self.p_l
    }
}

/// Design-level metadata carried in the header of a cell table.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMeta {
    pub name: String,
    /// Die width in micrometers.
    pub width: f64,
    /// Die height in micrometers.
    pub height: f64,
    /// Clock period in seconds.
    pub period: f64,
    pub cell_count: usize,
    /// Supply voltage in volts.
    pub vdd: f64,
    /// IR drop above which a tile counts as a hotspot, in volts.
    pub hotspot_threshold: f64,
}

impl DesignMeta {
    pub fn validate(&self) -> Result<()> {
        let what = || format!("design `{}`", self.name);
        for (name, v) in [
            ("W", self.width),
            ("H", self.height),
            ("T", self.period),
            ("vdd", self.vdd),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(what(), format!("{name} = {v} must be positive")));
            }
        }
        if !(self.hotspot_threshold > 0.0 && self.hotspot_threshold < self.vdd) {
            return Err(Error::validation(
                what(),
                format!(
                    "hotspot_threshold = {} must lie in (0, vdd = {})",
                    self.hotspot_threshold, self.vdd
                ),
            ));
        }
        Ok(())
    }
}

/// Number of tiles of size `l` needed to cover `extent`.
///
/// Ceiling division so cells at the die edge always land in a tile. A
/// relative slack of 1e-9 keeps exact multiples from rounding up.
pub fn tile_count(extent: f64, l: f64) -> usize {
    let q = extent / l;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q.max(1.0) {
        r.max(1.0) as usize
    } else {
        q.ceil().max(1.0) as usize
    }
}

/// A `w x h` array of per-tile values stored row-major (`y * w + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    w: usize,
    h: usize,
    l: f64,
    data: Vec<f64>,
}

impl TileGrid {
    pub fn zeros(w: usize, h: usize, l: f64) -> Self {
        TileGrid {
            w,
            h,
            l,
            data: vec![0.0; w * h],
        }
    }

    pub fn from_vec(w: usize, h: usize, l: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != w * h {
            return Err(Error::Shape(format!(
                "grid {w}x{h} needs {} values, got {}",
                w * h,
                data.len()
            )));
        }
        Ok(TileGrid { w, h, l, data })
    }

    pub fn filled(w: usize, h: usize, l: f64, value: f64) -> Self {
        TileGrid {
            w,
            h,
            l,
            data: vec![value; w * h],
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Tile edge length in micrometers.
    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.w && y < self.h);
        y * self.w + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &TileGrid) -> bool {
        self.w == other.w && self.h == other.h
    }

    pub fn check_same_shape(&self, other: &TileGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.w, self.h, other.w, other.h
            )))
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TileGrid {
        TileGrid {
            w: self.w,
            h: self.h,
            l: self.l,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Spatial and time-decomposed power maps for one design, in watts per tile.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMapSet {
    pub p_i: TileGrid,
    pub p_s: TileGrid,
    pub p_sca: TileGrid,
    pub p_all: TileGrid,
    /// Amortized toggle rate per tile; only used by the reduced-input variant.
    pub toggle: TileGrid,
    /// `p_t[j - 1]` holds the map for instant `j * t`, `j` in `1..=n`.
    pub p_t: Vec<TileGrid>,
    pub n: usize,
    /// Time window between instants, in seconds.
    pub t: f64,
}

impl PowerMapSet {
    pub fn w(&self) -> usize {
        self.p_all.w()
    }

    pub fn h(&self) -> usize {
        self.p_all.h()
    }

    pub fn l(&self) -> f64 {
        self.p_all.l()
    }

    /// Instant map for 1-based instant `j`.
    pub fn instant(&self, j: usize) -> Result<&TileGrid> {
        if j == 0 || j > self.n {
            return Err(Error::Index(format!("instant {j} outside [1, {}]", self.n)));
        }
        Ok(&self.p_t[j - 1])
    }

    /// Tile-wise maximum over all instant maps (zeros when `n == 0`).
    pub fn max_instant(&self) -> TileGrid {
        let mut out = TileGrid::zeros(self.w(), self.h(), self.l());
        for m in &self.p_t {
            for (o, &v) in out.data_mut().iter_mut().zip(m.data()) {
                *o = o.max(v);
            }
        }
        out
    }

    /// Largest tile value across the four spatial maps and all instants.
    pub fn max_tile_power(&self) -> f64 {
        [&self.p_i, &self.p_s, &self.p_sca, &self.p_all]
            .into_iter()
            .chain(self.p_t.iter())
            .map(|g| g.max())
            .fold(0.0, f64::max)
    }
}

/// Per-tile IR drop in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct IrMap {
    grid: TileGrid,
}

impl IrMap {
    pub fn new(grid: TileGrid, vdd: f64) -> Result<Self> {
        if let Some((i, v)) = grid
            .data()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v.is_finite() && (0.0..=vdd).contains(&v)))
        {
            return Err(Error::validation(
                "IR map",
                format!("tile {i} holds {v}, outside [0, {vdd}]"),
            ));
        }
        Ok(IrMap { grid })
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn into_grid(self) -> TileGrid {
        self.grid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meta() -> DesignMeta {
        DesignMeta {
            name: "d".into(),
            width: 10.0,
            height: 10.0,
            period: 1e-9,
            cell_count: 1,
            vdd: 0.9,
            hotspot_threshold: 0.054,
        }
    }

    fn cell() -> Cell {
        Cell {
            id: 7,
            p_i: 1e-6,
            p_s: 1e-6,
            p_l: 1e-8,
            r_tog: 0.3,
            t_min: 1e-10,
            t_max: 3e-10,
            x_min: 1.0,
            x_max: 2.0,
            y_min: 1.0,
            y_max: 1.5,
            r_eff: None,
        }
    }

    #[test]
    fn tile_count_uses_ceiling() {
        assert_eq!(tile_count(100.0, 1.0), 100);
        assert_eq!(tile_count(10.5, 1.0), 11);
        assert_eq!(tile_count(0.3 * 3.0, 0.3), 3);
    }

    #[test]
    fn valid_cell_passes() {
        cell().validate(&meta()).unwrap();
    }

    #[test]
    fn invalid_cells_name_field() {
        let m = meta();
        let cases: Vec<(Cell, &str)> = vec![
            (Cell { p_i: -1.0, ..cell() }, "p_i"),
            (Cell { r_tog: 1.5, ..cell() }, "r_tog"),
            (Cell { t_min: 5e-10, ..cell() }, "t_min"),
            (Cell { t_max: 2e-9, ..cell() }, "t_max"),
            (Cell { x_max: 1.0, ..cell() }, "x_min"),
            (Cell { y_max: 11.0, ..cell() }, "y range"),
            (Cell { r_eff: Some(0.0), ..cell() }, "r_eff"),
            (Cell { p_s: f64::NAN, ..cell() }, "p_s"),
        ];
        for (c, field) in cases {
            let err = c.validate(&m).unwrap_err().to_string();
            assert!(err.contains("cell 7"), "{err}");
            assert!(err.contains(field), "{err} should mention {field}");
        }
    }

    #[test]
    fn meta_threshold_must_be_below_vdd() {
        let mut m = meta();
        m.hotspot_threshold = 1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn ir_map_rejects_out_of_range() {
        let g = TileGrid::from_vec(2, 1, 1.0, vec![0.1, 1.2]).unwrap();
        assert!(IrMap::new(g, 0.9).is_err());
    }
}
