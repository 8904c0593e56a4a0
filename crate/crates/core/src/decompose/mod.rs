// SPDX-License-Identifier: Apache-2.0

//! Space and time decomposition of cell power into tile maps.
//!
//! Every cell spreads its power evenly over the `s` tiles its bounding box
//! overlaps. For the instant maps, a cell additionally contributes its
//! toggle-scaled power to instant `j` only when `t_min < j*t < t_max`.

use crate::design::{tile_count, Cell, DesignMeta, PowerMapSet, TileGrid};
use crate::error::{Error, Result};

/// Tile size and instant sampling used to build a [`PowerMapSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeParams {
    /// Tile edge length in micrometers.
    pub l: f64,
    /// Spacing between instants in seconds.
    pub t: f64,
    /// Number of sampled instants; zero disables time decomposition.
    pub n: usize,
}

impl DecomposeParams {
    /// Builds parameters sampling `n` instants across one clock `period`.
    pub fn with_instants(l: f64, n: usize, period: f64) -> Result<Self> {
        let t = if n == 0 { period } else { period / n as f64 };
        let p = DecomposeParams { l, t, n };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::Config(format!("tile size l = {} must be positive", self.l)));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(Error::Config(format!("time window t = {} must be positive", self.t)));
        }
        Ok(())
    }
}

/// Toggle-scaled and total power of a cell, `(p_sca, p_all)`.
pub fn derived_powers(c: &Cell) -> (f64, f64) {
    (c.p_sca(), c.p_all())
}

/// Tile span of a cell's bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpan {
    pub x_n: usize,
    pub x_x: usize,
    pub y_n: usize,
    pub y_x: usize,
}

impl TileSpan {
    /// Number of tiles covered.
    pub fn count(&self) -> usize {
        (self.x_x - self.x_n) * (self.y_x - self.y_n)
    }
}

fn span_1d(lo: f64, hi: f64, l: f64, n: usize) -> (usize, usize) {
    let n = n as i64;
    let mut a = ((lo / l).floor() as i64).clamp(0, n);
    let mut b = ((hi / l).ceil() as i64).clamp(0, n);
    if b <= a {
        // zero width after rounding; claim one tile
        b = a + 1;
        if b > n {
            b = n;
            a = n - 1;
        }
    }
    (a as usize, b as usize)
}

/// Half-open tile index ranges `[x_n, x_x) x [y_n, y_x)` overlapped by a cell.
///
/// Always covers at least one tile when `w, h >= 1`.
pub fn overlap_tiles(c: &Cell, l: f64, w: usize, h: usize) -> TileSpan {
    let (x_n, x_x) = span_1d(c.x_min, c.x_max, l, w);
    let (y_n, y_x) = span_1d(c.y_min, c.y_max, l, h);
    TileSpan { x_n, x_x, y_n, y_x }
}

/// Instants `j` in `1..=n` with `t_min < j*t < t_max`, as an inclusive range.
pub fn active_instants(c: &Cell, t: f64, n: usize) -> Option<(usize, usize)> {
    if n == 0 {
        return None;
    }
    // start slightly below the analytic bound and test each candidate exactly
    let mut j = ((c.t_min / t).floor().max(0.0) as usize).max(1);
    while j > 1 && c.t_min < (j - 1) as f64 * t {
        j -= 1;
    }
    while j <= n && !(c.t_min < j as f64 * t) {
        j += 1;
    }
    let first = j;
    let mut last = None;
    while j <= n && c.t_max > j as f64 * t {
        last = Some(j);
        j += 1;
    }
    last.map(|last| (first, last))
}

fn add_span(grid: &mut TileGrid, span: &TileSpan, v: f64) {
    let w = grid.w();
    let data = grid.data_mut();
    for y in span.y_n..span.y_x {
        let row = &mut data[y * w + span.x_n..y * w + span.x_x];
        for t in row {
            *t += v;
        }
    }
}

/// Builds the spatial maps and `n` instant maps for a design.
///
/// Cells are accumulated in ascending id order in 64-bit arithmetic so the
/// result does not depend on input ordering.
pub fn decompose(cells: &[Cell], meta: &DesignMeta, params: &DecomposeParams) -> Result<PowerMapSet> {
    params.validate()?;
    let l = params.l;
    let w = tile_count(meta.width, l);
    let h = tile_count(meta.height, l);

    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by_key(|&i| cells[i].id);

    let mut p_i = TileGrid::zeros(w, h, l);
    let mut p_s = TileGrid::zeros(w, h, l);
    let mut p_sca = TileGrid::zeros(w, h, l);
    let mut p_all = TileGrid::zeros(w, h, l);
    let mut toggle = TileGrid::zeros(w, h, l);
    let mut p_t = vec![TileGrid::zeros(w, h, l); params.n];

    for &ci in &order {
        let c = &cells[ci];
        let span = overlap_tiles(c, l, w, h);
        let s = span.count() as f64;
        let (sca, all) = derived_powers(c);
        add_span(&mut p_i, &span, c.p_i / s);
        add_span(&mut p_s, &span, c.p_s / s);
        add_span(&mut p_sca, &span, sca / s);
        add_span(&mut p_all, &span, all / s);
        add_span(&mut toggle, &span, c.r_tog / s);
        if let Some((a, b)) = active_instants(c, params.t, params.n) {
            for map in &mut p_t[a - 1..b] {
                add_span(map, &span, sca / s);
            }
        }
    }

    Ok(PowerMapSet {
        p_i,
        p_s,
        p_sca,
        p_all,
        toggle,
        p_t,
        n: params.n,
        t: params.t,
    })
}

/// Scales each cell's power components by `r_eff / mean(r_eff)`.
///
/// A design whose cells all share the same resistance is returned unchanged.
pub fn scale_by_resistance(cells: &[Cell]) -> Result<Vec<Cell>> {
    let mut rs = Vec::with_capacity(cells.len());
    for c in cells {
        match c.r_eff {
            Some(r) => rs.push(r),
            None => {
                return Err(Error::Config(format!(
                    "cell {} has no r_eff; resistance scaling needs it on every cell",
                    c.id
                )))
            }
        }
    }
    if rs.windows(2).all(|p| p[0] == p[1]) {
        return Ok(cells.to_vec());
    }
    let mean = rs.iter().sum::<f64>() / rs.len() as f64;
    Ok(cells
        .iter()
        .zip(&rs)
        .map(|(c, &r)| {
            let k = r / mean;
            Cell {
                p_i: c.p_i * k,
                p_s: c.p_s * k,
                p_l: c.p_l * k,
                ..c.clone()
            }
        })
        .collect())
}
