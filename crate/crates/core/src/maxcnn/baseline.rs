// SPDX-License-Identifier: Apache-2.0

//! Per-tile linear regression floor: IR drop as an affine function of the
//! tile's own spatial powers and peak instant power.

use serde::Serialize;

use crate::design::{IrMap, PowerMapSet, TileGrid};
use crate::error::{Error, Result};

/// Intercept, `P_i`, `P_s`, `P_sca`, `P_all`, `max_j P_t[j]`.
pub const BASELINE_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearBaseline {
    /// Coefficients on scaled features, producing volts.
    pub coef: [f64; BASELINE_FEATURES],
    pub input_scale: f64,
}

/// Feature rows for every tile, row-major by tile, powers divided by `scale`.
pub fn baseline_features(maps: &PowerMapSet, scale: f64) -> Vec<[f64; BASELINE_FEATURES]> {
    let peak = maps.max_instant();
    (0..maps.p_all.len())
        .map(|i| {
            [
                1.0,
                maps.p_i.data()[i] / scale,
                maps.p_s.data()[i] / scale,
                maps.p_sca.data()[i] / scale,
                maps.p_all.data()[i] / scale,
                peak.data()[i] / scale,
            ]
        })
        .collect()
}

/// Minimum-residual solution of `a x = b` for a row-major `rows x cols`
/// matrix via Householder QR. Columns that are numerically dependent on
/// earlier ones get a zero coefficient.
pub fn least_squares(a: &[f64], rows: usize, cols: usize, b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != rows * cols || b.len() != rows {
        return Err(Error::Shape(format!(
            "least squares: {} matrix values and {} targets for {rows}x{cols}",
            a.len(),
            b.len()
        )));
    }
    // column-major copy so each reflector works on contiguous memory
    let mut q: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| a[r * cols + c]).collect()).collect();
    let mut y = b.to_vec();
    let norms: Vec<f64> = q.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut diag = vec![0.0; cols];
    let mut usable = vec![false; cols];
    let mut row = 0;
    let mut pivot_row = vec![usize::MAX; cols];
    for c in 0..cols {
        if row >= rows {
            break;
        }
        let alpha: f64 = q[c][row..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha <= 1e-12 * norms[c].max(f64::MIN_POSITIVE) || norms[c] == 0.0 {
            continue;
        }
        let alpha = if q[c][row] > 0.0 { -alpha } else { alpha };
        let mut v = q[c][row..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |col: &mut [f64]| {
            let d: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
            let f = 2.0 * d / vv;
            for (x, vi) in col.iter_mut().zip(&v) {
                *x -= f * vi;
            }
        };
        for cc in c..cols {
            reflect(&mut q[cc][row..]);
        }
        reflect(&mut y[row..]);
        diag[c] = alpha;
        usable[c] = true;
        pivot_row[c] = row;
        row += 1;
    }
    let mut x = vec![0.0; cols];
    for c in (0..cols).rev() {
        if !usable[c] {
            continue;
        }
        let r = pivot_row[c];
        let mut s = y[r];
        for cc in c + 1..cols {
            s -= q[cc][r] * x[cc];
        }
        x[c] = s / diag[c];
    }
    Ok(x)
}

/// Fits one coefficient vector over all tiles of all designs.
pub fn baseline_linear_train(designs: &[(&PowerMapSet, &IrMap)]) -> Result<LinearBaseline> {
    if designs.is_empty() {
        return Err(Error::Config("no training designs for the baseline".into()));
    }
    let scale = designs.iter().map(|(m, _)| m.max_tile_power()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (maps, label) in designs {
        maps.p_all.check_same_shape(label.grid())?;
        for (f, &y) in baseline_features(maps, scale).iter().zip(label.grid().data()) {
            a.extend_from_slice(f);
            b.push(y);
        }
    }
    let x = least_squares(&a, b.len(), BASELINE_FEATURES, &b)?;
    Ok(LinearBaseline {
        coef: x.try_into().expect("feature count"),
        input_scale: scale,
    })
}

impl LinearBaseline {
    /// Unclamped linear response per tile.
    pub fn raw(&self, maps: &PowerMapSet) -> TileGrid {
        let v = baseline_features(maps, self.input_scale)
            .iter()
            .map(|f| f.iter().zip(&self.coef).map(|(a, b)| a * b).sum())
            .collect();
        TileGrid::from_vec(maps.w(), maps.h(), maps.l(), v).expect("shape from maps")
    }

    /// Prediction clamped to `[0, vdd]`.
    pub fn predict(&self, maps: &PowerMapSet, vdd: f64) -> Result<IrMap> {
        IrMap::new(self.raw(maps).map(|v| v.clamp(0.0, vdd)), vdd)
    }
}
