// SPDX-License-Identifier: Apache-2.0

use rayon::prelude::*;

use super::pdn::PdnModel;
use crate::design::{IrMap, PowerMapSet, TileGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Target `||A v - i|| / ||i||`.
    pub rel_tol: f64,
    /// Iteration cap; `10 * w * h` when unset.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rel_tol: 1e-11,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Drop field for tile currents `current` (amps) with the default options.
pub fn solve_instant(pdn: &PdnModel, current: &TileGrid) -> Result<TileGrid> {
    solve_with(pdn, current, SolverOptions::default()).map(|(v, _)| v)
}

/// Jacobi-preconditioned conjugate gradient on `(L + P_pad) v = i`.
pub fn solve_with(pdn: &PdnModel, current: &TileGrid, opts: SolverOptions) -> Result<(TileGrid, SolveStats)> {
    let (w, h) = (pdn.w(), pdn.h());
    if current.w() != w || current.h() != h {
        return Err(Error::Shape(format!(
            "current map {}x{} does not match {w}x{h} power grid",
            current.w(),
            current.h()
        )));
    }
    if let Some((i, v)) = current.data().iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::validation("current map", format!("tile {i} carries {v} A; currents must be finite and non-negative")));
    }
    let b = current.data();
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut v = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            TileGrid::from_vec(w, h, current.l(), v)?,
            SolveStats {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n);
    let inv_d: Vec<f64> = pdn.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut it = 0;
    let mut res = 1.0;
    while it < max_iter {
        pdn.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            v[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        it += 1;
        res = dot(&r, &r).sqrt() / bnorm;
        if res < opts.rel_tol {
            // confirm against the true residual; the recurrence can drift
            pdn.apply(&v, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            res = dot(&r, &r).sqrt() / bnorm;
            if res < opts.rel_tol * 10.0 {
                break;
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if !(res < opts.rel_tol * 10.0) {
        return Err(Error::Solver {
            iterations: it,
            residual: res,
        });
    }
    // the exact solution is non-negative; clear round-off below zero
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok((
        TileGrid::from_vec(w, h, current.l(), v)?,
        SolveStats {
            iterations: it,
            rel_residual: res,
        },
    ))
}

/// Tile currents for instant map `p` (watts) at supply `vdd`.
pub fn instant_current(p: &TileGrid, vdd: f64) -> TileGrid {
    p.map(|x| x / vdd)
}

/// Label per tile: the largest drop over all instants of `maps`.
pub fn label_design(pdn: &PdnModel, maps: &PowerMapSet) -> Result<IrMap> {
    if maps.n == 0 {
        return Err(Error::Config("labels need at least one instant (N >= 1)".into()));
    }
    let solves: Vec<Result<TileGrid>> = maps
        .p_t
        .par_iter()
        .map(|p| solve_instant(pdn, &instant_current(p, pdn.vdd)))
        .collect();
    let mut label = TileGrid::zeros(maps.w(), maps.h(), maps.l());
    for s in solves {
        for (o, &v) in label.data_mut().iter_mut().zip(s?.data()) {
            *o = o.max(v);
        }
    }
    IrMap::new(label, pdn.vdd)
}
