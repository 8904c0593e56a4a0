// SPDX-License-Identifier: Apache-2.0

//! Synthetic placed designs: standard-cell rows of background logic plus
//! Gaussian clusters of heavier cells whose arrival windows are either
//! aligned to a common instant or spread across the cycle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decompose::{decompose, DecomposeParams};
use crate::design::{Cell, DesignMeta, DEFAULT_HOTSPOT_FRACTION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub seed: u64,
    pub name: String,
    /// Die width and height, micrometers.
    pub width: f64,
    pub height: f64,
    /// Clock period, seconds.
    pub period: f64,
    pub vdd: f64,
    /// Hotspot threshold as a fraction of vdd.
    pub hotspot_fraction: f64,
    pub cells: usize,
    pub clusters: usize,
    /// Peak cluster cell density, cells per square micrometer. A cluster of
    /// radius sigma holds `2 pi sigma^2` times this many cells, taken from
    /// the total cell count.
    pub cluster_density: f64,
    /// Probability that a cluster switches synchronously.
    pub sync_probability: f64,
    /// Cluster radius (Gaussian sigma) range, micrometers.
    pub cluster_sigma: (f64, f64),
    /// Per-cluster power multiplier range.
    pub cluster_intensity: (f64, f64),
    /// Alignment grid for synchronous clusters: centers sit on multiples of
    /// `period / sync_grid`.
    pub sync_grid: usize,
    /// Arrival-window width range for cluster cells, fraction of the period.
    pub cluster_window: (f64, f64),
    /// Arrival-window width range for background cells, fraction of the period.
    pub background_window: (f64, f64),
    /// Toggle rate range.
    pub toggle: (f64, f64),
    /// Nominal switching power of one cell, watts.
    pub cell_power: f64,
    /// Standard-cell row height, micrometers.
    pub row_height: f64,
    /// Cell width range, micrometers.
    pub cell_width: (f64, f64),
    /// Replace toggle rates by a sampled 0/1 activation pattern.
    pub vector: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            seed: 0,
            name: "synthetic".into(),
            width: 256.0,
            height: 256.0,
            period: 1e-9,
            vdd: 0.9,
            hotspot_fraction: DEFAULT_HOTSPOT_FRACTION,
            cells: 60_000,
            clusters: 16,
            cluster_density: 0.8,
            sync_probability: 0.5,
            cluster_sigma: (2.0, 30.0),
            cluster_intensity: (1.0, 8.0),
            sync_grid: 20,
            cluster_window: (0.02, 0.06),
            background_window: (0.05, 0.3),
            toggle: (0.1, 0.5),
            cell_power: 2.5e-6,
            row_height: 0.6,
            cell_width: (0.4, 1.6),
            vector: false,
        }
    }
}

impl GenParams {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("generator params: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("width", self.width),
            ("height", self.height),
            ("period", self.period),
            ("vdd", self.vdd),
            ("cell_power", self.cell_power),
            ("row_height", self.row_height),
            ("cluster_density", self.cluster_density),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.cells == 0 {
            return bad("cell count must be positive".into());
        }
        if self.sync_grid == 0 {
            return bad("sync_grid must be positive".into());
        }
        for (name, v) in [
            ("sync_probability", self.sync_probability),
            ("hotspot_fraction", self.hotspot_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        for (name, (lo, hi), upper) in [
            ("toggle", self.toggle, 1.0),
            ("cluster_window", self.cluster_window, 1.0),
            ("background_window", self.background_window, 1.0),
            ("cluster_sigma", self.cluster_sigma, f64::INFINITY),
            ("cluster_intensity", self.cluster_intensity, f64::INFINITY),
            ("cell_width", self.cell_width, f64::INFINITY),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi <= upper) {
                return bad(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        if self.cell_width.0 <= 0.0 {
            return bad("cells need positive width".into());
        }
        if self.cell_width.1 > self.width || self.row_height > self.height {
            return bad("cells do not fit on the die".into());
        }
        Ok(())
    }
}

/// How a cluster's arrival windows are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every window contains the cluster's common instant.
    Synchronous,
    /// Window centers spread uniformly over the cycle.
    Dispersed,
}

/// Construction record of one cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterInfo {
    pub center: (f64, f64),
    pub sigma: f64,
    pub intensity: f64,
    pub regime: Regime,
    /// Common instant of a synchronous cluster, seconds.
    pub sync_time: Option<f64>,
    /// Ids of the cluster's cells.
    pub cell_ids: std::ops::Range<u64>,
}

#[derive(Debug, Clone)]
pub struct GeneratedDesign {
    pub meta: DesignMeta,
    pub cells: Vec<Cell>,
    pub clusters: Vec<ClusterInfo>,
}

fn range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Arrival window of the given width centered at `c`, shifted to stay
/// inside `[0, period]`.
fn window(c: f64, width: f64, period: f64) -> (f64, f64) {
    let width = width.min(period);
    let lo = (c - width / 2.0).clamp(0.0, period - width);
    (lo, (lo + width).min(period))
}

fn push_cell(cells: &mut Vec<Cell>, p: &GenParams, rng: &mut ChaCha8Rng, x0: f64, y0: f64, w: f64, scale: f64, win: (f64, f64)) {
    let mut r_tog = range(rng, p.toggle);
    if p.vector {
        r_tog = if rng.gen::<f64>() < r_tog { 1.0 } else { 0.0 };
    }
    let pw = p.cell_power * scale;
    cells.push(Cell {
        id: cells.len() as u64,
        p_i: pw * rng.gen_range(0.3..0.8),
        p_s: pw * rng.gen_range(0.6..1.4),
        p_l: pw * rng.gen_range(0.02..0.08),
        r_tog,
        t_min: win.0,
        t_max: win.1,
        x_min: x0,
        x_max: x0 + w,
        y_min: y0,
        y_max: y0 + p.row_height,
        r_eff: None,
    });
}

pub fn generate_design(p: &GenParams) -> Result<GeneratedDesign> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let sigmas: Vec<f64> = (0..p.clusters).map(|_| range(&mut rng, p.cluster_sigma)).collect();
    let counts: Vec<usize> = sigmas
        .iter()
        .map(|s| (p.cluster_density * std::f64::consts::TAU * s * s).round() as usize)
        .collect();
    let n_cluster_cells: usize = counts.iter().sum();
    if n_cluster_cells > p.cells {
        return Err(Error::Generation(format!(
            "clusters need {n_cluster_cells} cells but the design has {}",
            p.cells
        )));
    }
    let n_background = p.cells - n_cluster_cells;

    // sizes first so density can be checked before placement
    let row_h = p.row_height;
    let widths: Vec<f64> = (0..p.cells).map(|_| range(&mut rng, p.cell_width)).collect();
    let area: f64 = widths.iter().sum::<f64>() * row_h;
    if area > p.width * p.height {
        return Err(Error::Generation(format!(
            "{} cells cover {area:.1} um^2, more than the {:.1} um^2 die",
            p.cells,
            p.width * p.height
        )));
    }

    let t = p.period;
    let mut cells = Vec::with_capacity(p.cells);

    // background: evenly filled rows with jittered slots
    let rows = ((p.height / row_h).floor() as usize).max(1);
    let per_row = n_background.div_ceil(rows).max(1);
    let slot = p.width / per_row as f64;
    for i in 0..n_background {
        let (row, k) = (i / per_row, i % per_row);
        let row = row % rows;
        let w = widths[cells.len()].min(slot);
        let x0 = (k as f64 * slot + rng.gen_range(0.0..=(slot - w))).clamp(0.0, p.width - w);
        let y0 = row as f64 * row_h;
        let c = rng.gen_range(0.0..t);
        let win = window(c, range(&mut rng, p.background_window) * t, t);
        push_cell(&mut cells, p, &mut rng, x0, y0, w, 1.0, win);
    }

    let mut clusters = Vec::with_capacity(p.clusters);
    for ci in 0..p.clusters {
        let (count, sigma) = (counts[ci], sigmas[ci]);
        let margin = sigma.min(p.width / 4.0);
        let cx = rng.gen_range(margin..=(p.width - margin));
        let cy = rng.gen_range(margin.min(p.height / 4.0)..=(p.height - margin.min(p.height / 4.0)));
        let intensity = range(&mut rng, p.cluster_intensity);
        // the first two clusters cover both regimes
        let regime = match ci {
            0 => Regime::Synchronous,
            1 => Regime::Dispersed,
            _ if rng.gen::<f64>() < p.sync_probability => Regime::Synchronous,
            _ => Regime::Dispersed,
        };
        let sync_time = (regime == Regime::Synchronous).then(|| {
            let m = rng.gen_range(1..p.sync_grid.max(2));
            m as f64 * t / p.sync_grid as f64
        });
        let first = cells.len() as u64;
        let nx = Normal::new(cx, sigma).expect("positive sigma");
        let ny = Normal::new(cy, sigma).expect("positive sigma");
        for _ in 0..count {
            let w = widths[cells.len()];
            let x0 = (nx.sample(&mut rng) - w / 2.0).clamp(0.0, p.width - w);
            let y0 = (ny.sample(&mut rng) - row_h / 2.0).clamp(0.0, p.height - row_h);
            let width = range(&mut rng, p.cluster_window) * t;
            let win = match sync_time {
                Some(ts) => {
                    // keep the common instant strictly inside the window
                    let off = rng.gen_range(-0.4..0.4) * width;
                    window(ts + off, width, t)
                }
                None => window(rng.gen_range(0.0..t), width, t),
            };
            push_cell(&mut cells, p, &mut rng, x0, y0, w, intensity, win);
        }
        clusters.push(ClusterInfo {
            center: (cx, cy),
            sigma,
            intensity,
            regime,
            sync_time,
            cell_ids: first..cells.len() as u64,
        });
    }

    let meta = DesignMeta {
        name: p.name.clone(),
        width: p.width,
        height: p.height,
        period: p.period,
        cell_count: cells.len(),
        vdd: p.vdd,
        hotspot_threshold: p.hotspot_fraction * p.vdd,
    };
    meta.validate()?;
    for c in &cells {
        c.validate(&meta)?;
    }
    Ok(GeneratedDesign { meta, cells, clusters })
}

/// Peak-instant share of one cluster: `max_j sum P_t[j] / sum P_sca` over
/// the tiles its own cells cover, decomposed with tile size `l` and `n`
/// instants.
pub fn cluster_peak_share(g: &GeneratedDesign, cluster: usize, l: f64, n: usize) -> Result<f64> {
    let info = g
        .clusters
        .get(cluster)
        .ok_or_else(|| Error::Index(format!("cluster {cluster} of {}", g.clusters.len())))?;
    let own: Vec<Cell> = g.cells[info.cell_ids.start as usize..info.cell_ids.end as usize].to_vec();
    let mut meta = g.meta.clone();
    meta.cell_count = own.len();
    let maps = decompose(&own, &meta, &DecomposeParams::with_instants(l, n, meta.period)?)?;
    let sca = maps.p_sca.sum();
    if sca <= 0.0 {
        return Ok(0.0);
    }
    Ok(maps.p_t.iter().map(|p| p.sum()).fold(0.0, f64::max) / sca)
}

/// Checks that synchronous clusters peak above 0.9 of their scaled power
/// and dispersed ones stay below 0.5.
pub fn check_regimes(g: &GeneratedDesign, l: f64, n: usize) -> Result<()> {
    for (i, c) in g.clusters.iter().enumerate() {
        if c.cell_ids.end - c.cell_ids.start < 8 {
            continue;
        }
        let share = cluster_peak_share(g, i, l, n)?;
        let ok = match c.regime {
            Regime::Synchronous => share > 0.9,
            Regime::Dispersed => share < 0.5,
        };
        if !ok {
            return Err(Error::Generation(format!(
                "cluster {i} ({:?}) peaks at {share:.3} of its scaled power",
                c.regime
            )));
        }
    }
    Ok(())
}
