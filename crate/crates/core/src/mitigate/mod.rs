// SPDX-License-Identifier: Apache-2.0

//! Predicted-hotspot repair: strengthen the grid around the worst predicted
//! tiles, re-solve and compare.

use serde::{Deserialize, Serialize};

use crate::design::{IrMap, PowerMapSet, TileGrid};
use crate::error::{Error, Result};
use crate::eval::retile;
use crate::oracle::{label_design, PdnModel};

#[cfg(test)]
mod tests;

/// Tiles predicted above `threshold`, worst first, at most `budget`.
/// Equal predictions are ordered by row, then column.
pub fn select_hotspots(pred: &TileGrid, threshold: f64, budget: usize) -> Vec<(usize, usize)> {
    let mut hot: Vec<usize> = (0..pred.len()).filter(|&i| pred.data()[i] > threshold).collect();
    // indices are row-major, so the index tiebreak is (y, x)
    hot.sort_by(|&a, &b| pred.data()[b].total_cmp(&pred.data()[a]).then(a.cmp(&b)));
    hot.truncate(budget);
    hot.into_iter().map(|i| (i % pred.w(), i / pred.w())).collect()
}

/// Scales every conductance attached to the given tiles, grid edges and
/// supply ties alike, by `1 + strength`.
pub fn enhance_pg(pdn: &PdnModel, tiles: &[(usize, usize)], strength: f64) -> Result<PdnModel> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::Config(format!("enhancement strength {strength} must be non-negative")));
    }
    if let Some(&(x, y)) = tiles.iter().find(|&&(x, y)| x >= pdn.w() || y >= pdn.h()) {
        return Err(Error::Index(format!("tile ({x}, {y}) outside {}x{} grid", pdn.w(), pdn.h())));
    }
    let f = 1.0 + strength;
    Ok(pdn.scale_incident(tiles, f).scale_pads(tiles, f))
}

/// Relative rise of the summed conductance of all branches (grid edges and
/// supply ties); equal to the rise of their mean.
pub fn conductance_increase(before: &PdnModel, after: &PdnModel) -> f64 {
    let total = |p: &PdnModel| p.total_edge_conductance() + p.total_pad_conductance();
    total(after) / total(before) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub threshold: f64,
    pub enhanced_tiles: usize,
    pub strength: f64,
    /// Relative rise of total branch conductance.
    pub conductance_increase: f64,
    /// Relative rise of total grid-edge conductance alone.
    pub edge_conductance_increase: f64,
    /// Tiles above the threshold.
    pub violated_before: usize,
    pub violated_after: usize,
    /// 5x5 tiles whose mean drop exceeds the threshold.
    pub hotspots_before: usize,
    pub hotspots_after: usize,
    /// Mean drop over all tiles, mV.
    pub all_ir_before_mv: f64,
    pub all_ir_after_mv: f64,
    pub all_ir_improvement_mv: f64,
    /// Mean drop over the tiles violated before repair, mV; `None` when
    /// there were none.
    pub hotspot_ir_before_mv: Option<f64>,
    pub hotspot_ir_after_mv: Option<f64>,
    pub hotspot_ir_improvement_mv: Option<f64>,
}

fn count_above(g: &TileGrid, threshold: f64) -> usize {
    g.data().iter().filter(|&&v| v > threshold).count()
}

/// Aggregates before/after label maps. `pdn_before`/`pdn_after` feed the
/// conductance columns.
pub fn mitigation_report(
    before: &IrMap,
    after: &IrMap,
    threshold: f64,
    enhanced: &[(usize, usize)],
    strength: f64,
    pdn_before: &PdnModel,
    pdn_after: &PdnModel,
) -> Result<MitigationReport> {
    let (b, a) = (before.grid(), after.grid());
    b.check_same_shape(a)?;
    let hot: Vec<usize> = (0..b.len()).filter(|&i| b.data()[i] > threshold).collect();
    let mean_over = |g: &TileGrid| (!hot.is_empty()).then(|| hot.iter().map(|&i| g.data()[i]).sum::<f64>() / hot.len() as f64 * 1e3);
    let (hb, ha) = (mean_over(b), mean_over(a));
    let (all_b, all_a) = (b.mean() * 1e3, a.mean() * 1e3);
    Ok(MitigationReport {
        threshold,
        enhanced_tiles: enhanced.len(),
        strength,
        conductance_increase: conductance_increase(pdn_before, pdn_after),
        edge_conductance_increase: pdn_after.total_edge_conductance() / pdn_before.total_edge_conductance() - 1.0,
        violated_before: hot.len(),
        violated_after: count_above(a, threshold),
        hotspots_before: count_above(&retile(b, 5)?, threshold),
        hotspots_after: count_above(&retile(a, 5)?, threshold),
        all_ir_before_mv: all_b,
        all_ir_after_mv: all_a,
        all_ir_improvement_mv: all_b - all_a,
        hotspot_ir_before_mv: hb,
        hotspot_ir_after_mv: ha,
        hotspot_ir_improvement_mv: hb.zip(ha).map(|(x, y)| x - y),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationConfig {
    /// Largest number of tiles to enhance. At the default strength each
    /// enhanced tile adds about 0.00065% to the total conductance, so the
    /// default keeps the rise under 0.5%.
    pub budget: usize,
    pub strength: f64,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        MitigationConfig {
            budget: 750,
            strength: 0.1,
        }
    }
}

/// Full single pass: select from `pred`, enhance, relabel `label_maps` on
/// both grids and report.
pub fn mitigate(
    pdn: &PdnModel,
    label_maps: &PowerMapSet,
    pred: &TileGrid,
    threshold: f64,
    cfg: &MitigationConfig,
) -> Result<(PdnModel, MitigationReport)> {
    let tiles = select_hotspots(pred, threshold, cfg.budget);
    let enhanced = enhance_pg(pdn, &tiles, cfg.strength)?;
    let before = label_design(pdn, label_maps)?;
    let after = label_design(&enhanced, label_maps)?;
    let report = mitigation_report(&before, &after, threshold, &tiles, cfg.strength, pdn, &enhanced)?;
    Ok((enhanced, report))
}
