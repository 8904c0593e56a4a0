// SPDX-License-Identifier: Apache-2.0

//! Leave-one-out ablations over the number of instants and the input power
//! types. Each row retrains from scratch with the same seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{defined, retile, roc_auc};
use crate::decompose::{decompose, DecomposeParams};
use crate::design::{Cell, DesignMeta, IrMap, PowerMapSet};
use crate::error::{Error, Result};
use crate::maxcnn::{predict_design, train, InputVariant, LabeledDesign, TrainConfig};

/// A design with its cells kept, so maps can be rebuilt for any N.
#[derive(Debug, Clone)]
pub struct SourceDesign {
    pub meta: DesignMeta,
    pub cells: Vec<Cell>,
    pub label: IrMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    pub auc_1x1: Option<f64>,
    pub auc_5x5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub n: usize,
    pub variant: InputVariant,
    /// Means over folds where the metric is defined.
    pub auc_1x1: Option<f64>,
    pub auc_5x5: Option<f64>,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Set when the largest N scores a lower 1x1 AUC than N=0.
    pub trend_warning: bool,
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Leave-one-out over `maps`: for each held-out index in `held_out`, train
/// on all others and score the held-out design.
pub fn leave_one_out(
    designs: &[SourceDesign],
    maps: &[PowerMapSet],
    cfg: &TrainConfig,
    held_out: &[usize],
) -> Result<Vec<FoldResult>> {
    if designs.len() < 2 || designs.len() != maps.len() {
        return Err(Error::Config("leave-one-out needs at least two designs with maps".into()));
    }
    let mut out = Vec::with_capacity(held_out.len());
    for &t in held_out {
        let test = designs
            .get(t)
            .ok_or_else(|| Error::Index(format!("held-out design {t} of {}", designs.len())))?;
        let train_set: Vec<LabeledDesign> = designs
            .iter()
            .zip(maps)
            .enumerate()
            .filter(|(i, _)| *i != t)
            .map(|(_, (d, m))| LabeledDesign {
                name: d.meta.name.clone(),
                maps: m.clone(),
                label: d.label.clone(),
            })
            .collect();
        let (model, _) = train(&train_set, cfg)?;
        model.check_unseen(&test.meta.name, &maps[t])?;
        let pred = predict_design(&model, &maps[t], test.meta.vdd)?;
        let (p, l) = (pred.ir_hat.grid(), test.label.grid());
        let thr = test.meta.hotspot_threshold;
        out.push(FoldResult {
            held_out: test.meta.name.clone(),
            auc_1x1: defined(roc_auc(p, l, thr))?,
            auc_5x5: defined(roc_auc(&retile(p, 5)?, &retile(l, 5)?, thr))?,
        });
        log::info!("fold {}: {:?}", test.meta.name, out.last());
    }
    Ok(out)
}

fn build_maps(designs: &[SourceDesign], l: f64, n: usize) -> Result<Vec<PowerMapSet>> {
    designs
        .iter()
        .map(|d| decompose(&d.cells, &d.meta, &DecomposeParams::with_instants(l, n, d.meta.period)?))
        .collect()
}

fn row(designs: &[SourceDesign], l: f64, cfg: &TrainConfig, held_out: &[usize]) -> Result<AblationRow> {
    let maps = build_maps(designs, l, cfg.n)?;
    let folds = leave_one_out(designs, &maps, cfg, held_out)?;
    Ok(AblationRow {
        n: cfg.n,
        variant: cfg.variant,
        auc_1x1: mean_defined(folds.iter().map(|f| f.auc_1x1)),
        auc_5x5: mean_defined(folds.iter().map(|f| f.auc_5x5)),
        folds,
    })
}

/// One row per N, other settings from `cfg`. `held_out` selects the folds
/// (all designs when empty).
pub fn ablate_n(designs: &[SourceDesign], n_values: &[usize], cfg: &TrainConfig, l: f64, held_out: &[usize]) -> Result<AblationTable> {
    let all: Vec<usize> = (0..designs.len()).collect();
    let held_out = if held_out.is_empty() { &all[..] } else { held_out };
    let rows = n_values
        .iter()
        .map(|&n| row(designs, l, &TrainConfig { n, ..cfg.clone() }, held_out))
        .collect::<Result<Vec<_>>>()?;
    let at = |n: usize| rows.iter().find(|r| r.n == n).and_then(|r| r.auc_1x1);
    let largest = n_values.iter().copied().max();
    let trend_warning = match (at(0), largest.and_then(at)) {
        (Some(zero), Some(top)) => top < zero,
        _ => false,
    };
    Ok(AblationTable { rows, trend_warning })
}

/// Full five-map input against the reduced variant, at `cfg.n`.
pub fn ablate_power_types(designs: &[SourceDesign], cfg: &TrainConfig, l: f64, held_out: &[usize]) -> Result<AblationTable> {
    let all: Vec<usize> = (0..designs.len()).collect();
    let held_out = if held_out.is_empty() { &all[..] } else { held_out };
    let rows = [InputVariant::Full, InputVariant::Reduced]
        .into_iter()
        .map(|variant| row(designs, l, &TrainConfig { variant, ..cfg.clone() }, held_out))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable {
        rows,
        trend_warning: false,
    })
}

impl AblationTable {
    /// `n,variant,auc_1x1,auc_5x5` rows; undefined metrics are left empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(fmt)?;
        w.write_record(["n", "variant", "auc_1x1", "auc_5x5"]).map_err(fmt)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([r.n.to_string(), r.variant.name().to_string(), opt(r.auc_1x1), opt(r.auc_5x5)])
                .map_err(fmt)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
