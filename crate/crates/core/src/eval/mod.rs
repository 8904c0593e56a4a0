// SPDX-License-Identifier: Apache-2.0

//! Accuracy metrics on tile maps: hotspot ROC-AUC at several granularities,
//! Kendall rank correlation and mean squared error.

use serde::{Deserialize, Serialize};

use crate::design::TileGrid;
use crate::error::{Error, Result};

mod ablate;

pub use ablate::{ablate_n, ablate_power_types, leave_one_out, AblationRow, AblationTable, FoldResult, SourceDesign};

/// Mean-pools `grid` over `factor x factor` blocks; edge blocks average only
/// the tiles they contain.
pub fn retile(grid: &TileGrid, factor: usize) -> Result<TileGrid> {
    if factor == 0 {
        return Err(Error::Config("retile factor must be at least 1".into()));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let (w, h) = (grid.w(), grid.h());
    let (cw, ch) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut sum = vec![0.0; cw * ch];
    let mut count = vec![0usize; cw * ch];
    for y in 0..h {
        for x in 0..w {
            let c = (y / factor) * cw + x / factor;
            sum[c] += grid.get(x, y);
            count[c] += 1;
        }
    }
    let v = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
    TileGrid::from_vec(cw, ch, grid.l() * factor as f64, v)
}

fn check_pair(pred: &TileGrid, label: &TileGrid) -> Result<()> {
    pred.check_same_shape(label)?;
    for (what, g) in [("prediction", pred), ("label", label)] {
        if !g.is_finite() {
            return Err(Error::validation(what, "map holds non-finite values"));
        }
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // positions i..j hold one tie group, ranks i+1..=j
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Probability that a random hotspot tile (label above `threshold`)
/// outscores a random cold tile, ties counting one half.
pub fn roc_auc(pred: &TileGrid, label: &TileGrid, threshold: f64) -> Result<f64> {
    check_pair(pred, label)?;
    auc_from_scores(pred.data(), &label.data().iter().map(|&v| v > threshold).collect::<Vec<_>>())
}

/// Rank-based AUC of `scores` against boolean classes.
pub fn auc_from_scores(scores: &[f64], hot: &[bool]) -> Result<f64> {
    if scores.len() != hot.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), hot.len())));
    }
    let n_hot = hot.iter().filter(|&&h| h).count();
    let n_cold = hot.len() - n_hot;
    if n_hot == 0 || n_cold == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes; got {n_hot} hotspot and {n_cold} cold tiles"
        )));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(hot).filter(|(_, &h)| h).map(|(r, _)| r).sum();
    let (nh, nc) = (n_hot as f64, n_cold as f64);
    Ok((rank_sum - nh * (nh + 1.0) / 2.0) / (nh * nc))
}

/// One operating point of the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Tiles scoring at least this value are flagged.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from the strictest cutoff to the loosest, starting at (0, 0).
pub fn roc_curve(pred: &TileGrid, label: &TileGrid, threshold: f64) -> Result<Vec<RocPoint>> {
    check_pair(pred, label)?;
    let hot: Vec<bool> = label.data().iter().map(|&v| v > threshold).collect();
    let n_hot = hot.iter().filter(|&&h| h).count();
    let n_cold = hot.len() - n_hot;
    if n_hot == 0 || n_cold == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let s = pred.data();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let v = s[order[i]];
        while i < order.len() && s[order[i]] == v {
            if hot[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: v,
            fpr: fp as f64 / n_cold as f64,
            tpr: tp as f64 / n_hot as f64,
        });
    }
    Ok(out)
}

/// Writes `threshold,fpr,tpr` rows.
pub fn write_roc_csv(points: &[RocPoint], path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["threshold", "fpr", "tpr"]).map_err(|e| Error::Format(e.to_string()))?;
    for p in points {
        w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(io)
}

/// Counts swaps needed to sort `v` ascending (merge sort), sorting it.
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Pairs tied within each run of equal values in a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        total += t * (t - 1) / 2;
        i = j;
    }
    total
}

/// Kendall tau-b between two equally long samples, in O(n log n).
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedMetric("rank correlation needs at least two tiles".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::validation("rank correlation", "non-finite value"));
    }
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = n * (n - 1) / 2;
    let tx = tied_pairs(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let txy = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = count_inversions(&mut ys, &mut buf);
    let ty = tied_pairs(&ys);
    let (dx, dy) = (n0 - tx, n0 - ty);
    if dx == 0 || dy == 0 {
        return Err(Error::UndefinedMetric("rank correlation of a constant map".into()));
    }
    // concordant minus discordant over pairs untied in both coordinates
    let num = n0 as i128 - tx as i128 - ty as i128 + txy as i128 - 2 * swaps as i128;
    Ok(num as f64 / ((dx as f64) * (dy as f64)).sqrt())
}

pub fn kendall_tau(pred: &TileGrid, label: &TileGrid) -> Result<f64> {
    check_pair(pred, label)?;
    kendall_tau_b(pred.data(), label.data())
}

/// Mean squared error in mV^2 for maps in volts.
pub fn mse(pred: &TileGrid, label: &TileGrid) -> Result<f64> {
    check_pair(pred, label)?;
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("MSE of an empty map".into()));
    }
    let s: f64 = pred.data().iter().zip(label.data()).map(|(a, b)| ((a - b) * 1e3).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

/// Metrics of one prediction against its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub design: String,
    pub threshold: f64,
    pub hotspots: usize,
    pub tiles: usize,
    /// `None` when the label map has a single class at that granularity.
    pub auc_1x1: Option<f64>,
    pub auc_5x5: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub mse_mv2: f64,
    pub mean_abs_error_mv: f64,
}

pub(crate) fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn evaluate(design: &str, pred: &TileGrid, label: &TileGrid, threshold: f64) -> Result<EvalReport> {
    check_pair(pred, label)?;
    let mae = pred.data().iter().zip(label.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len().max(1) as f64;
    Ok(EvalReport {
        design: design.to_string(),
        threshold,
        hotspots: label.data().iter().filter(|&&v| v > threshold).count(),
        tiles: label.len(),
        auc_1x1: defined(roc_auc(pred, label, threshold))?,
        auc_5x5: defined(roc_auc(&retile(pred, 5)?, &retile(label, 5)?, threshold))?,
        kendall_tau: defined(kendall_tau(pred, label))?,
        mse_mv2: mse(pred, label)?,
        mean_abs_error_mv: mae * 1e3,
    })
}
