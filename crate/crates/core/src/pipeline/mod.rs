// SPDX-License-Identifier: Apache-2.0

//! End-to-end experiment runner: generate, decompose, label, train, predict,
//! evaluate and optionally mitigate, writing every artifact under one
//! directory together with a hash manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decompose::{decompose, scale_by_resistance, DecomposeParams};
use crate::design::{load_design, load_map, load_maps, save_design, save_map, save_maps, Cell, DesignMeta, IrMap, PowerMapSet, TileGrid};
use crate::error::{Error, Result};
use crate::eval::{evaluate, roc_curve, write_roc_csv, EvalReport};
use crate::heatmap::write_heatmap_png;
use crate::maxcnn::{baseline_linear_train, predict_design, train, LabeledDesign, TrainConfig};
use crate::mitigate::{mitigate, MitigationConfig, MitigationReport};
use crate::oracle::{generate_design, label_design, GenParams, PdnConfig, PdnModel};


/// Contents of an experiment TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Tile edge length, micrometers.
    pub l: f64,
    /// Instants used for the oracle labels, independent of the model's N.
    pub label_instants: usize,
    /// Iterate the held-out design over every design.
    pub leave_one_out: bool,
    /// Held-out design name when `leave_one_out` is off.
    pub held_out: Option<String>,
    /// Scale cell power by the grid resistance under it before decomposing.
    pub prnet: bool,
    pub emit_heatmaps: bool,
    /// Pixels per tile in heatmaps.
    pub heatmap_scale: usize,
    pub pdn: PdnConfig,
    pub train: TrainConfig,
    pub mitigate: Option<MitigationConfig>,
    /// Synthetic designs to generate.
    pub designs: Vec<GenParams>,
    /// Existing cell tables, loaded after the synthetic designs.
    pub design_files: Vec<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            l: 2.0,
            label_instants: 100,
            leave_one_out: true,
            held_out: None,
            prnet: false,
            emit_heatmaps: false,
            heatmap_scale: 4,
            pdn: PdnConfig::default(),
            train: TrainConfig::default(),
            mitigate: None,
            designs: Vec::new(),
            design_files: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::Config(format!("tile size {} must be positive", self.l)));
        }
        if self.label_instants == 0 {
            return Err(Error::Config("labels need at least one instant".into()));
        }
        if self.designs.len() + self.design_files.len() < 2 {
            return Err(Error::Config("the pipeline needs at least two designs".into()));
        }
        if !self.leave_one_out && self.held_out.is_none() {
            return Err(Error::Config("set `held_out` or enable `leave_one_out`".into()));
        }
        Ok(())
    }
}

/// sha256 of every artifact, keyed by path relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    /// Hashes every file below `root` except the top-level manifest.
    pub fn from_dir(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut paths = Vec::new();
        collect_files(root, root, &mut paths)?;
        let mut files = BTreeMap::new();
        for p in paths {
            let rel = p.strip_prefix(root).expect("walked below root").to_string_lossy().replace('\\', "/");
            if rel == MANIFEST_FILE {
                continue;
            }
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            files.insert(rel, sha256_hex(&bytes));
        }
        Ok(Manifest { files })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// One design after the data stages.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    pub meta: DesignMeta,
    pub cells: Vec<Cell>,
    /// Model input maps at the training N.
    pub maps: PowerMapSet,
    pub label: IrMap,
    pub pdn: PdnModel,
    /// Maps at the label sampling, for re-solving after mitigation.
    pub label_maps: PowerMapSet,
}

/// Generated designs followed by the listed cell tables. Names must be unique.
pub fn source_designs(cfg: &PipelineConfig) -> Result<Vec<(DesignMeta, Vec<Cell>)>> {
    let mut sources = Vec::with_capacity(cfg.designs.len() + cfg.design_files.len());
    for p in &cfg.designs {
        let g = generate_design(p).map_err(|e| e.in_stage("gen"))?;
        sources.push((g.meta, g.cells));
    }
    for f in &cfg.design_files {
        sources.push(load_design(f).map_err(|e| e.in_stage("gen"))?);
    }
    let mut names: Vec<&str> = sources.iter().map(|(m, _)| m.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("design name `{}` appears twice", w[0])));
    }
    Ok(sources)
}

/// Oracle labels for one design on the configured grid, with the maps and
/// grid they came from.
pub fn label_source(meta: &DesignMeta, cells: &[Cell], cfg: &PipelineConfig) -> Result<(IrMap, PowerMapSet, PdnModel)> {
    let params = DecomposeParams::with_instants(cfg.l, cfg.label_instants, meta.period)?;
    let maps = decompose(cells, meta, &params).map_err(|e| e.in_stage("decompose"))?;
    let mut pdn = cfg.pdn.build(maps.w(), maps.h()).map_err(|e| e.in_stage("label"))?;
    // the design's own supply sets the currents
    pdn.vdd = meta.vdd;
    let label = label_design(&pdn, &maps).map_err(|e| e.in_stage("label"))?;
    Ok((label, maps, pdn))
}

/// Builds maps and labels for one design. Labels always come from the
/// unscaled cell power; resistance scaling only changes the model input.
pub fn prepare_design(meta: DesignMeta, cells: Vec<Cell>, cfg: &PipelineConfig) -> Result<PreparedDesign> {
    let (label, label_maps, pdn) = label_source(&meta, &cells, cfg)?;
    let params = DecomposeParams::with_instants(cfg.l, cfg.train.n, meta.period)?;
    let maps = if cfg.prnet {
        let scaled = scale_by_resistance(&pdn.assign_r_eff(&cells, cfg.l))?;
        decompose(&scaled, &meta, &params)
    } else {
        decompose(&cells, &meta, &params)
    }
    .map_err(|e| e.in_stage("decompose"))?;
    Ok(PreparedDesign {
        meta,
        cells,
        maps,
        label,
        pdn,
        label_maps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub held_out: String,
    pub trained_on: Vec<String>,
    pub report: EvalReport,
    pub baseline: EvalReport,
    pub mitigation: Option<MitigationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub folds: Vec<FoldOutcome>,
    pub manifest: Manifest,
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    train_l1_mv: f64,
    val_l1_mv: Option<f64>,
}

#[derive(Serialize)]
struct FoldManifest<'a> {
    held_out: &'a str,
    /// Training design name and sha256 of its cell table.
    train_designs: Vec<(&'a str, String)>,
}

fn heatmaps(dir: &Path, d: &PreparedDesign, pred: &TileGrid, argmax: &TileGrid, scale: usize) -> Result<()> {
    let hm = dir.join("heatmaps");
    mkdir(&hm)?;
    write_heatmap_png(&d.maps.p_all, scale, hm.join("p_all.png"))?;
    let n = d.maps.n;
    // first, middle and last instants
    let mut picks = vec![1, n.div_ceil(2), n];
    picks.dedup();
    for j in picks.into_iter().filter(|&j| j >= 1) {
        write_heatmap_png(d.maps.instant(j)?, scale, hm.join(format!("p_t_{j:04}.png")))?;
    }
    write_heatmap_png(d.label.grid(), scale, hm.join("ir_label.png"))?;
    write_heatmap_png(pred, scale, hm.join("ir_pred.png"))?;
    write_heatmap_png(argmax, scale, hm.join("argmax.png"))
}

/// Runs every stage and writes the artifacts under `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: impl AsRef<Path>) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = out.as_ref();
    mkdir(out)?;
    write_json(&out.join("config.json"), cfg)?;

    let sources = source_designs(cfg)?;
    let mut designs = Vec::with_capacity(sources.len());
    let mut cell_hashes = Vec::with_capacity(sources.len());
    for (meta, cells) in sources {
        let dir = out.join("designs").join(&meta.name);
        mkdir(&dir)?;
        let csv = dir.join("design.csv");
        save_design(&meta, &cells, &csv).map_err(|e| e.in_stage("gen"))?;
        cell_hashes.push(sha256_hex(&fs::read(&csv).map_err(|e| Error::io(&csv, e))?));
        let mut d = prepare_design(meta, cells, cfg)?;
        save_maps(&d.maps, dir.join("maps")).map_err(|e| e.in_stage("decompose"))?;
        save_map(d.label.grid(), dir.join("ir.tgrid")).map_err(|e| e.in_stage("label"))?;
        // train on what was written, so models built from the saved
        // directories match the pipeline's
        d.maps = load_maps(dir.join("maps")).map_err(|e| e.in_stage("decompose"))?;
        d.label = IrMap::new(load_map(dir.join("ir.tgrid"))?, d.meta.vdd).map_err(|e| e.in_stage("label"))?;
        log::info!("prepared {} ({}x{} tiles)", d.meta.name, d.maps.w(), d.maps.h());
        designs.push(d);
    }

    let held: Vec<usize> = if cfg.leave_one_out {
        (0..designs.len()).collect()
    } else {
        let name = cfg.held_out.as_deref().expect("validated");
        vec![designs
            .iter()
            .position(|d| d.meta.name == name)
            .ok_or_else(|| Error::Config(format!("held-out design `{name}` is not in the design list")))?]
    };

    let mut folds = Vec::with_capacity(held.len());
    for t in held {
        let test = &designs[t];
        let dir = out.join("folds").join(&test.meta.name);
        mkdir(&dir)?;
        let train_set: Vec<LabeledDesign> = designs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != t)
            .map(|(_, d)| LabeledDesign {
                name: d.meta.name.clone(),
                maps: d.maps.clone(),
                label: d.label.clone(),
            })
            .collect();
        let trained_on: Vec<String> = train_set.iter().map(|d| d.name.clone()).collect();
        write_json(
            &dir.join("fold.json"),
            &FoldManifest {
                held_out: &test.meta.name,
                train_designs: (0..designs.len())
                    .filter(|&i| i != t)
                    .map(|i| (designs[i].meta.name.as_str(), cell_hashes[i].clone()))
                    .collect(),
            },
        )?;

        let (model, report) = train(&train_set, &cfg.train).map_err(|e| e.in_stage("train"))?;
        model.save(dir.join("model.ckpt")).map_err(|e| e.in_stage("train"))?;
        let log: Vec<EpochRecord> = report
            .epochs
            .iter()
            .map(|e| EpochRecord {
                epoch: e.epoch,
                train_l1_mv: e.train_l1_mv,
                val_l1_mv: e.val_l1_mv,
            })
            .collect();
        write_json(&dir.join("train_log.json"), &log)?;

        model.check_unseen(&test.meta.name, &test.maps).map_err(|e| e.in_stage("predict"))?;
        let pred = predict_design(&model, &test.maps, test.meta.vdd).map_err(|e| e.in_stage("predict"))?;
        save_map(pred.ir_hat.grid(), dir.join("ir_hat.tgrid"))?;
        save_map(&pred.argmax, dir.join("argmax.tgrid"))?;

        let thr = test.meta.hotspot_threshold;
        let (p, l) = (pred.ir_hat.grid(), test.label.grid());
        let eval = evaluate(&test.meta.name, p, l, thr).map_err(|e| e.in_stage("eval"))?;
        write_json(&dir.join("report.json"), &eval)?;
        match roc_curve(p, l, thr) {
            Ok(points) => write_roc_csv(&points, dir.join("roc.csv"))?,
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e.in_stage("eval")),
        }
        let pairs: Vec<(&PowerMapSet, &IrMap)> = train_set.iter().map(|d| (&d.maps, &d.label)).collect();
        let base = baseline_linear_train(&pairs).map_err(|e| e.in_stage("train"))?;
        let base_pred = base.predict(&test.maps, test.meta.vdd)?;
        let baseline = evaluate(&test.meta.name, base_pred.grid(), l, thr).map_err(|e| e.in_stage("eval"))?;
        write_json(&dir.join("baseline_report.json"), &baseline)?;

        if cfg.emit_heatmaps {
            heatmaps(&dir, test, p, &pred.argmax, cfg.heatmap_scale).map_err(|e| e.in_stage("heatmaps"))?;
        }

        let mitigation = match &cfg.mitigate {
            Some(m) => {
                let (_, rep) = mitigate(&test.pdn, &test.label_maps, p, thr, m).map_err(|e| e.in_stage("mitigate"))?;
                write_json(&dir.join("mitigation.json"), &rep)?;
                Some(rep)
            }
            None => None,
        };
        log::info!("fold {}: {:?}", test.meta.name, eval);
        folds.push(FoldOutcome {
            held_out: test.meta.name.clone(),
            trained_on,
            report: eval,
            baseline,
            mitigation,
        });
    }
    write_json(&out.join("summary.json"), &folds)?;
    let manifest = Manifest::from_dir(out)?;
    manifest.write(out.join(MANIFEST_FILE))?;
    Ok(PipelineOutcome { folds, manifest })
}
