// SPDX-License-Identifier: Apache-2.0

//! `irdrop`: command-line front end for generation, labeling, training,
//! prediction, evaluation, ablation, mitigation and full experiment runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use irdrop_core::decompose::{decompose, scale_by_resistance, DecomposeParams};
use irdrop_core::design::{load_design, load_map, load_maps, save_design, save_map, save_maps, tile_count, IrMap};
use irdrop_core::eval::{
    ablate_n, ablate_power_types, kendall_tau, mse, retile, roc_auc, roc_curve, write_roc_csv, SourceDesign,
};
use irdrop_core::maxcnn::{predict_design, train, LabeledDesign, MaxCnn, TrainConfig};
use irdrop_core::mitigate::{mitigate, MitigationConfig};
use irdrop_core::oracle::{check_regimes, generate_design, label_design, GenParams, PdnConfig};
use irdrop_core::pipeline::{label_source, run_pipeline, source_designs, PipelineConfig};
use irdrop_core::Error;

#[derive(Parser)]
#[command(name = "irdrop", version, about = "Tile-based dynamic IR drop estimation")]
struct Cli {
    /// Worker threads; all cores when unset.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic design.
    Gen(GenArgs),
    /// Decompose a design into tile power maps.
    Decompose(DecomposeArgs),
    /// Solve the resistive grid for the worst-case drop of every tile.
    Label(LabelArgs),
    /// Train a model on labeled design directories.
    Train(TrainArgs),
    /// Predict the drop map of a design from its power maps.
    Predict(PredictArgs),
    /// Score a prediction against a label map.
    Eval(EvalArgs),
    /// Leave-one-out sweeps over N and over the input power types.
    Ablate(AblateArgs),
    /// Strengthen the grid under predicted hotspots and re-solve.
    Mitigate(MitigateArgs),
    /// Run a whole experiment from one config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator parameters; defaults when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Verify cluster regimes on a 2 um grid with 100 instants.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    design: PathBuf,
    /// Tile edge, um.
    #[arg(long, default_value_t = 2.0)]
    l: f64,
    /// Number of instants.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Scale cell power by the grid resistance under each cell.
    #[arg(long)]
    prnet: bool,
    /// Grid used to assign resistances when cells carry none.
    #[arg(long)]
    pdn: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    design: PathBuf,
    /// Grid description; defaults when omitted.
    #[arg(long)]
    pdn: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    l: f64,
    /// Instants solved per design.
    #[arg(long, default_value_t = 100)]
    instants: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config; `designs` lists design directories holding
    /// `design.csv`, `maps/` and `ir.tgrid`, relative to the config file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch log as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Maximum-instant index per tile.
    #[arg(long)]
    argmax: Option<PathBuf>,
    #[arg(long, default_value_t = 0.9)]
    vdd: f64,
    /// Design name, checked against the model's training designs.
    #[arg(long, default_value = "")]
    name: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    label: PathBuf,
    /// Hotspot threshold, volts.
    #[arg(long)]
    threshold: f64,
    /// Coarsening factors.
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    granularity: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// ROC curve at granularity 1 as CSV.
    #[arg(long)]
    roc_csv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Experiment config; its designs, grid and training settings are used.
    #[arg(long)]
    config: PathBuf,
    /// Instant counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,20,50")]
    n: Vec<usize>,
    /// Compare the full input against the reduced variant instead.
    #[arg(long)]
    power_types: bool,
    /// Fold names to evaluate; every design when empty.
    #[arg(long, value_delimiter = ',')]
    held_out: Vec<String>,
    /// CSV table; a JSON copy is written alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MitigateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    pdn: Option<PathBuf>,
    #[arg(long, default_value_t = MitigationConfig::default().budget)]
    budget: usize,
    #[arg(long, default_value_t = MitigationConfig::default().strength)]
    strength: f64,
    #[arg(long, default_value_t = 2.0)]
    l: f64,
    #[arg(long, default_value_t = 100)]
    label_instants: usize,
    /// Hotspot threshold, volts; the design's own when unset.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    prnet: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    emit_heatmaps: bool,
    /// Decompose resistance-scaled power for the model input.
    #[arg(long)]
    prnet: bool,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn pdn_config(path: Option<&Path>) -> Result<PdnConfig> {
    Ok(match path {
        Some(p) => PdnConfig::from_toml(&read(p)?)?,
        None => PdnConfig::default(),
    })
}

fn gen(a: GenArgs) -> Result<()> {
    let params = match &a.params {
        Some(p) => GenParams::from_toml(&read(p)?)?,
        None => GenParams::default(),
    };
    let g = generate_design(&params)?;
    if a.check {
        check_regimes(&g, 2.0, 100)?;
    }
    save_design(&g.meta, &g.cells, &a.out)?;
    log::info!("{} cells in {} clusters", g.cells.len(), g.clusters.len());
    Ok(())
}

fn decompose_cmd(a: DecomposeArgs) -> Result<()> {
    let (meta, cells) = load_design(&a.design)?;
    let params = DecomposeParams::with_instants(a.l, a.n, meta.period)?;
    let maps = if a.prnet {
        let cells = match &a.pdn {
            Some(p) => {
                let (w, h) = (tile_count(meta.width, a.l), tile_count(meta.height, a.l));
                pdn_config(Some(p))?.build(w, h)?.assign_r_eff(&cells, a.l)
            }
            None => cells,
        };
        decompose(&scale_by_resistance(&cells)?, &meta, &params)?
    } else {
        decompose(&cells, &meta, &params)?
    };
    save_maps(&maps, &a.out)?;
    Ok(())
}

fn label_cmd(a: LabelArgs) -> Result<()> {
    let (meta, cells) = load_design(&a.design)?;
    let maps = decompose(&cells, &meta, &DecomposeParams::with_instants(a.l, a.instants, meta.period)?)?;
    let cfg = pdn_config(a.pdn.as_deref())?;
    if a.pdn.is_some() && cfg.vdd != meta.vdd {
        log::warn!("using the design supply {} V instead of {} V", meta.vdd, cfg.vdd);
    }
    let mut pdn = cfg.build(maps.w(), maps.h())?;
    pdn.vdd = meta.vdd;
    let ir = label_design(&pdn, &maps)?;
    save_map(ir.grid(), &a.out)?;
    log::info!("worst drop {:.3} mV", ir.grid().max() * 1e3);
    Ok(())
}

/// A design directory as written by the pipeline.
fn load_labeled(dir: &Path) -> Result<LabeledDesign> {
    let (meta, _) = load_design(dir.join("design.csv"))?;
    let maps = load_maps(dir.join("maps"))?;
    let label = IrMap::new(load_map(dir.join("ir.tgrid"))?, meta.vdd)?;
    Ok(LabeledDesign {
        name: meta.name,
        maps,
        label,
    })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = TrainConfig::from_toml(&read(&a.config)?)?;
    if cfg.designs.is_empty() {
        return Err(Error::Config("train config lists no designs".into()).into());
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let designs = cfg
        .designs
        .iter()
        .map(|d| load_labeled(&base.join(d)).with_context(|| format!("loading design directory {d}")))
        .collect::<Result<Vec<_>>>()?;
    let (model, report) = train(&designs, &cfg)?;
    model.save(&a.out)?;
    if let Some(r) = &a.report {
        write_json(r, &report)?;
    }
    log::info!("kept epoch {} of {}", report.best_epoch, report.epochs.len());
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let model = MaxCnn::load(&a.model)?;
    let maps = load_maps(&a.maps)?;
    model.check_unseen(&a.name, &maps)?;
    let pred = predict_design(&model, &maps, a.vdd)?;
    save_map(pred.ir_hat.grid(), &a.out)?;
    if let Some(p) = &a.argmax {
        save_map(&pred.argmax, p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GranularityReport {
    granularity: usize,
    tiles: usize,
    hotspots: usize,
    auc: Option<f64>,
    kendall_tau: Option<f64>,
    mse_mv2: f64,
}

fn optional(r: irdrop_core::Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(m)) => {
            log::warn!("{m}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let pred = load_map(&a.pred)?;
    let label = load_map(&a.label)?;
    pred.check_same_shape(&label)?;
    let mut rows = Vec::with_capacity(a.granularity.len());
    for &g in &a.granularity {
        let (p, l) = (retile(&pred, g)?, retile(&label, g)?);
        rows.push(GranularityReport {
            granularity: g,
            tiles: l.len(),
            hotspots: l.data().iter().filter(|&&v| v > a.threshold).count(),
            auc: optional(roc_auc(&p, &l, a.threshold))?,
            kendall_tau: optional(kendall_tau(&p, &l))?,
            mse_mv2: mse(&p, &l)?,
        });
    }
    if let Some(path) = &a.roc_csv {
        write_roc_csv(&roc_curve(&pred, &label, a.threshold)?, path)?;
    }
    match &a.out {
        Some(path) => write_json(path, &rows)?,
        None => println!("{}", serde_json::to_string_pretty(&rows)?),
    }
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let cfg = PipelineConfig::from_toml(&read(&a.config)?)?;
    if cfg.prnet {
        log::warn!("ablations decompose unscaled power; `prnet` is ignored");
    }
    let sources = source_designs(&cfg)?;
    let designs = sources
        .into_iter()
        .map(|(meta, cells)| {
            let (label, _, _) = label_source(&meta, &cells, &cfg)?;
            Ok(SourceDesign { meta, cells, label })
        })
        .collect::<irdrop_core::Result<Vec<_>>>()?;
    let held = a
        .held_out
        .iter()
        .map(|n| match designs.iter().position(|d| &d.meta.name == n) {
            Some(i) => Ok(i),
            None => bail!(Error::Config(format!("no design named `{n}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let table = if a.power_types {
        ablate_power_types(&designs, &cfg.train, cfg.l, &held)?
    } else {
        ablate_n(&designs, &a.n, &cfg.train, cfg.l, &held)?
    };
    if table.trend_warning {
        log::warn!("AUC at the largest N is below AUC at N = 0");
    }
    table.write_csv(&a.out)?;
    write_json(&a.out.with_extension("json"), &table)
}

fn mitigate_cmd(a: MitigateArgs) -> Result<()> {
    let model = MaxCnn::load(&a.model)?;
    let (meta, cells) = load_design(&a.design)?;
    let cfg = PipelineConfig {
        l: a.l,
        label_instants: a.label_instants,
        prnet: a.prnet,
        pdn: pdn_config(a.pdn.as_deref())?,
        train: TrainConfig {
            n: model.n,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    };
    let d = irdrop_core::pipeline::prepare_design(meta, cells, &cfg)?;
    model.check_unseen(&d.meta.name, &d.maps)?;
    let pred = predict_design(&model, &d.maps, d.meta.vdd)?;
    let thr = a.threshold.unwrap_or(d.meta.hotspot_threshold);
    let m = MitigationConfig {
        budget: a.budget,
        strength: a.strength,
    };
    let (_, report) = mitigate(&d.pdn, &d.label_maps, pred.ir_hat.grid(), thr, &m)?;
    write_json(&a.out, &report)
}

fn pipeline_cmd(a: PipelineArgs) -> Result<()> {
    let mut cfg = PipelineConfig::from_toml(&read(&a.config)?)?;
    cfg.emit_heatmaps |= a.emit_heatmaps;
    cfg.prnet |= a.prnet;
    let base = a.config.parent().unwrap_or(Path::new("."));
    for f in &mut cfg.design_files {
        *f = base.join(&*f);
    }
    let outcome = run_pipeline(&cfg, &a.out)?;
    for f in &outcome.folds {
        println!(
            "{}: auc_1x1 {} auc_5x5 {} (baseline {} / {})",
            f.held_out,
            fmt(f.report.auc_1x1),
            fmt(f.report.auc_5x5),
            fmt(f.baseline.auc_1x1),
            fmt(f.baseline.auc_5x5)
        );
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Decompose(a) => decompose_cmd(a),
        Cmd::Label(a) => label_cmd(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Predict(a) => predict_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Ablate(a) => ablate_cmd(a),
        Cmd::Mitigate(a) => mitigate_cmd(a),
        Cmd::Pipeline(a) => pipeline_cmd(a),
    }
}

/// 2 for bad input, 3 for numeric failure, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(c) if c.is_validation() => 2,
        Some(c) if c.is_numeric() => 3,
        _ => 1,
    }
}

/// The error chain joined by colons, skipping causes their parent already
/// prints.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            out = format!("{out}: {msg}");
        }
        last = msg;
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
