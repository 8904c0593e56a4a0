// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: one test per criterion, each writing a PASS/FAIL line
//! straight to stderr so it shows up even when the harness captures output.
//!
//! The heavy criteria share one four-design leave-one-out run at N = 20 and
//! are serialized so their timings do not overlap.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use irdrop_core::decompose::{decompose, overlap_tiles, DecomposeParams, TileSpan};
use irdrop_core::design::{Cell, DesignMeta, PowerMapSet, TileGrid};
use irdrop_core::eval::{kendall_tau_b, leave_one_out, retile, roc_auc, SourceDesign};
use irdrop_core::maxcnn::{baseline_linear_train, max_branch_step, predict_design, train, Features, InputVariant, LabeledDesign, MaxCnn, TrainConfig};
use irdrop_core::mitigate::{mitigate, select_hotspots, MitigationConfig};
use irdrop_core::nn::gradcheck::{central_diff, max_rel_error};
use irdrop_core::nn::layers::{maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward, BatchNorm, Conv2d, Dense};
use irdrop_core::nn::{BnMode, Tensor};
use irdrop_core::oracle::{generate_design, label_design, make_nonuniform_pdn, solve_instant, GenParams, PadLayout, PdnModel, Variation};
use irdrop_core::pipeline::{prepare_design, run_pipeline, PipelineConfig, PreparedDesign};

fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!("criterion {criterion:>2}: {}  {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- criterion 1

fn random_cell(rng: &mut ChaCha8Rng, id: u64, w: f64, h: f64, period: f64) -> Cell {
    let cw = rng.gen_range(0.2..6.0f64).min(w);
    let ch = rng.gen_range(0.2..3.0f64).min(h);
    let x0 = rng.gen_range(0.0..=w - cw);
    let y0 = rng.gen_range(0.0..=h - ch);
    let t0 = rng.gen_range(0.0..period);
    let t1 = rng.gen_range(t0..=period);
    Cell {
        id,
        p_i: rng.gen_range(0.0..1e-5),
        p_s: rng.gen_range(0.0..1e-5),
        p_l: rng.gen_range(0.0..1e-7),
        r_tog: rng.gen_range(0.0..=1.0),
        t_min: t0,
        t_max: t1,
        x_min: x0,
        x_max: x0 + cw,
        y_min: y0,
        y_max: y0 + ch,
        r_eff: None,
    }
}

#[test]
fn criterion_01_decomposition_conservation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut instant_violations = 0usize;
    let mut total_cells = 0usize;
    for d in 0..50 {
        let count = 10f64.powf(rng.gen_range(3.0..=5.0)).round() as usize;
        let side = (count as f64 * 4.0).sqrt().max(20.0);
        let (w, h) = (side * rng.gen_range(0.7..1.3), side * rng.gen_range(0.7..1.3));
        let period = rng.gen_range(0.5e-9..2e-9);
        let cells: Vec<Cell> = (0..count as u64).map(|i| random_cell(&mut rng, i, w, h, period)).collect();
        let meta = DesignMeta {
            name: format!("r{d}"),
            width: w,
            height: h,
            period,
            cell_count: count,
            vdd: 1.0,
            hotspot_threshold: 0.06,
        };
        let (l, n) = (rng.gen_range(0.5..4.0), rng.gen_range(0..=50));
        let maps = decompose(&cells, &meta, &DecomposeParams::with_instants(l, n, period).unwrap()).unwrap();
        let sums = [
            (maps.p_i.sum(), cells.iter().map(|c| c.p_i).sum::<f64>()),
            (maps.p_s.sum(), cells.iter().map(|c| c.p_s).sum::<f64>()),
            (maps.p_sca.sum(), cells.iter().map(|c| c.p_sca()).sum::<f64>()),
            (maps.p_all.sum(), cells.iter().map(|c| c.p_all()).sum::<f64>()),
        ];
        for (tiles, direct) in sums {
            worst = worst.max((tiles - direct).abs() / direct.abs());
        }
        for t in &maps.p_t {
            instant_violations += t.data().iter().zip(maps.p_sca.data()).filter(|(a, b)| a > b).count();
        }
        total_cells += count;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && instant_violations == 0 && secs < 60.0;
    report(
        1,
        pass,
        &format!("50 designs, {total_cells} cells: max rel. sum error {worst:.1e}, instant > scaled tiles {instant_violations}, {secs:.1}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

fn micro_meta(w: f64, h: f64) -> DesignMeta {
    DesignMeta {
        name: "micro".into(),
        width: w,
        height: h,
        period: 1.0,
        cell_count: 0,
        vdd: 1.0,
        hotspot_threshold: 0.06,
    }
}

fn micro_cell(id: u64, x: (f64, f64), y: (f64, f64), t: (f64, f64), p: f64) -> Cell {
    Cell {
        id,
        p_i: p,
        p_s: p,
        p_l: 0.1 * p,
        r_tog: 0.5,
        t_min: t.0,
        t_max: t.1,
        x_min: x.0,
        x_max: x.1,
        y_min: y.0,
        y_max: y.1,
        r_eff: None,
    }
}

#[test]
fn criterion_02_spatial_and_temporal_micro_cases() {
    // spatial: a cell spanning three tiles gives each a third of its power
    let m = micro_meta(5.0, 3.0);
    let long = micro_cell(4, (1.0, 4.0), (1.2, 1.8), (0.1, 0.9), 3e-6);
    let span = overlap_tiles(&long, 1.0, 5, 3);
    let spatial_params = DecomposeParams::with_instants(1.0, 0, 1.0).unwrap();
    let maps = decompose(&[long.clone()], &m, &spatial_params).unwrap();
    let thirds = (1..4).all(|x| maps.p_all.get(x, 1) == long.p_all() / 3.0)
        && maps.p_all.get(0, 1) == 0.0
        && maps.p_all.get(4, 1) == 0.0;
    // the highlighted tile: three whole cells, a third of one, half of another
    let cells = vec![
        micro_cell(1, (0.1, 0.4), (0.1, 0.4), (0.0, 0.5), 1.0),
        micro_cell(2, (0.5, 0.9), (0.1, 0.4), (0.0, 0.5), 2.0),
        micro_cell(3, (0.1, 0.9), (0.5, 0.7), (0.0, 0.5), 4.0),
        micro_cell(4, (0.2, 2.8), (0.75, 0.95), (0.0, 0.5), 8.0),
        micro_cell(5, (0.6, 1.4), (0.1, 0.3), (0.0, 0.5), 16.0),
    ];
    let maps = decompose(&cells, &m, &spatial_params).unwrap();
    let pa: Vec<f64> = cells.iter().map(|c| c.p_all()).collect();
    let tile_sum = pa[0] + pa[1] + pa[2] + pa[3] / 3.0 + pa[4] / 2.0;
    let spatial = span == TileSpan { x_n: 1, x_x: 4, y_n: 1, y_x: 2 } && thirds && (maps.p_all.get(0, 0) - tile_sum).abs() < 1e-12;

    // temporal: at the instant 0.5 only cells 1 and 3 straddle it
    let m = micro_meta(4.0, 2.0);
    let cells = vec![
        micro_cell(1, (0.2, 1.8), (0.1, 0.9), (0.3, 0.6), 1.0),
        micro_cell(2, (1.1, 1.9), (1.1, 1.9), (0.3, 0.45), 2.0),
        micro_cell(3, (2.5, 3.5), (0.5, 1.5), (0.4, 0.7), 3.0),
    ];
    let maps = decompose(&cells, &m, &DecomposeParams::with_instants(1.0, 4, 1.0).unwrap()).unwrap();
    let only13 = decompose(&[cells[0].clone(), cells[2].clone()], &m, &spatial_params).unwrap();
    let temporal = maps.instant(2).unwrap() == &only13.p_sca && maps.instant(1).unwrap().data().iter().all(|&v| v == 0.0);

    let pass = spatial && temporal;
    report(2, pass, &format!("one-third spatial split {spatial}, cells 1 and 3 only at the instant {temporal}"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const H: f64 = 1e-6;
const FLOOR: f64 = 1e-7;

/// Largest relative gradient error over every layer and parameter tensor.
fn layer_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut errs = Vec::new();

    let x = rand_tensor(&mut rng, [2, 6, 6, 3]);
    let mut conv = Conv2d::new(3, 3, 3, 4);
    conv.init(&mut rng);
    conv.bias = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let r = rand_tensor(&mut rng, [2, 6, 6, 4]);
    let (dx, g) = conv.backward(&x, &r, true).unwrap();
    let f = |c: &Conv2d, xv: &[f64]| dot(c.forward(&Tensor::from_vec(x.shape(), xv.to_vec()).unwrap()).unwrap().data(), r.data());
    errs.push(max_rel_error(dx.unwrap().data(), &central_diff(|v| f(&conv, v), x.data(), H), FLOOR));
    let num_w = central_diff(|v| f(&Conv2d { weight: v.to_vec(), ..conv.clone() }, x.data()), &conv.weight, H);
    errs.push(max_rel_error(&g.weight, &num_w, FLOOR));
    let num_b = central_diff(|v| f(&Conv2d { bias: v.to_vec(), ..conv.clone() }, x.data()), &conv.bias, H);
    errs.push(max_rel_error(&g.bias, &num_b, FLOOR));

    // normalization with batch statistics, then with running statistics
    let x = rand_tensor(&mut rng, [3, 3, 2, 4]);
    let r = rand_tensor(&mut rng, [3, 3, 2, 4]);
    let mut bn = BatchNorm::new(4);
    bn.gamma = (0..4).map(|_| rng.gen_range(0.5..1.5)).collect();
    bn.beta = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
    bn.running_mean = (0..4).map(|_| rng.gen_range(-0.3..0.3)).collect();
    bn.running_var = (0..4).map(|_| rng.gen_range(0.5..2.0)).collect();
    for batch in [true, false] {
        let run = |b: &BatchNorm, xv: &[f64]| {
            let t = Tensor::from_vec(x.shape(), xv.to_vec()).unwrap();
            let (y, _) = if batch { b.clone().forward_train(&t, false).unwrap() } else { b.forward_eval(&t).unwrap() };
            dot(y.data(), r.data())
        };
        let (_, cache) = if batch { bn.clone().forward_train(&x, false).unwrap() } else { bn.forward_eval(&x).unwrap() };
        let (dx, g) = bn.backward(&cache, &r).unwrap();
        errs.push(max_rel_error(dx.data(), &central_diff(|v| run(&bn, v), x.data(), H), FLOOR));
        let num_g = central_diff(|v| run(&BatchNorm { gamma: v.to_vec(), ..bn.clone() }, x.data()), &bn.gamma, H);
        errs.push(max_rel_error(&g.gamma, &num_g, FLOOR));
        let num_b = central_diff(|v| run(&BatchNorm { beta: v.to_vec(), ..bn.clone() }, x.data()), &bn.beta, H);
        errs.push(max_rel_error(&g.beta, &num_b, FLOOR));
    }

    let x = rand_tensor(&mut rng, [2, 5, 3, 2]);
    let (y, arg) = maxpool2x2_forward(&x);
    let r = rand_tensor(&mut rng, y.shape());
    let dx = maxpool2x2_backward(x.shape(), &arg, &r).unwrap();
    let num = central_diff(|v| dot(maxpool2x2_forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).0.data(), r.data()), x.data(), H);
    errs.push(max_rel_error(dx.data(), &num, FLOOR));

    let x = rand_tensor(&mut rng, [4, 1, 1, 6]);
    let mut fc = Dense::new(6, 3);
    fc.init(&mut rng, 6.0);
    fc.bias = vec![0.1, 0.2, -0.3];
    let r = rand_tensor(&mut rng, [4, 1, 1, 3]);
    let f = |fc: &Dense, xv: &[f64]| {
        let mut y = fc.forward(&Tensor::from_vec(x.shape(), xv.to_vec()).unwrap()).unwrap();
        relu_forward(&mut y);
        dot(y.data(), r.data())
    };
    let mut y = fc.forward(&x).unwrap();
    relu_forward(&mut y);
    let mut dy = r.clone();
    relu_backward(&y, &mut dy).unwrap();
    let (dx, g) = fc.backward(&x, &dy).unwrap();
    errs.push(max_rel_error(dx.data(), &central_diff(|v| f(&fc, v), x.data(), H), FLOOR));
    let num_w = central_diff(|v| f(&Dense { weight: v.to_vec(), ..fc.clone() }, x.data()), &fc.weight, H);
    errs.push(max_rel_error(&g.weight, &num_w, FLOOR));
    let num_b = central_diff(|v| f(&Dense { bias: v.to_vec(), ..fc.clone() }, x.data()), &fc.bias, H);
    errs.push(max_rel_error(&g.bias, &num_b, FLOOR));
    errs.into_iter().fold(0.0, f64::max)
}

fn random_maps(w: usize, h: usize, n: usize, seed: u64) -> PowerMapSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = |lo: f64, hi: f64| TileGrid::from_vec(w, h, 1.0, (0..w * h).map(|_| rng.gen_range(lo..hi)).collect()).unwrap();
    let p_i = grid(0.0, 1e-3);
    let p_s = grid(0.0, 1e-3);
    let toggle = grid(0.0, 1.0);
    let p_sca = TileGrid::from_vec(w, h, 1.0, (0..w * h).map(|i| (p_i.data()[i] + p_s.data()[i]) * toggle.data()[i] + 1e-5).collect()).unwrap();
    let p_all = TileGrid::from_vec(w, h, 1.0, (0..w * h).map(|i| p_i.data()[i] + p_s.data()[i] + 1e-5).collect()).unwrap();
    let p_t = (0..n)
        .map(|_| TileGrid::from_vec(w, h, 1.0, p_sca.data().iter().map(|v| v * rng.gen_range(0.0..1.0)).collect()).unwrap())
        .collect();
    PowerMapSet { p_i, p_s, p_sca, p_all, toggle, p_t, n, t: 1.0 / n as f64 }
}

/// Relative error of the whole max-over-instants training gradient.
fn end_to_end_gradient_error() -> f64 {
    let (n, k) = (4, 5);
    let maps = random_maps(6, 6, n, 13);
    let mut m = MaxCnn::new(k, n, InputVariant::Full, 1e-3, 8).unwrap();
    for (i, b) in m.cnn.bns.iter_mut().enumerate() {
        // keep zero-padded positions off the ReLU kink
        b.running_mean.iter_mut().for_each(|v| *v = 0.02 * (i + 1) as f64);
        b.running_var.iter_mut().for_each(|v| *v = 0.8);
        b.beta.iter_mut().for_each(|v| *v = 0.1);
    }
    let f = Features::new(&maps, InputVariant::Full, 1e-3).unwrap();
    let tiles = [(1, 1), (4, 2), (3, 5)];
    let per = k * k * f.channels();
    let mut buf = vec![0.0f64; tiles.len() * n * per];
    let mut chunks = buf.chunks_exact_mut(per);
    for &(x, y) in &tiles {
        for j in 0..n {
            f.window(Some(j), x, y, k, chunks.next().unwrap()).unwrap();
        }
    }
    let x = Tensor::from_vec([tiles.len() * n, k, k, f.channels()], buf).unwrap();
    let labels = [5.0, -3.0, 0.7];
    let step = max_branch_step(&mut m.cnn, &x, n, &labels, BnMode::Running).unwrap();
    let loss = |c: &irdrop_core::nn::Cnn| {
        let mut c = c.clone();
        let (o, _) = c.forward(&x, BnMode::Running).unwrap();
        o.chunks(n).zip(&labels).map(|(o, y)| (o.iter().cloned().fold(f64::MIN, f64::max) - y).abs()).sum::<f64>() / labels.len() as f64
    };
    let mut worst = 0.0f64;
    for t in 0..step.grads.len() {
        let base = m.cnn.params()[t].clone();
        let num = central_diff(
            |v| {
                let mut c = m.cnn.clone();
                *c.params_mut()[t] = v.to_vec();
                loss(&c)
            },
            &base,
            1e-6,
        );
        worst = worst.max(max_rel_error(&step.grads[t], &num, 1e-4));
    }
    worst
}

#[test]
fn criterion_03_gradient_suite() {
    let start = Instant::now();
    let layers = layer_gradient_error();
    let e2e = end_to_end_gradient_error();
    let secs = start.elapsed().as_secs_f64();
    let pass = layers < 1e-6 && e2e < 1e-5 && secs < 120.0;
    report(3, pass, &format!("layers max rel. err {layers:.1e} (< 1e-6), through the max {e2e:.1e} (< 1e-5), {secs:.1}s"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

fn random_pdn(rng: &mut ChaCha8Rng, w: usize, h: usize) -> PdnModel {
    let pads = match rng.gen_range(0..4) {
        0 => PadLayout::Corners,
        1 => PadLayout::Edges,
        2 => PadLayout::Pitch { pitch: rng.gen_range(2..5), offset: rng.gen_range(0..2) },
        _ => PadLayout::Pitch { pitch: 1, offset: 0 },
    };
    let mut tiles = pads.tiles(w, h);
    if tiles.is_empty() {
        tiles.push((0, 0));
    }
    let base = PdnModel::uniform(w, h, rng.gen_range(0.5..2.0), rng.gen_range(0.05..1.0), &tiles, 0.9).unwrap();
    make_nonuniform_pdn(&base, &Variation { jitter: 0.3, seed: rng.gen(), blocks: vec![] })
}

fn random_current(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> TileGrid {
    let v = (0..w * h).map(|_| if rng.gen::<f64>() < density { rng.gen_range(0.0..1e-2) } else { 0.0 }).collect();
    TileGrid::from_vec(w, h, 1.0, v).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_04_oracle_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut dense_err, mut sup_err, mut sym_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut principle_ok = true;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let pdn = random_pdn(&mut rng, w, h);
        let i = random_current(&mut rng, w, h, 0.5);
        let v = solve_instant(&pdn, &i).unwrap();
        let n = w * h;
        let a = DMatrix::from_row_slice(n, n, &pdn.dense_matrix());
        let d = a.cholesky().expect("SPD").solve(&DVector::from_column_slice(i.data()));
        dense_err = dense_err.max(max_abs_diff(v.data(), d.as_slice()));

        // superposition
        let (ca, cb) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
        let i2 = random_current(&mut rng, w, h, 0.6);
        let mix = TileGrid::from_vec(w, h, 1.0, i.data().iter().zip(i2.data()).map(|(x, y)| ca * x + cb * y).collect()).unwrap();
        let (v2, vm) = (solve_instant(&pdn, &i2).unwrap(), solve_instant(&pdn, &mix).unwrap());
        let scale = vm.max().max(1e-12);
        for k in 0..n {
            sup_err = sup_err.max((vm.data()[k] - ca * v.data()[k] - cb * v2.data()[k]).abs() / scale);
        }

        // mirror and transpose symmetry with edge pads on a square grid
        let s = rng.gen_range(2..14);
        let sq = PdnModel::uniform(s, s, 1.0, 0.3, &PadLayout::Edges.tiles(s, s), 0.9).unwrap();
        let mut load = TileGrid::zeros(s, s, 1.0);
        for y in 0..s {
            for x in 0..s.div_ceil(2) {
                let c = rng.gen_range(0.0..1e-2);
                load.set(x, y, c);
                load.set(s - 1 - x, y, c);
            }
        }
        let vs = solve_instant(&sq, &load).unwrap();
        let tr = TileGrid::from_vec(s, s, 1.0, (0..s * s).map(|k| load.get(k / s, k % s)).collect()).unwrap();
        let vt = solve_instant(&sq, &tr).unwrap();
        let scale = vs.max().max(1e-12);
        for y in 0..s {
            for x in 0..s {
                sym_err = sym_err.max((vs.get(x, y) - vs.get(s - 1 - x, y)).abs() / scale);
                sym_err = sym_err.max((vt.get(x, y) - vs.get(y, x)).abs() / scale);
            }
        }

        // maximum principle: with pads drawing nothing, the peak sits on a sink
        let (pw, ph) = (rng.gen_range(2..14), rng.gen_range(2..14));
        let p = random_pdn(&mut rng, pw, ph);
        let mut load = random_current(&mut rng, pw, ph, 0.4);
        for (x, y) in p.pad_tiles() {
            load.set(x, y, 0.0);
        }
        let vp = solve_instant(&p, &load).unwrap();
        principle_ok &= vp.data().iter().all(|&x| x >= 0.0);
        if load.max() > 0.0 {
            let at_sink = (0..pw * ph).filter(|&k| load.data()[k] > 0.0).map(|k| vp.data()[k]).fold(0.0, f64::max);
            principle_ok &= at_sink >= vp.max() * (1.0 - 1e-9);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = dense_err < 1e-9 && sup_err <= 1e-9 && sym_err <= 1e-9 && principle_ok && secs < 60.0;
    report(
        4,
        pass,
        &format!(
            "100 instances: dense diff {dense_err:.1e} V, superposition {sup_err:.1e}, symmetry {sym_err:.1e}, maximum principle {principle_ok}, {secs:.1}s"
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------- shared N = 20 suite

const SEEDS: [u64; 4] = [0, 1, 2, 3];

fn suite_config() -> PipelineConfig {
    PipelineConfig {
        l: 2.0,
        label_instants: 100,
        train: TrainConfig {
            k: 15,
            n: 20,
            epochs: 6,
            tiles_per_epoch: Some(4000),
            ..TrainConfig::default()
        },
        designs: SEEDS
            .iter()
            .map(|&seed| GenParams {
                seed,
                name: format!("d{seed}"),
                ..GenParams::default()
            })
            .collect(),
        ..PipelineConfig::default()
    }
}

struct Fold {
    pred: TileGrid,
    auc_1x1: f64,
    auc_5x5: f64,
    base_1x1: f64,
    base_5x5: f64,
}

struct Suite {
    cfg: PipelineConfig,
    designs: Vec<PreparedDesign>,
    folds: Vec<Fold>,
    seconds: f64,
}

fn aucs(pred: &TileGrid, label: &TileGrid, thr: f64) -> (f64, f64) {
    (
        roc_auc(pred, label, thr).unwrap(),
        roc_auc(&retile(pred, 5).unwrap(), &retile(label, 5).unwrap(), thr).unwrap(),
    )
}

fn build_suite() -> Suite {
    let start = Instant::now();
    let cfg = suite_config();
    let designs: Vec<PreparedDesign> = cfg
        .designs
        .iter()
        .map(|p| {
            let g = generate_design(p).unwrap();
            prepare_design(g.meta, g.cells, &cfg).unwrap()
        })
        .collect();
    let mut folds = Vec::new();
    for (t, test) in designs.iter().enumerate() {
        let train_set: Vec<LabeledDesign> = designs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != t)
            .map(|(_, d)| LabeledDesign { name: d.meta.name.clone(), maps: d.maps.clone(), label: d.label.clone() })
            .collect();
        let (model, _) = train(&train_set, &cfg.train).unwrap();
        model.check_unseen(&test.meta.name, &test.maps).unwrap();
        let pred = predict_design(&model, &test.maps, test.meta.vdd).unwrap().ir_hat.into_grid();
        let thr = test.meta.hotspot_threshold;
        let pairs: Vec<_> = train_set.iter().map(|d| (&d.maps, &d.label)).collect();
        let base = baseline_linear_train(&pairs).unwrap().predict(&test.maps, test.meta.vdd).unwrap();
        let (auc_1x1, auc_5x5) = aucs(&pred, test.label.grid(), thr);
        let (base_1x1, base_5x5) = aucs(base.grid(), test.label.grid(), thr);
        folds.push(Fold { pred, auc_1x1, auc_5x5, base_1x1, base_5x5 });
    }
    Suite { cfg, designs, folds, seconds: start.elapsed().as_secs_f64() }
}

static SUITE: OnceLock<Suite> = OnceLock::new();

fn suite() -> &'static Suite {
    SUITE.get_or_init(build_suite)
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_design_independence() {
    let _g = heavy();
    let s = suite();
    let auc1 = mean(&s.folds.iter().map(|f| f.auc_1x1).collect::<Vec<_>>());
    let auc5 = mean(&s.folds.iter().map(|f| f.auc_5x5).collect::<Vec<_>>());
    let base1 = mean(&s.folds.iter().map(|f| f.base_1x1).collect::<Vec<_>>());
    let base5 = mean(&s.folds.iter().map(|f| f.base_5x5).collect::<Vec<_>>());
    let per_fold: Vec<String> = s
        .designs
        .iter()
        .zip(&s.folds)
        .map(|(d, f)| format!("{} {:.4}/{:.4}", d.meta.name, f.auc_1x1, f.auc_5x5))
        .collect();
    let pass = auc1 >= 0.85 && auc5 >= 0.90 && auc1 >= base1 + 0.03;
    report(
        5,
        pass,
        &format!(
            "mean AUC 1x1 {auc1:.4} (>= 0.85), 5x5 {auc5:.4} (>= 0.90), linear baseline {base1:.4}/{base5:.4} (margin {:.4} >= 0.03); folds [{}]; {:.0}s",
            auc1 - base1,
            per_fold.join(", "),
            s.seconds
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_instant_count_trend() {
    let _g = heavy();
    let s = suite();
    let start = Instant::now();
    let sources: Vec<SourceDesign> = s
        .designs
        .iter()
        .map(|d| SourceDesign { meta: d.meta.clone(), cells: d.cells.clone(), label: d.label.clone() })
        .collect();
    let held: Vec<usize> = (0..sources.len()).collect();
    let auc_at = |n: usize| {
        let maps: Vec<PowerMapSet> = sources
            .iter()
            .map(|d| decompose(&d.cells, &d.meta, &DecomposeParams::with_instants(s.cfg.l, n, d.meta.period).unwrap()).unwrap())
            .collect();
        let folds = leave_one_out(&sources, &maps, &TrainConfig { n, ..s.cfg.train.clone() }, &held).unwrap();
        mean(&folds.iter().map(|f| f.auc_1x1.unwrap()).collect::<Vec<_>>())
    };
    let a0 = auc_at(0);
    let a20 = mean(&s.folds.iter().map(|f| f.auc_1x1).collect::<Vec<_>>());
    let a40 = auc_at(40);
    let secs = start.elapsed().as_secs_f64() + s.seconds;
    let (gain, next) = (a20 - a0, a40 - a20);
    let pass = gain >= 0.02 && next < gain && secs < 3600.0;
    report(
        6,
        pass,
        &format!("AUC 1x1 at N=0 {a0:.4}, N=20 {a20:.4}, N=40 {a40:.4}: gain {gain:.4} (>= 0.02), next gain {next:.4} (< {gain:.4}); {secs:.0}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 7

fn pairwise_auc(s: &[f64], hot: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if hot[i] && !hot[j] {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn pairwise_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = (x[i] - x[j]).signum() * f64::from(x[i] != x[j]);
            let b = (y[i] - y[j]).signum() * f64::from(y[i] != y[j]);
            match (a == 0.0, b == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                _ if a == b => c += 1,
                _ => d += 1,
            }
        }
    }
    (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
}

#[test]
fn criterion_07_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut auc_err, mut tau_err, mut self_tau, mut mono_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for case in 0..200 {
        let n = rng.gen_range(4..300);
        // coarse levels in half of the cases so ties are exercised
        let levels = if case % 2 == 0 { 0 } else { rng.gen_range(2..8) };
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if levels == 0 {
                rng.gen_range(0.0..0.1)
            } else {
                f64::from(rng.gen_range(0..levels)) * 0.01
            }
        };
        let pred: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let mut label: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let thr = 0.035;
        if label.iter().all(|&v| v > thr) {
            label[0] = 0.0;
        }
        if label.iter().all(|&v| v <= thr) {
            label[0] = 0.09;
        }
        let (pg, lg) = (
            TileGrid::from_vec(n, 1, 1.0, pred.clone()).unwrap(),
            TileGrid::from_vec(n, 1, 1.0, label.clone()).unwrap(),
        );
        let hot: Vec<bool> = label.iter().map(|&v| v > thr).collect();
        let auc = roc_auc(&pg, &lg, thr).unwrap();
        auc_err = auc_err.max((auc - pairwise_auc(&pred, &hot)).abs());
        if pred.windows(2).any(|w| w[0] != w[1]) && label.windows(2).any(|w| w[0] != w[1]) {
            tau_err = tau_err.max((kendall_tau_b(&pred, &label).unwrap() - pairwise_tau_b(&pred, &label)).abs());
        }
        if label.windows(2).any(|w| w[0] != w[1]) {
            self_tau = self_tau.max((kendall_tau_b(&label, &label).unwrap() - 1.0).abs());
        }
        let mapped = pg.map(|v| (50.0 * v).exp() + 3.0 * v);
        mono_err = mono_err.max((roc_auc(&mapped, &lg, thr).unwrap() - auc).abs());
    }
    let pass = auc_err <= 1e-12 && tau_err <= 1e-12 && self_tau <= 1e-12 && mono_err <= 1e-12;
    report(
        7,
        pass,
        &format!("200 instances: AUC vs pairwise {auc_err:.1e}, tau vs pairwise {tau_err:.1e}, |tau(l,l)-1| {self_tau:.1e}, monotone AUC change {mono_err:.1e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_mitigation() {
    let _g = heavy();
    let s = suite();
    // the design with the fewest violated tiles, chosen from the labels alone
    let violated = |d: &PreparedDesign| d.label.grid().data().iter().filter(|&&v| v > d.meta.hotspot_threshold).count();
    let t = (0..s.designs.len()).min_by_key(|&i| violated(&s.designs[i])).unwrap();
    let (d, pred) = (&s.designs[t], &s.folds[t].pred);
    let thr = d.meta.hotspot_threshold;
    let cfg = MitigationConfig::default();
    let (enhanced, rep) = mitigate(&d.pdn, &d.label_maps, pred, thr, &cfg).unwrap();
    let tiles = select_hotspots(pred, thr, cfg.budget);
    let before = label_design(&d.pdn, &d.label_maps).unwrap();
    let after = label_design(&enhanced, &d.label_maps).unwrap();
    let raised = tiles.iter().filter(|&&(x, y)| after.grid().get(x, y) > before.grid().get(x, y)).count();
    let reduction = 1.0 - rep.hotspots_after as f64 / rep.hotspots_before.max(1) as f64;
    let (all, hot) = (rep.all_ir_improvement_mv, rep.hotspot_ir_improvement_mv.unwrap_or(0.0));
    let pass = rep.hotspots_before > 0 && reduction >= 0.10 && rep.conductance_increase < 0.005 && hot >= 5.0 * all && all > 0.0 && raised == 0;
    report(
        8,
        pass,
        &format!(
            "{}: {} tiles enhanced, 5x5 hotspots {} -> {} ({:.0}% >= 10%), violated tiles {} -> {}, conductance +{:.3}% (< 0.5%), all-IR {all:.3} mV vs hotspot-IR {hot:.3} mV ({:.1}x >= 5x), enhanced tiles with a higher drop {raised}",
            d.meta.name,
            rep.enhanced_tiles,
            rep.hotspots_before,
            rep.hotspots_after,
            100.0 * reduction,
            rep.violated_before,
            rep.violated_after,
            100.0 * rep.conductance_increase,
            hot / all
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

fn determinism_config() -> PipelineConfig {
    PipelineConfig {
        label_instants: 20,
        emit_heatmaps: true,
        train: TrainConfig { n: 8, epochs: 2, tiles_per_epoch: Some(300), max_val_tiles: 100, ..TrainConfig::default() },
        mitigate: Some(MitigationConfig { budget: 100, strength: 0.1 }),
        designs: (0..3)
            .map(|seed| GenParams {
                seed,
                name: format!("m{seed}"),
                width: 64.0,
                height: 64.0,
                cells: 4000,
                clusters: 4,
                cluster_sigma: (3.0, 6.0),
                cluster_density: 1.0,
                hotspot_fraction: 0.02,
                ..GenParams::default()
            })
            .collect(),
        ..PipelineConfig::default()
    }
}

fn metrics(o: &irdrop_core::pipeline::PipelineOutcome) -> Vec<f64> {
    let mut v = Vec::new();
    for f in &o.folds {
        for r in [&f.report, &f.baseline] {
            v.extend([r.auc_1x1, r.auc_5x5, r.kendall_tau].into_iter().flatten());
            v.extend([r.mse_mv2, r.mean_abs_error_mv]);
        }
        if let Some(m) = &f.mitigation {
            v.extend([m.all_ir_improvement_mv, m.conductance_increase]);
        }
    }
    v
}

#[test]
fn criterion_09_determinism() {
    let _g = heavy();
    let cfg = determinism_config();
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: usize, name: &str| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_pipeline(&cfg, dir.path().join(name)).unwrap())
    };
    let a = run(1, "a");
    let b = run(1, "b");
    let c = run(4, "c");
    let same_manifest = a.manifest == b.manifest && !a.manifest.files.is_empty();
    let (ma, mc) = (metrics(&a), metrics(&c));
    let drift = ma.iter().zip(&mc).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let pass = same_manifest && ma.len() == mc.len() && drift <= 1e-10;
    report(
        9,
        pass,
        &format!(
            "rerun manifest identical {same_manifest} ({} files), 1 vs 4 threads: {} metrics, max change {drift:.1e} (<= 1e-10), manifests identical {}",
            a.manifest.files.len(),
            ma.len(),
            a.manifest == c.manifest
        ),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_throughput() {
    let _g = heavy();
    let g = generate_design(&GenParams::default()).unwrap();
    let maps = decompose(&g.cells, &g.meta, &DecomposeParams::with_instants(2.0, 20, g.meta.period).unwrap()).unwrap();
    assert_eq!((maps.w(), maps.h()), (128, 128));
    let model = MaxCnn::new(15, 20, InputVariant::Full, maps.max_tile_power(), 1).unwrap();
    let time = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let start = Instant::now();
        let p = pool.install(|| predict_design(&model, &maps, g.meta.vdd).unwrap());
        (start.elapsed().as_secs_f64(), p.ir_hat.into_grid())
    };
    let (t1, p1) = time(1);
    let (t8, p8) = time(8);
    let speedup = t1 / t8;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let single_ok = t1 < 60.0 && p1 == p8;
    let scaling_ok = speedup >= 3.0;
    report(
        10,
        single_ok && scaling_ok,
        &format!(
            "128x128 tiles, N=20: 1 thread {t1:.1}s (< 60s), 8 threads {t8:.1}s, speedup {speedup:.2}x (>= 3x) on {cores} available core(s)"
        ),
    );
    assert!(single_ok, "single-threaded inference took {t1:.1}s");
    // eight threads cannot beat one on fewer than eight cores
    if cores >= 8 {
        assert!(scaling_ok, "speedup {speedup:.2}x with 8 threads");
    }
}
