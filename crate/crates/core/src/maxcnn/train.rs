// SPDX-License-Identifier: Apache-2.0

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{Features, InputVariant};
use super::{fingerprint, DesignTag, MaxCnn, Predictor, LABEL_SCALE};
use crate::design::{IrMap, PowerMapSet};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, BnMode, Cnn, Grads, Scratch, Tensor};

/// One training design: its decomposed maps and oracle labels.
#[derive(Debug, Clone)]
pub struct LabeledDesign {
    pub name: String,
    pub maps: PowerMapSet,
    pub label: IrMap,
}

/// How the maximum instant is picked for each training tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Score all instants with the frozen network (running statistics), then
    /// take one training pass over the selected windows only.
    #[default]
    Frozen,
    /// Single training pass over all `N x B` windows with batch statistics
    /// shared across the stack.
    Stacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Odd window side length.
    pub k: usize,
    /// Instant count; every training design must be decomposed with it.
    pub n: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Training design files; read by front ends, ignored by [`train`].
    pub designs: Vec<String>,
    pub variant: InputVariant,
    pub selection: Selection,
    /// Tiles visited per epoch, drawn from the shuffled order; all when unset.
    pub tiles_per_epoch: Option<usize>,
    /// Fraction of tiles held out for early stopping.
    pub val_fraction: f64,
    pub max_val_tiles: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 15,
            n: 20,
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            designs: Vec::new(),
            variant: InputVariant::Full,
            selection: Selection::Frozen,
            tiles_per_epoch: None,
            val_fraction: 0.1,
            max_val_tiles: 2000,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 3 || self.k % 2 == 0 {
            return Err(Error::Config(format!("k = {} must be odd and at least 3", self.k)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean absolute training error of the selected branch, mV.
    pub train_l1_mv: f64,
    pub val_l1_mv: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Mean absolute error over the batch, in network output units.
    pub loss: f64,
    pub grads: Grads,
    /// Selected window per sample, `0..n_per`.
    pub selected: Vec<usize>,
}

/// Loss and gradient of `mean_b |max_j f(x_bj) - y_b|`, back-propagated only
/// through the selected branch of each sample.
///
/// `windows` holds `labels.len() * n_per` windows, sample-major. Ties pick the
/// first window.
pub fn max_branch_step(cnn: &mut Cnn, windows: &Tensor, n_per: usize, labels: &[f64], mode: BnMode) -> Result<StepOutcome> {
    if n_per == 0 || windows.n() != labels.len() * n_per {
        return Err(Error::Shape(format!(
            "{} windows for {} samples of {n_per} instants",
            windows.n(),
            labels.len()
        )));
    }
    let (out, cache) = cnn.forward(windows, mode)?;
    let b = labels.len() as f64;
    let mut dout = vec![0.0; out.len()];
    let mut loss = 0.0;
    let mut selected = Vec::with_capacity(labels.len());
    for (s, o) in out.chunks_exact(n_per).enumerate() {
        let mut j = 0;
        for (i, &v) in o.iter().enumerate() {
            if v > o[j] {
                j = i;
            }
        }
        let d = o[j] - labels[s];
        loss += d.abs();
        dout[s * n_per + j] = if d > 0.0 {
            1.0 / b
        } else if d < 0.0 {
            -1.0 / b
        } else {
            0.0
        };
        selected.push(j);
    }
    let loss = loss / b;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss is {loss}")));
    }
    let (grads, _) = cnn.backward(&cache, &dout, false)?;
    Ok(StepOutcome { loss, grads, selected })
}

#[derive(Clone, Copy)]
struct Sample {
    design: usize,
    x: usize,
    y: usize,
}

fn shuffled_samples(designs: &[LabeledDesign], seed: u64) -> Vec<Sample> {
    let mut all = Vec::new();
    for (d, ld) in designs.iter().enumerate() {
        for y in 0..ld.maps.h() {
            for x in 0..ld.maps.w() {
                all.push(Sample { design: d, x, y });
            }
        }
    }
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all
}

/// Trains a max-CNN on `designs` with Adam and an L1 loss in millivolts.
///
/// Tiles are shuffled across designs every epoch. When a validation split
/// exists, training stops after `patience` epochs without improvement and
/// the best parameters are returned.
pub fn train(designs: &[LabeledDesign], cfg: &TrainConfig) -> Result<(MaxCnn, TrainReport)> {
    cfg.validate()?;
    if designs.is_empty() {
        return Err(Error::Config("no training designs".into()));
    }
    for d in designs {
        if d.maps.n != cfg.n {
            return Err(Error::Config(format!(
                "design `{}` has N = {} instants, config asks for {}",
                d.name, d.maps.n, cfg.n
            )));
        }
        d.maps.p_all.check_same_shape(d.label.grid())?;
    }
    let scale = designs.iter().map(|d| d.maps.max_tile_power()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut model = MaxCnn::new(cfg.k, cfg.n, cfg.variant, scale, cfg.seed)?;
    model.trained_on = designs
        .iter()
        .map(|d| DesignTag {
            name: d.name.clone(),
            fingerprint: fingerprint(&d.maps),
        })
        .collect();
    let feats = designs
        .iter()
        .map(|d| Features::new(&d.maps, cfg.variant, scale))
        .collect::<Result<Vec<_>>>()?;

    let mut samples = shuffled_samples(designs, cfg.seed ^ 0x5eed);
    let n_val = if samples.len() >= 20 {
        ((samples.len() as f64 * cfg.val_fraction).round() as usize).min(cfg.max_val_tiles)
    } else {
        0
    };
    let val: Vec<Sample> = samples.drain(..n_val).collect();
    let mut train_set = samples;

    let k = cfg.k;
    let ch = cfg.variant.channels();
    let per = k * k * ch;
    let n_slots = cfg.n.max(1);
    let slot = |j: usize| if cfg.n == 0 { None } else { Some(j) };
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.cnn.param_sizes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::new();
    let mut best: Option<(f64, Cnn, AdamState, usize)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut scratch = Scratch::default();
    let mut scores = Vec::new();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        train_set.shuffle(&mut rng);
        let take = cfg.tiles_per_epoch.unwrap_or(train_set.len()).min(train_set.len());
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in train_set[..take].chunks(cfg.batch_size) {
            let labels: Vec<f64> = batch
                .iter()
                .map(|s| designs[s.design].label.grid().get(s.x, s.y) * LABEL_SCALE)
                .collect();
            let outcome = match cfg.selection {
                Selection::Stacked => {
                    let mut buf = vec![0.0; batch.len() * n_slots * per];
                    let mut it = buf.chunks_exact_mut(per);
                    for s in batch {
                        for j in 0..n_slots {
                            feats[s.design].window(slot(j), s.x, s.y, k, it.next().expect("sized"))?;
                        }
                    }
                    let t = Tensor::from_vec([batch.len() * n_slots, k, k, ch], buf)?;
                    max_branch_step(&mut model.cnn, &t, n_slots, &labels, BnMode::Batch { update: true })?
                }
                Selection::Frozen => {
                    let mut chosen = vec![0usize; batch.len()];
                    if n_slots > 1 {
                        let net = model.cnn.fold();
                        let mut buf = vec![0f32; batch.len() * n_slots * per];
                        let mut it = buf.chunks_exact_mut(per);
                        for s in batch {
                            for j in 0..n_slots {
                                feats[s.design].window(slot(j), s.x, s.y, k, it.next().expect("sized"))?;
                            }
                        }
                        net.forward_serial(&buf, &mut scratch, &mut scores)?;
                        for (c, o) in chosen.iter_mut().zip(scores.chunks_exact(n_slots)) {
                            for (i, &v) in o.iter().enumerate() {
                                if v > o[*c] {
                                    *c = i;
                                }
                            }
                        }
                    }
                    let mut buf = vec![0.0; batch.len() * per];
                    for ((s, &j), w) in batch.iter().zip(&chosen).zip(buf.chunks_exact_mut(per)) {
                        feats[s.design].window(slot(j), s.x, s.y, k, w)?;
                    }
                    let t = Tensor::from_vec([batch.len(), k, k, ch], buf)?;
                    max_branch_step(&mut model.cnn, &t, 1, &labels, BnMode::Batch { update: true })?
                }
            };
            adam.step(&mut model.cnn.params_mut(), &outcome.grads)?;
            loss_sum += outcome.loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_l1 = loss_sum / seen.max(1) as f64;
        let val_l1 = if val.is_empty() {
            None
        } else {
            Some(validation_l1(&model, designs, &val)?)
        };
        let seconds = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train L1 {train_l1:.4} mV, validation L1 {} ({seconds:.1} s)",
            val_l1.map_or("n/a".to_string(), |v| format!("{v:.4} mV"))
        );
        logs.push(EpochLog {
            epoch,
            train_l1_mv: train_l1,
            val_l1_mv: val_l1,
            seconds,
        });
        if let Some(v) = val_l1 {
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, model.cnn.clone(), adam.clone(), epoch));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stopped_early = epoch < cfg.epochs;
                    break;
                }
            }
        }
    }
    let best_epoch = match best {
        Some((_, cnn, st, e)) => {
            model.cnn = cnn;
            adam = st;
            e
        }
        None => logs.len(),
    };
    model.adam = Some(adam);
    Ok((
        model,
        TrainReport {
            epochs: logs,
            best_epoch,
            stopped_early,
        },
    ))
}

fn validation_l1(model: &MaxCnn, designs: &[LabeledDesign], val: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for (d, ld) in designs.iter().enumerate() {
        let tiles: Vec<(usize, usize)> = val.iter().filter(|s| s.design == d).map(|s| (s.x, s.y)).collect();
        if tiles.is_empty() {
            continue;
        }
        let p: Predictor = model.predictor(&ld.maps)?;
        for (&(x, y), (v, _)) in tiles.iter().zip(p.tiles(&tiles)?) {
            total += (v - ld.label.grid().get(x, y)).abs() * LABEL_SCALE;
        }
    }
    Ok(total / val.len() as f64)
}
