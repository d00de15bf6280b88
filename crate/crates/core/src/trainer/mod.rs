//! Adam training loop, loss logging and whole-slide evaluation.

mod config;
mod eval;
mod optim;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{lr_schedule, TrainConfig, KEYS};
pub use eval::{evaluate, Evaluation, Predictor};
pub use optim::{adam_step, clip_grad_norm, grad_norm, Adam, AdamConfig};

use crate::autodiff::Mode;
use crate::data::{augment, extract, make_grid, Dataset};
use crate::error::{shape_err, Error, Result};
use crate::losses::{combined_loss, loss_value, LossTerm};
use crate::metrics::{accumulate, binarize, confusion, derive_metrics};
use crate::segnet::Model;
use crate::tensor::Tensor;

/// A network-sized training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    /// `[3, P, P]`.
    pub image: Tensor<f32>,
    /// `[1, P, P]`.
    pub mask: Tensor<f32>,
}

/// Cuts every raster of `dataset` listed in `indices` into patches of the
/// network input size.
pub fn patches_of(dataset: &Dataset, indices: &[usize], patch: usize, overlap: usize) -> Result<Vec<Patch>> {
    let mut out = Vec::new();
    for &i in indices {
        let s = &dataset.samples[i];
        let grid = make_grid(s.size(), patch, overlap)?;
        let images = extract(&s.image, &grid)?;
        let masks = extract(&s.mask, &grid)?;
        for (image, mask) in images.into_iter().zip(masks) {
            out.push(Patch { image, mask: mask.reshape(vec![1, patch, patch])? });
        }
    }
    Ok(out)
}

/// Loss values of one split in one epoch, averaged per sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub ce: f64,
    pub ssim: f64,
    pub iou: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn term(&self, t: LossTerm) -> f64 {
        match t {
            LossTerm::Ce => self.ce,
            LossTerm::Ssim => self.ssim,
            LossTerm::Iou => self.iou,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.ce, self.ssim, self.iou, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train: LossRecord,
    pub val: Option<LossRecord>,
    /// Patch-level Dice on the validation split.
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

pub const LOSSES_HEADER: &str = "epoch,split,ce,ssim,iou,total,seconds";

impl TrainLog {
    /// `losses.csv` contents: one `train` row per epoch and a `val` row
    /// when a validation split exists.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOSSES_HEADER);
        s.push('\n');
        for e in &self.epochs {
            for (split, r) in [("train", Some(e.train)), ("val", e.val)] {
                if let Some(r) = r {
                    writeln!(s, "{},{split},{:.6},{:.6},{:.6},{:.6},{:.3}", e.epoch, r.ce, r.ssim, r.iou, r.total, e.seconds)
                        .expect("writing to a String cannot fail");
                }
            }
        }
        s
    }
}

/// Parsed row of a `losses.csv` file.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: String,
    pub loss: LossRecord,
}

pub fn parse_losses_csv(text: &str) -> Result<Vec<CurveRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LOSSES_HEADER => {}
        _ => return Err(Error::Format(format!("losses file must start with `{LOSSES_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("line {}: malformed row `{line}`", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        rows.push(CurveRow {
            epoch: f[0].trim().parse().map_err(|_| bad())?,
            split: f[1].trim().to_string(),
            loss: LossRecord { ce: num(f[2])?, ssim: num(f[3])?, iou: num(f[4])?, total: num(f[5])? },
        });
    }
    Ok(rows)
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Checkpoint bytes of the epoch with the best validation Dice (the
    /// final epoch when there is no validation split).
    pub best_checkpoint: Vec<u8>,
    pub best_epoch: usize,
    pub best_dice: Option<f64>,
}

fn stack_batch(patches: &[&Patch]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<Tensor<f32>> = patches.iter().map(|p| p.image.clone()).collect();
    let masks: Vec<Tensor<f32>> = patches.iter().map(|p| p.mask.clone()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

fn term_values(probs: &Tensor<f32>, masks: &Tensor<f32>, cfg: &TrainConfig) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (slot, term) in out.iter_mut().zip(LossTerm::ALL) {
        *slot = loss_value(term, probs, masks, &cfg.ssim)?;
    }
    Ok(out)
}

fn weighted_total(values: &[f64; 3], cfg: &TrainConfig) -> f64 {
    LossTerm::ALL.iter().zip(values).filter_map(|(&t, &v)| cfg.loss.weight(t).map(|w| w * v)).sum()
}

#[derive(Default)]
struct Averager {
    sums: [f64; 3],
    total: f64,
    count: usize,
}

impl Averager {
    fn add(&mut self, values: [f64; 3], total: f64, n: usize) {
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += v * n as f64;
        }
        self.total += total * n as f64;
        self.count += n;
    }

    fn record(&self) -> LossRecord {
        let n = self.count.max(1) as f64;
        LossRecord { ce: self.sums[0] / n, ssim: self.sums[1] / n, iou: self.sums[2] / n, total: self.total / n }
    }
}

/// Validation losses and patch-level Dice in eval mode.
pub fn validate(model: &Model<f32>, val: &[Patch], cfg: &TrainConfig) -> Result<(LossRecord, f64)> {
    let mut avg = Averager::default();
    let mut counts = Vec::new();
    for chunk in val.chunks(cfg.batch_size) {
        let refs: Vec<&Patch> = chunk.iter().collect();
        let (images, masks) = stack_batch(&refs)?;
        let probs = model.forward(&images, Mode::Eval)?;
        let values = term_values(&probs, &masks, cfg)?;
        avg.add(values, weighted_total(&values, cfg), chunk.len());
        let pred = binarize(probs.data(), cfg.metrics.binarize_threshold);
        let truth = binarize(masks.data(), 0.5);
        counts.push(confusion(&pred, &truth)?);
    }
    Ok((avg.record(), derive_metrics(&accumulate(&counts)?).dc))
}

/// Trains `model` in place on `train`, validating on `val` after every
/// epoch. `on_epoch` sees each finished epoch. Deterministic for a given
/// seed: shuffling and augmentation draw from one seeded generator.
pub fn train(
    model: &mut Model<f32>,
    train: &[Patch],
    val: &[Patch],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if model.config() != &cfg.network {
        return Err(Error::InvalidArgument("model architecture differs from the training config".into()));
    }
    let (h, w) = cfg.network.input_size;
    if let Some(p) = train.iter().chain(val).find(|p| p.image.shape() != [3, h, w] || p.mask.shape() != [1, h, w]) {
        return Err(shape_err(format!("patch {:?} does not match the network input {h}x{w}", p.image.shape())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, Vec<u8>)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut rng);
        let mut avg = Averager::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(idx.len());
            let mut masks = Vec::with_capacity(idx.len());
            for &i in idx {
                let (img, m) = augment(&train[i].image, &train[i].mask, &cfg.augment, &mut rng)?;
                images.push(img);
                masks.push(m);
            }
            let images = Tensor::stack(&images)?;
            let masks = Tensor::stack(&masks)?;

            let mut cx = model.context(Mode::Train);
            let x = cx.tape.constant(images);
            let g = cx.tape.constant(masks.clone());
            let out = model.forward_graph(&mut cx, x)?;
            let loss = combined_loss(&mut cx.tape, out.probs, g, &cfg.loss, &cfg.ssim)?;
            let total = cx.tape.value(loss.total).item() as f64;
            let probs = cx.tape.value(out.probs).clone();
            let values = term_values(&probs, &masks, cfg)?;
            if !total.is_finite() || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {}, batch {}: ce={} ssim={} iou={} total={total}",
                    epoch + 1,
                    b + 1,
                    values[0],
                    values[1],
                    values[2]
                )));
            }
            let mut tape = cx.tape;
            let store = model.params_mut();
            store.zero_grad();
            tape.backward_into(loss.total, store)?;
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(store, max);
            }
            adam.update(store, lr)?;
            store.apply_updates(&mut tape);
            avg.add(values, total, idx.len());
        }

        let (val_rec, dice) = if val.is_empty() {
            (None, None)
        } else {
            let (r, d) = validate(model, val, cfg)?;
            (Some(r), Some(d))
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train: avg.record(),
            val: val_rec,
            val_dice: dice,
            seconds: started.elapsed().as_secs_f64(),
        };
        if val_rec.is_some_and(|r| !r.is_finite()) {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {}", epoch + 1)));
        }
        let score = dice.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) || (dice.is_none() && epoch + 1 == cfg.epochs) {
            best = Some((score, epoch + 1, model.to_bytes()));
        }
        on_epoch(&record);
        log.epochs.push(record);
    }

    let (score, best_epoch, best_checkpoint) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log,
        best_checkpoint,
        best_epoch,
        best_dice: score.is_finite().then_some(score),
    })
}
