//! Retraining decoded architectures from scratch under k-fold cross-validation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::SegDataset;
use super::metrics::{kfold_split, Metrics, MetricsAccumulator};
use super::net::DecodedNet;
use crate::binio::{put_params, put_u32, seal, unseal, Cursor};
use crate::decode::DecodedArch;
use crate::error::{Error, Result};
use crate::numerics::{apply_stat_updates, channel_softmax, Ctx, ParamGroup, ParamStore, Sgd, Tape, Tensor};
use crate::rng::{substream, Purpose};
use crate::search::segmentation_loss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub folds: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 5,
            epochs: 40,
            lr_start: 0.025,
            lr_end: 0.001,
            momentum: 0.9,
            weight_decay: 3e-4,
            batch_size: 4,
            grad_clip: Some(5.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: String| Err(Error::invalid(format!("{field}: {why}")));
        if self.folds < 2 {
            return fail("folds", format!("need at least 2 (got {})", self.folds));
        }
        if self.epochs == 0 {
            return fail("epochs", "must be at least 1".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return fail("lr_start", format!("need lr_start >= lr_end > 0 (got {} and {})", self.lr_start, self.lr_end));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", format!("must be in [0, 1) (got {})", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", format!("must be finite and >= 0 (got {})", self.weight_decay));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return fail("grad_clip", format!("must be finite and > 0 (got {c})"));
            }
        }
        Ok(())
    }

    fn lr(&self, epoch: usize) -> f64 {
        if self.epochs == 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_end + 0.5 * (self.lr_start - self.lr_end) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// A trained network and the weights it reads.
pub struct TrainedNet {
    pub net: DecodedNet,
    pub store: ParamStore,
}

const TRAINABLE: [ParamGroup; 2] = [ParamGroup::Weight, ParamGroup::Norm];

/// Trains a fresh instance of `arch` on `train`. `stream_index` selects the
/// initialization and batch-order streams.
pub fn fit(arch: &DecodedArch, train: &SegDataset, cfg: &TrainConfig, stream_index: u64) -> Result<TrainedNet> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut init_rng = substream(cfg.seed, Purpose::Init, stream_index);
    let mut order_rng = substream(cfg.seed, Purpose::Data, stream_index);
    let mut store = ParamStore::new();
    let net = DecodedNet::new(arch, &mut store, &mut init_rng)?;
    for epoch in 0..cfg.epochs {
        let sgd = Sgd {
            lr: cfg.lr(epoch),
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = train.batch(chunk)?;
            let mut ctx = Ctx::new(Tape::with_trainable(&TRAINABLE), &store, true);
            let xv = ctx.input(x);
            let logits = net.forward(&mut ctx, xv)?;
            let loss = segmentation_loss(&mut ctx.tape, logits, labels)?;
            if !ctx.tape.value(loss).data()[0].is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let mut grads = ctx.tape.backward(loss)?;
            if let Some(c) = cfg.grad_clip {
                grads.clip_global_norm(c);
            }
            let (_, stats) = ctx.into_parts();
            sgd.step(&mut store, &grads, &TRAINABLE)?;
            apply_stat_updates(&mut store, &stats);
        }
    }
    Ok(TrainedNet { net, store })
}

/// Per-pixel argmax of channel logits, one class map per batch entry.
pub fn argmax_labels(logits: &Tensor) -> Vec<Vec<u8>> {
    let probs = channel_softmax(logits);
    let [n, c, h, w] = probs.shape();
    (0..n)
        .map(|b| {
            (0..h * w)
                .map(|i| {
                    let mut best = 0;
                    for k in 1..c {
                        if probs.data()[(b * c + k) * h * w + i] > probs.data()[(b * c + best) * h * w + i] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

impl TrainedNet {
    /// Hard predictions in evaluation mode.
    pub fn predict(&self, ds: &SegDataset, batch_size: usize) -> Result<Vec<Vec<u8>>> {
        let idx: Vec<usize> = (0..ds.len()).collect();
        let mut out = Vec::with_capacity(ds.len());
        for chunk in idx.chunks(batch_size.max(1)) {
            let (x, _) = ds.batch(chunk)?;
            let mut ctx = Ctx::new(Tape::with_trainable(&[]), &self.store, false);
            let xv = ctx.input(x);
            let logits = self.net.forward(&mut ctx, xv)?;
            out.extend(argmax_labels(ctx.tape.value(logits)));
        }
        Ok(out)
    }

    pub fn evaluate(&self, ds: &SegDataset, batch_size: usize) -> Result<Metrics> {
        evaluate_predictions(&self.predict(ds, batch_size)?, ds)
    }

    /// `"MSNASWGT"`, u32 version, the parameter block, SHA-256 footer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = WEIGHTS_MAGIC.to_vec();
        put_u32(&mut out, WEIGHTS_VERSION);
        put_params(&mut out, &self.store);
        seal(out)
    }

    /// Restores weights trained for `arch`; names and shapes must match.
    pub fn from_bytes(arch: &DecodedArch, bytes: &[u8]) -> Result<TrainedNet> {
        let body = unseal(bytes, "weights", WEIGHTS_MAGIC.len() + 4)?;
        let mut c = Cursor::new(body, "weights");
        c.header(WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
        let mut store = ParamStore::new();
        let net = DecodedNet::new(arch, &mut store, &mut substream(0, Purpose::Init, 0))?;
        c.params(&mut store)?;
        c.finish()?;
        Ok(TrainedNet { net, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(arch: &DecodedArch, path: &Path) -> Result<TrainedNet> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        TrainedNet::from_bytes(arch, &bytes)
    }
}

pub const WEIGHTS_MAGIC: &[u8; 8] = b"MSNASWGT";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn evaluate_predictions(preds: &[Vec<u8>], ds: &SegDataset) -> Result<Metrics> {
    if preds.len() != ds.len() {
        return Err(Error::invalid(format!("{} predictions for {} samples", preds.len(), ds.len())));
    }
    let mut acc = MetricsAccumulator::new(ds.num_classes);
    for (p, s) in preds.iter().zip(&ds.samples) {
        acc.add(p, &s.label)?;
    }
    acc.finish()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// `Err` text when training this fold failed.
    pub outcome: std::result::Result<Metrics, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValReport {
    pub folds: Vec<FoldResult>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    (m, v.sqrt())
}

impl CrossValReport {
    fn successful(&self) -> impl Iterator<Item = &Metrics> {
        self.folds.iter().filter_map(|f| f.outcome.as_ref().ok())
    }

    /// Mean and population standard deviation of per-fold mean Dice.
    pub fn dice(&self) -> (f64, f64) {
        mean_std(&self.successful().map(|m| m.mean_dice).collect::<Vec<_>>())
    }

    pub fn iou(&self) -> (f64, f64) {
        mean_std(&self.successful().map(|m| m.mean_iou).collect::<Vec<_>>())
    }

    pub fn failed_folds(&self) -> usize {
        self.folds.iter().filter(|f| f.outcome.is_err()).count()
    }

    /// `fold,class,iou,dice` rows plus one `mean` row per fold.
    pub fn to_csv(&self, num_classes: usize) -> String {
        let mut s = String::from("# msnas-metrics v1\nfold,class,iou,dice,status\n");
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for f in &self.folds {
            match &f.outcome {
                Ok(m) => {
                    for c in 0..num_classes {
                        let _ = writeln!(
                            s,
                            "{},{c},{},{},ok",
                            f.fold,
                            fmt(m.per_class_iou[c]),
                            fmt(m.per_class_dice[c])
                        );
                    }
                    let _ = writeln!(s, "{},mean,{},{},ok", f.fold, m.mean_iou, m.mean_dice);
                }
                Err(e) => {
                    let _ = writeln!(s, "{},mean,,,failed: {}", f.fold, e.replace(',', ";"));
                }
            }
        }
        s
    }
}

/// k-fold retraining of `arch`. A fold whose training diverges is recorded
/// as failed and the remaining folds still run.
pub fn train_decoded(arch: &DecodedArch, ds: &SegDataset, cfg: &TrainConfig) -> Result<CrossValReport> {
    cfg.validate()?;
    if ds.len() < 2 * cfg.folds {
        return Err(Error::invalid(format!(
            "{} samples are too few for {} folds (need {})",
            ds.len(),
            cfg.folds,
            2 * cfg.folds
        )));
    }
    let folds = kfold_split(ds.len(), cfg.folds, cfg.seed)?;
    let mut results = Vec::with_capacity(folds.len());
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = (0..ds.len()).filter(|i| test_idx.binary_search(i).is_err()).collect();
        let train = ds.subset(&train_idx);
        let test = ds.subset(test_idx);
        let outcome = match fit(arch, &train, cfg, f as u64) {
            Ok(net) => net.evaluate(&test, cfg.batch_size).map_err(|e| e.to_string()),
            Err(e @ Error::NonFinite(_)) => Err(e.to_string()),
            Err(e) => return Err(e),
        };
        results.push(FoldResult {
            fold: f,
            train_size: train.len(),
            test_size: test.len(),
            outcome,
        });
    }
    Ok(CrossValReport { folds: results })
}
