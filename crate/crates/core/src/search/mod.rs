//! Two-phase first-order search over the relaxed supernet.
//!
//! Phase 1 trains kernels on the weight half of the data and the cell scalars
//! (α, p) on the arch half while β stays frozen. Phase 2 keeps training the
//! kernels and moves β instead, with α and p frozen.

mod checkpoint;
mod config;

use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

pub use crate::binio::hex;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{lr_schedule, SearchConfig};

use crate::error::{Error, Result};
use crate::numerics::{apply_stat_updates, Ctx, Gradients, ParamGroup, Sgd, Tape, Tensor, Var};
use crate::relaxation::SupernetModel;
use crate::rng::{stream, Purpose};
use crate::tasks::SegDataset;

/// Smoothing constant of the soft Dice term.
pub const DICE_EPS: f64 = 1.0;

/// Mean per-pixel cross-entropy plus `1 - soft Dice`, equally weighted.
pub fn segmentation_loss(tape: &mut Tape, logits: Var, labels: Rc<[u8]>) -> Result<Var> {
    let ce = tape.cross_entropy(logits, labels.clone())?;
    let dice = tape.soft_dice_loss(logits, labels, DICE_EPS)?;
    tape.add(ce, dice)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Kernels plus cell scalars α and p.
    Cells,
    /// Kernels plus network scalars β.
    Network,
}

impl Phase {
    pub fn of_epoch(epoch: usize, cfg: &SearchConfig) -> Phase {
        if epoch < cfg.epochs_phase1 {
            Phase::Cells
        } else {
            Phase::Network
        }
    }

    pub fn number(self) -> usize {
        match self {
            Phase::Cells => 1,
            Phase::Network => 2,
        }
    }

    /// Architecture groups updated in this phase.
    pub fn arch_groups(self) -> &'static [ParamGroup] {
        match self {
            Phase::Cells => &[ParamGroup::Alpha, ParamGroup::EdgeP],
            Phase::Network => &[ParamGroup::Beta],
        }
    }
}

pub const WEIGHT_GROUPS: [ParamGroup; 2] = [ParamGroup::Weight, ParamGroup::Norm];

/// Loss and gradients of the listed groups on one batch; everything else is
/// a constant on the tape.
pub fn batch_gradients(
    model: &SupernetModel,
    batch: (Tensor, Rc<[u8]>),
    groups: &[ParamGroup],
) -> Result<(f64, Gradients, Vec<crate::numerics::ops::StatUpdate>)> {
    let (x, labels) = batch;
    let mut ctx = Ctx::new(Tape::with_trainable(groups), &model.store, true);
    let xv = ctx.input(x);
    let out = model.forward(&mut ctx, xv)?;
    let loss = segmentation_loss(&mut ctx.tape, out.logits, labels)?;
    let value = ctx.tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("search loss".into()));
    }
    let grads = ctx.tape.backward(loss)?;
    let (_, stats) = ctx.into_parts();
    Ok((value, grads, stats))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub phase: usize,
    pub weight_loss: f64,
    pub arch_loss: f64,
    pub lr: f64,
}

pub const LOSS_CSV_VERSION: u32 = 1;

pub fn loss_csv(history: &[EpochLoss]) -> String {
    let mut s = format!("# msnas-loss v{LOSS_CSV_VERSION}\nepoch,phase,weight_loss,arch_loss,lr\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{},{}", h.epoch, h.phase, h.weight_loss, h.arch_loss, h.lr);
    }
    s
}

pub struct SearchOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLoss>,
    /// Set when training diverged; the checkpoint then holds the last finite state.
    pub diverged: Option<String>,
}

/// Disjoint weight-set / arch-set halves of `0..n`, seeded.
pub fn split_halves(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let arch = idx.split_off(n / 2);
    (idx, arch)
}

fn check_dataset(cfg: &SearchConfig, ds: &SegDataset) -> Result<()> {
    if ds.len() < 2 {
        return Err(Error::invalid("search needs at least 2 samples"));
    }
    if ds.size != cfg.image_size || ds.channels != cfg.in_channels || ds.num_classes != cfg.num_classes {
        return Err(Error::invalid(format!(
            "dataset is {}x{} with {} channels and {} classes; config expects {}x{}, {} channels, {} classes",
            ds.size, ds.size, ds.channels, ds.num_classes, cfg.image_size, cfg.image_size, cfg.in_channels, cfg.num_classes
        )));
    }
    Ok(())
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Fresh supernet for `cfg`: kernels from the init stream, architecture
/// scalars from the arch stream.
pub fn init_model(cfg: &SearchConfig) -> Result<SupernetModel> {
    SupernetModel::new(
        cfg.supernet(),
        &mut stream(cfg.seed, Purpose::Init),
        &mut stream(cfg.seed, Purpose::Arch),
        cfg.arch_init_noise,
    )
}

/// Runs the full two-phase search. `on_epoch` sees every finished epoch.
pub fn run_search(
    cfg: &SearchConfig,
    ds: &SegDataset,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<SearchOutcome> {
    cfg.validate()?;
    check_dataset(cfg, ds)?;
    let mut model = init_model(cfg)?;
    let mut data_rng = stream(cfg.seed, Purpose::Data);
    let (weight_set, arch_set) = split_halves(ds.len(), &mut data_rng);
    let mut history = Vec::with_capacity(cfg.epochs_total);
    let mut diverged = None;
    let mut completed = 0;
    for epoch in 0..cfg.epochs_total {
        let snapshot = (model.store.clone(), data_rng.clone());
        match run_epoch(cfg, ds, &mut model, &mut data_rng, epoch, &weight_set, &arch_set) {
            Ok(record) => {
                on_epoch(&record);
                history.push(record);
                completed = epoch + 1;
            }
            Err(e) if is_divergence(&e) => {
                model.store = snapshot.0;
                data_rng = snapshot.1;
                diverged = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SearchOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            epoch: completed,
            data_word_pos: data_rng.get_word_pos(),
            model,
        },
        history,
        diverged,
    })
}

fn run_epoch(
    cfg: &SearchConfig,
    ds: &SegDataset,
    model: &mut SupernetModel,
    rng: &mut ChaCha8Rng,
    epoch: usize,
    weight_set: &[usize],
    arch_set: &[usize],
) -> Result<EpochLoss> {
    let phase = Phase::of_epoch(epoch, cfg);
    let lr = lr_schedule(epoch, cfg)?;
    let sgd = Sgd {
        lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let arch_sgd = Sgd {
        lr: lr * cfg.arch_lr_scale,
        ..sgd
    };
    let mut w_order = weight_set.to_vec();
    w_order.shuffle(rng);
    let mut a_order = arch_set.to_vec();
    a_order.shuffle(rng);
    let steps = w_order.len().div_ceil(cfg.batch_size);
    let (mut w_total, mut a_total) = (0.0, 0.0);
    for step in 0..steps {
        let wb = &w_order[step * cfg.batch_size..((step + 1) * cfg.batch_size).min(w_order.len())];
        let (loss, grads, stats) = batch_gradients(model, ds.batch(wb)?, &WEIGHT_GROUPS)?;
        sgd.step(&mut model.store, &grads, &WEIGHT_GROUPS)?;
        apply_stat_updates(&mut model.store, &stats);
        w_total += loss;

        let ab: Vec<usize> = (0..cfg.batch_size.min(a_order.len()))
            .map(|i| a_order[(step * cfg.batch_size + i) % a_order.len()])
            .collect();
        let (loss, grads, _) = batch_gradients(model, ds.batch(&ab)?, phase.arch_groups())?;
        arch_sgd.step(&mut model.store, &grads, phase.arch_groups())?;
        a_total += loss;
    }
    Ok(EpochLoss {
        epoch,
        phase: phase.number(),
        weight_loss: w_total / steps as f64,
        arch_loss: a_total / steps as f64,
        lr,
    })
}
