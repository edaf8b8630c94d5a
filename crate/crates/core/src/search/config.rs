use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relaxation::SupernetConfig;

/// Everything a search run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub layers: usize,
    pub scales: usize,
    pub blocks: usize,
    pub k: usize,
    /// Number of paths kept at decode time (N_l).
    pub paths: usize,
    pub base_channels: usize,
    #[serde(default = "one")]
    pub in_channels: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub epochs_total: usize,
    pub epochs_phase1: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Standard deviation of the noise added to the zero-initialized architecture scalars.
    #[serde(default = "default_arch_noise")]
    pub arch_init_noise: f64,
    /// Multiplier on the learning rate of the architecture scalars.
    #[serde(default = "unit")]
    pub arch_lr_scale: f64,
}

fn unit() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

fn default_arch_noise() -> f64 {
    1e-3
}

impl Default for SearchConfig {
    /// The published search setting: 10 layers, 5 scales, 3 blocks, k = 4,
    /// 40 epochs split 20/20, SGD with momentum 0.9, lr 0.025 to 0.001,
    /// weight decay 3e-4.
    fn default() -> Self {
        SearchConfig {
            layers: 10,
            scales: 5,
            blocks: 3,
            k: 4,
            paths: 3,
            base_channels: 8,
            in_channels: 1,
            num_classes: 2,
            image_size: 64,
            epochs_total: 40,
            epochs_phase1: 20,
            lr_start: 0.025,
            lr_end: 0.001,
            momentum: 0.9,
            weight_decay: 3e-4,
            batch_size: 4,
            seed: 0,
            arch_init_noise: 1e-3,
            arch_lr_scale: 1.0,
        }
    }
}

impl SearchConfig {
    pub fn supernet(&self) -> SupernetConfig {
        SupernetConfig {
            layers: self.layers,
            scales: self.scales,
            blocks: self.blocks,
            k: self.k,
            base_channels: self.base_channels,
            in_channels: self.in_channels,
            num_classes: self.num_classes,
        }
    }

    /// Field-level validation; the message names the offending field.
    pub fn validate(&self) -> Result<()> {
        self.supernet().validate()?;
        let fail = |field: &str, why: String| Err(Error::invalid(format!("{field}: {why}")));
        if self.paths == 0 {
            return fail("paths", "must be at least 1".into());
        }
        if self.epochs_total == 0 {
            return fail("epochs_total", "must be at least 1".into());
        }
        if self.epochs_phase1 >= self.epochs_total {
            return fail(
                "epochs_phase1",
                format!("must be below epochs_total ({} >= {})", self.epochs_phase1, self.epochs_total),
            );
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return fail(
                "lr_start",
                format!("need lr_start >= lr_end > 0 (got {} and {})", self.lr_start, self.lr_end),
            );
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", format!("must be in [0, 1) (got {})", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", format!("must be finite and >= 0 (got {})", self.weight_decay));
        }
        if !(self.arch_init_noise >= 0.0 && self.arch_init_noise.is_finite()) {
            return fail("arch_init_noise", format!("must be finite and >= 0 (got {})", self.arch_init_noise));
        }
        if !(self.arch_lr_scale > 0.0 && self.arch_lr_scale.is_finite()) {
            return fail("arch_lr_scale", format!("must be finite and > 0 (got {})", self.arch_lr_scale));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        let m = 1usize << (self.scales - 1);
        if self.image_size == 0 || self.image_size % m != 0 {
            return fail("image_size", format!("{} is not a positive multiple of {m}", self.image_size));
        }
        Ok(())
    }
}

/// Cosine decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
pub fn lr_schedule(epoch: usize, cfg: &SearchConfig) -> Result<f64> {
    if epoch >= cfg.epochs_total {
        return Err(Error::invalid(format!(
            "epoch {epoch} outside 0..{}",
            cfg.epochs_total
        )));
    }
    if cfg.epochs_total == 1 {
        return Ok(cfg.lr_start);
    }
    let t = epoch as f64 / (cfg.epochs_total - 1) as f64;
    Ok(cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + (std::f64::consts::PI * t).cos()))
}
