//! Pretext training: data, augmentation, optimisation and evaluation.

pub mod augment;
pub mod image;
pub mod optim;
pub mod pretext;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Resolution at which the discriminator is supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Canonical mask grid (crop / granularity).
    #[default]
    Canonical,
    /// Full crop resolution.
    Crop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Effective batch size.
    pub batch_size: usize,
    /// Batch size of the reference schedule, recorded for reporting only.
    pub reference_batch_size: usize,
    /// Steps per epoch; 0 means `ceil(source images / batch_size)`.
    pub steps_per_epoch: usize,
    /// Stop after this many steps; 0 means no limit.
    pub max_steps: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    /// Fractions of `epochs` after which the lr is multiplied by `lr_decay`.
    pub lr_milestones: Vec<f64>,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub supervision: Supervision,
    /// Pair every source image with itself as the noise image.
    pub self_pair: bool,
    pub precision: Precision,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            reference_batch_size: 256,
            steps_per_epoch: 0,
            max_steps: 0,
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 0.0001,
            lr_decay: 0.1,
            lr_milestones: vec![0.6, 0.8],
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            supervision: Supervision::Canonical,
            self_pair: false,
            precision: Precision::F32,
            seed: 0,
            checkpoint_every: 0,
            eval_episodes: 32,
            eval_seed: 1_000_003,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("train.epochs and train.batch_size must be positive".into());
        }
        if let Some(f) = self.lr_milestones.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return bad(format!("train.lr_milestones entry {f} must lie in (0, 1)"));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] > w[1]) {
            return bad("train.lr_milestones must be non-decreasing".into());
        }
        if !(self.base_lr >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("train.base_lr, momentum and weight_decay must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || !(self.focal_gamma >= 0.0) {
            return bad("train.focal_alpha must lie in [0, 1] and focal_gamma be non-negative".into());
        }
        Ok(())
    }

    pub fn focal(&self) -> crate::ops::FocalParams {
        crate::ops::FocalParams {
            alpha: self.focal_alpha,
            gamma: self.focal_gamma,
        }
    }
}

/// Seed for work item `index` under `seed` (splitmix64 finaliser).
///
/// Workers seed their generator from this, so results do not depend on
/// how items are distributed across threads.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
