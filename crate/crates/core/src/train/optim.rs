//! SGD with momentum and weight decay, and the step learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

use super::TrainConfig;

/// Epoch at which each milestone fraction takes effect.
pub fn milestone_epochs(epochs: usize, fractions: &[f64]) -> Vec<usize> {
    fractions
        .iter()
        .map(|f| (f * epochs as f64).round() as usize)
        .collect()
}

/// `base_lr` multiplied by `lr_decay` once per milestone already reached.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::arg(
            "epoch",
            format!("{epoch} outside 0..{}", cfg.epochs),
        ));
    }
    let mut lr = cfg.base_lr;
    for m in milestone_epochs(cfg.epochs, &cfg.lr_milestones) {
        if epoch >= m {
            lr *= cfg.lr_decay;
        }
    }
    Ok(lr)
}

/// Momentum buffers, one per parameter.
#[derive(Debug, Clone, Default)]
pub struct SgdState<T> {
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new() -> Self {
        SgdState { velocity: Vec::new() }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v <- momentum * v + (g + weight_decay * theta)`, `theta <- theta - lr * v`.
pub fn sgd_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: &[Tensor<T>],
    hp: SgdParams,
    state: &mut SgdState<T>,
) -> Result<()> {
    let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
    if params.len() != grads.len() {
        return Err(Error::dim(
            "sgd_step",
            format!("{} parameters but {} gradients", params.len(), grads.len()),
        ));
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    }
    if state.velocity.len() != params.len() {
        return Err(Error::dim(
            "sgd_step",
            format!("{} parameters but {} momentum buffers", params.len(), state.velocity.len()),
        ));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::dim(
                "sgd_step",
                format!(
                    "parameter {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                ),
            ));
        }
    }
    let (lr, mu, wd): (T, T, T) = (lit(hp.lr), lit(hp.momentum), lit(hp.weight_decay));
    for ((p, g), v) in params.into_iter().zip(grads).zip(&mut state.velocity) {
        for ((theta, &gv), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vel = mu * *vel + (gv + wd * *theta);
            *theta -= lr * *vel;
        }
    }
    Ok(())
}
