use rand::seq::SliceRandom;
use rand::Rng;

use serde::{Deserialize, Serialize};

use super::{AdamState, DenseNet, GradBundle};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Fixed-rate gradient descent.
    #[default]
    Sgd,
    Adam,
}

/// Minibatch training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip: Option<f64>,
    pub optimizer: Optimizer,
}

fn mean_loss(
    net: &DenseNet,
    idx: &[usize],
    loss_at: &dyn Fn(&DenseNet, usize) -> Result<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for &i in idx {
        total += loss_at(net, i)?;
    }
    Ok(total / idx.len() as f64)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            epoch,
            detail: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Runs minibatch gradient descent over the sample indices in `train`.
///
/// Returns the mean validation loss before training and after each epoch;
/// an empty `val` falls back to the training indices. Any non-finite
/// gradient or loss aborts with [`Error::Diverged`].
pub fn fit_minibatch<R: Rng + ?Sized>(
    net: &mut DenseNet,
    schedule: &TrainSchedule,
    train: &[usize],
    val: &[usize],
    grad_at: &dyn Fn(&DenseNet, usize) -> Result<GradBundle>,
    loss_at: &dyn Fn(&DenseNet, usize) -> Result<f64>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training split".into()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let val = if val.is_empty() { train } else { val };
    let mut log = vec![mean_loss(net, val, loss_at)?];
    let mut order = train.to_vec();
    let mut adam = (schedule.optimizer == Optimizer::Adam).then(|| AdamState::new(net));
    for epoch in 1..=schedule.epochs {
        order.shuffle(rng);
        for batch in order.chunks(schedule.batch_size) {
            let mut acc = GradBundle::zeros_like(net);
            for &i in batch {
                acc.accumulate(&grad_at(net, i).map_err(|e| diverged(epoch, e))?);
            }
            acc.scale(1.0 / batch.len() as f64);
            match adam.as_mut() {
                Some(state) => net.adam_step(&acc, state, schedule.lr, schedule.clip),
                None => net.sgd_step(&acc, schedule.lr, schedule.clip),
            }
            .map_err(|e| diverged(epoch, e))?;
        }
        let v = mean_loss(net, val, loss_at).map_err(|e| diverged(epoch, e))?;
        if !v.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite validation loss".into(),
            });
        }
        log.push(v);
    }
    Ok(log)
}
