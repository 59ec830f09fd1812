use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mdn::{MdnLayout, MdnNll, MdnNllAux, RewardHeadContext};
use super::{
    Backend, Dynamics, EnsembleModel, MdnModel, ModelRole, TransitionModel, TransitionPair,
};
use crate::dataio::{fit_norm, split_indices, TransitionRecord};
use crate::error::check_len;
use crate::numcore::{
    fit_minibatch, Activation, DenseNet, DensityForm, Mse, Optimizer, OutputLoss, TrainSchedule,
};
use crate::{Error, Result};

/// Training hyperparameters shared by both backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    /// Step size for the ensemble backend.
    pub lr: f64,
    /// Step size for the mixture backend, whose weights need smaller steps.
    pub mdn_lr: f64,
    pub batch_size: usize,
    /// L2 clipping threshold on each minibatch gradient.
    pub clip: Option<f64>,
    pub optimizer: Optimizer,
    pub val_fraction: f64,
    /// Ensemble members; member `i` uses seed `seed + i`.
    pub members: usize,
    pub jitter_sigma: f64,
    pub mdn_components: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 100,
            lr: 0.01,
            mdn_lr: 0.001,
            batch_size: 32,
            clip: Some(5.0),
            optimizer: Optimizer::Adam,
            val_fraction: 0.1,
            members: 4,
            jitter_sigma: 0.05,
            mdn_components: 16,
        }
    }
}

impl TrainHyper {
    pub fn schedule(&self, backend: Backend) -> TrainSchedule {
        TrainSchedule {
            epochs: self.epochs,
            lr: match backend {
                Backend::Ensemble => self.lr,
                Backend::Mdn => self.mdn_lr,
            },
            batch_size: self.batch_size,
            clip: self.clip,
            optimizer: self.optimizer,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.members == 0 || self.mdn_components == 0 {
            return Err(Error::Config(
                "batch_size, members and mdn_components must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.mdn_lr > 0.0) {
            return Err(Error::Config(format!(
                "lr and mdn_lr must be positive, got {} and {}",
                self.lr, self.mdn_lr
            )));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Per-sample data for the reward-consistency term of the mixture loss.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxTargets {
    /// Read-out matrix and offset; its own anchor is ignored.
    pub readout: RewardHeadContext,
    /// Point the prediction is added to before the read-out, per sample.
    pub anchors: Vec<Vec<f64>>,
    /// Observed reward read-out, per sample.
    pub reward_targets: Vec<Vec<f64>>,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Points each component's mean bias at a distinct random training target,
/// so components start apart instead of all at the target centroid.
fn seed_component_means(
    net: &mut DenseNet,
    layout: MdnLayout,
    train: &[usize],
    zout: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) {
    let picks = sample(rng, train.len(), layout.components.min(train.len()));
    let last = net.layers_mut().last_mut().expect("nets have layers");
    for (k, p) in picks.iter().enumerate() {
        for d in 0..layout.dim {
            last.bias[layout.mean_at(k, d)] = zout[train[p]][d];
        }
    }
}

/// Fits one sub-model on raw `(input, target)` pairs.
///
/// Normalization statistics come from the training split of `seed`. For the
/// ensemble backend member `i` draws its own split and initialization from
/// `seed + i`.
pub fn train_model(
    role: ModelRole,
    backend: Backend,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    hyper: &TrainHyper,
    seed: u64,
    aux: Option<&AuxTargets>,
) -> Result<TransitionModel> {
    hyper.validate()?;
    check_len("training targets", inputs.len(), targets.len())?;
    if inputs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 training pairs, got {}",
            inputs.len()
        )));
    }
    if let Some(a) = aux {
        if backend != Backend::Mdn {
            return Err(Error::Config(
                "the auxiliary reward loss needs the mdn backend".into(),
            ));
        }
        check_len("aux anchors", inputs.len(), a.anchors.len())?;
        check_len("aux reward targets", inputs.len(), a.reward_targets.len())?;
    }
    let n = inputs.len();
    let (train0, _) = split_indices(n, hyper.val_fraction, seed);
    let input_norm = fit_norm(&train0, |&i| inputs[i].clone())?;
    let target_norm = fit_norm(&train0, |&i| targets[i].clone())?;
    let zin: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| input_norm.normalize(x))
        .collect::<Result<_>>()?;
    let zout: Vec<Vec<f64>> = targets
        .iter()
        .map(|y| target_norm.normalize(y))
        .collect::<Result<_>>()?;
    let in_dim = input_norm.dim();
    let out_dim = target_norm.dim();

    let (dynamics, val_loss) = match backend {
        Backend::Ensemble => {
            let grad_at = |net: &DenseNet, i: usize| net.backward(&Mse, &zin[i], &zout[i]);
            let loss_at =
                |net: &DenseNet, i: usize| Ok(Mse.evaluate(&net.forward(&zin[i])?, &zout[i])?.0);
            let mut members = Vec::with_capacity(hyper.members);
            let mut logs = Vec::with_capacity(hyper.members);
            for m in 0..hyper.members {
                let member_seed = seed.wrapping_add(m as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
                let mut net = DenseNet::xavier(
                    &layer_sizes(in_dim, &hyper.hidden, out_dim),
                    hyper.activation,
                    Activation::Identity,
                    &mut rng,
                )?;
                let (train, val) = split_indices(n, hyper.val_fraction, member_seed);
                logs.push(fit_minibatch(
                    &mut net,
                    &hyper.schedule(Backend::Ensemble),
                    &train,
                    &val,
                    &grad_at,
                    &loss_at,
                    &mut rng,
                )?);
                members.push(net);
            }
            let epochs = hyper.epochs + 1;
            let avg = (0..epochs)
                .map(|e| logs.iter().map(|l| l[e]).sum::<f64>() / logs.len() as f64)
                .collect();
            (
                Dynamics::Ensemble(EnsembleModel::new(members, hyper.jitter_sigma)?),
                avg,
            )
        }
        Backend::Mdn => {
            let layout = MdnLayout {
                components: hyper.mdn_components,
                dim: out_dim,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = DenseNet::xavier(
                &layer_sizes(in_dim, &hyper.hidden, layout.output_dim()),
                hyper.activation,
                Activation::Identity,
                &mut rng,
            )?;
            let (train, val) = split_indices(n, hyper.val_fraction, seed);
            seed_component_means(&mut net, layout, &train, &zout, &mut rng);
            let ctxs: Option<Vec<RewardHeadContext>> = aux
                .map(|a| {
                    (0..n)
                        .map(|i| {
                            let anchored = RewardHeadContext::with_offset(
                                a.readout.r_lin.clone(),
                                a.anchors[i].clone(),
                                a.readout.offset.clone(),
                            )?;
                            anchored.for_normalized(&target_norm.mean, &target_norm.std)
                        })
                        .collect::<Result<_>>()
                })
                .transpose()?;
            let form = DensityForm::Normalized;
            let loss_obj = |i: usize| -> Box<dyn OutputLoss + '_> {
                match (&ctxs, aux) {
                    (Some(c), Some(a)) => Box::new(MdnNllAux {
                        layout,
                        form,
                        ctx: &c[i],
                        reward_target: &a.reward_targets[i],
                    }),
                    _ => Box::new(MdnNll { layout, form }),
                }
            };
            let grad_at =
                |net: &DenseNet, i: usize| net.backward(loss_obj(i).as_ref(), &zin[i], &zout[i]);
            let loss_at = |net: &DenseNet, i: usize| {
                Ok(loss_obj(i).evaluate(&net.forward(&zin[i])?, &zout[i])?.0)
            };
            let log = fit_minibatch(
                &mut net,
                &hyper.schedule(Backend::Mdn),
                &train,
                &val,
                &grad_at,
                &loss_at,
                &mut rng,
            )?;
            (Dynamics::Mdn(MdnModel::new(net, layout)?), log)
        }
    };
    Ok(TransitionModel {
        role,
        dynamics,
        input_norm,
        target_norm,
        seed,
        epochs: hyper.epochs,
        val_loss,
    })
}

/// Trains the action model (`s -> s_mid - s`) and the next-state model
/// (`(s, s_mid - s) -> s_next`) of one backend.
///
/// With `readout` set (mdn only), both models also fit the reward
/// read-out of their predicted point: `s + h_a` for the action model and
/// `s'` for the next-state model.
pub fn train_transition(
    records: &[TransitionRecord],
    backend: Backend,
    hyper: &TrainHyper,
    seed: u64,
    readout: Option<&RewardHeadContext>,
) -> Result<TransitionPair> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty transition dataset".into()));
    }
    let dim = records[0].s.len();
    for (index, r) in records.iter().enumerate() {
        if r.s_mid.len() != dim || r.s_next.len() != dim {
            return Err(Error::RecordDimension {
                index,
                detail: format!("expected {dim}"),
            });
        }
    }
    let states: Vec<Vec<f64>> = records.iter().map(|r| r.s.clone()).collect();
    let actions: Vec<Vec<f64>> = records.iter().map(TransitionRecord::action).collect();
    let pairs: Vec<Vec<f64>> = states
        .iter()
        .zip(&actions)
        .map(|(s, a)| s.iter().chain(a).copied().collect())
        .collect();
    let nexts: Vec<Vec<f64>> = records.iter().map(|r| r.s_next.clone()).collect();

    let read = |ctx: &RewardHeadContext, x: &[f64]| -> Vec<f64> {
        ctx.r_lin
            .iter()
            .zip(&ctx.offset)
            .map(|(row, off)| crate::numcore::dot(row, x) + off)
            .collect()
    };
    let action_aux = readout.map(|ctx| AuxTargets {
        readout: ctx.clone(),
        anchors: states.clone(),
        reward_targets: records.iter().map(|r| read(ctx, &r.s_mid)).collect(),
    });
    let next_aux = readout.map(|ctx| AuxTargets {
        readout: ctx.clone(),
        anchors: vec![vec![0.0; dim]; records.len()],
        reward_targets: nexts.iter().map(|s| read(ctx, s)).collect(),
    });

    let action = train_model(
        ModelRole::Action,
        backend,
        &states,
        &actions,
        hyper,
        seed,
        action_aux.as_ref(),
    )?;
    let next_state = train_model(
        ModelRole::NextState,
        backend,
        &pairs,
        &nexts,
        hyper,
        seed,
        next_aux.as_ref(),
    )?;
    Ok(TransitionPair { action, next_state })
}
