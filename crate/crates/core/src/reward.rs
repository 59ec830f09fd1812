//! State-value style reward model `F_R` over semantic points.
//!
//! The per-turn reward is recovered as `F_R(s') - F_R(s)`. Inputs are
//! normalized; labels stay in raw units.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{fit_norm, split_indices, Checkpoint, NormStats, RewardRecord};
use crate::error::check_len;
use crate::numcore::{fit_minibatch, Activation, DenseNet, Mse, OutputLoss, TrainSchedule};
use crate::transition::RewardHeadContext;
use crate::{Error, Result};

pub const KIND_LINEAR: &str = "reward-linear";
pub const KIND_DENSE: &str = "reward-dense";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardForm {
    /// One identity layer, `n -> 1`.
    #[default]
    Linear,
    Dense,
}

impl RewardForm {
    pub fn kind(self) -> &'static str {
        match self {
            RewardForm::Linear => KIND_LINEAR,
            RewardForm::Dense => KIND_DENSE,
        }
    }
}

impl fmt::Display for RewardForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardForm::Linear => "linear",
            RewardForm::Dense => "dense",
        })
    }
}

impl FromStr for RewardForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(RewardForm::Linear),
            "dense" => Ok(RewardForm::Dense),
            other => Err(Error::Config(format!("unknown reward form {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardHyper {
    pub form: RewardForm,
    /// Hidden widths for the dense form; ignored by the linear form.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip: Option<f64>,
    pub val_fraction: f64,
}

impl Default for RewardHyper {
    fn default() -> Self {
        Self {
            form: RewardForm::Linear,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 50,
            lr: 0.05,
            batch_size: 32,
            clip: Some(5.0),
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub net: DenseNet,
    pub norm: NormStats,
    pub form: RewardForm,
    pub seed: u64,
    pub epochs: usize,
    pub val_loss: Vec<f64>,
}

impl RewardModel {
    pub fn new(net: DenseNet, norm: NormStats, form: RewardForm) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::Shape {
                what: "reward net output",
                expected: 1,
                got: net.output_dim(),
            });
        }
        check_len("reward normalization", net.input_dim(), norm.dim())?;
        if form == RewardForm::Linear
            && (net.layers().len() != 1 || net.layers()[0].activation != Activation::Identity)
        {
            return Err(Error::Model(
                "a linear reward model must be a single identity layer".into(),
            ));
        }
        Ok(Self {
            net,
            norm,
            form,
            seed: 0,
            epochs: 0,
            val_loss: Vec::new(),
        })
    }

    /// A linear model with raw-unit weights `w` and bias `b`.
    pub fn linear(w: &[f64], b: f64) -> Result<Self> {
        let layer =
            crate::numcore::Layer::new(w.len(), 1, Activation::Identity, w.to_vec(), vec![b])?;
        Self::new(
            DenseNet::from_layers(vec![layer])?,
            NormStats::identity(w.len()),
            RewardForm::Linear,
        )
    }

    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    /// `F_R(h)`.
    pub fn value(&self, h: &[f64]) -> Result<f64> {
        let z = self.norm.normalize(h)?;
        Ok(self.net.forward(&z)?[0])
    }

    /// `F_R(h_next) - F_R(h)`.
    pub fn instantaneous_reward(&self, h: &[f64], h_next: &[f64]) -> Result<f64> {
        check_len("next state", h.len(), h_next.len())?;
        Ok(self.value(h_next)? - self.value(h)?)
    }

    /// Raw-unit weights and bias of a linear model, folding in normalization.
    pub fn linear_weights(&self) -> Option<(Vec<f64>, f64)> {
        if self.form != RewardForm::Linear {
            return None;
        }
        let layer = &self.net.layers()[0];
        let w: Vec<f64> = layer
            .weights
            .iter()
            .zip(&self.norm.std)
            .map(|(w, s)| w / s)
            .collect();
        let b = layer.bias[0]
            - w.iter()
                .zip(&self.norm.mean)
                .map(|(w, m)| w * m)
                .sum::<f64>();
        Some((w, b))
    }

    /// Read-out context for the auxiliary mixture loss (anchor zero).
    pub fn head_context(&self) -> Option<Result<RewardHeadContext>> {
        self.linear_weights().map(|(w, b)| {
            RewardHeadContext::with_offset(vec![w.clone()], vec![0.0; w.len()], vec![b])
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: self.form.kind().to_string(),
            shapes: self.net.shapes(),
            params: self.net.params(),
            norm_mean: self.norm.mean.clone(),
            norm_std: self.norm.std.clone(),
            seed: self.seed,
            epochs: self.epochs,
            role: None,
            target_mean: None,
            target_std: None,
            members: None,
            mdn_components: None,
            jitter_sigma: None,
            val_loss: self.val_loss.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        let form = match ck.kind.as_str() {
            KIND_LINEAR => RewardForm::Linear,
            KIND_DENSE => RewardForm::Dense,
            other => {
                return Err(Error::Model(format!(
                    "not a reward checkpoint: kind {other:?}"
                )))
            }
        };
        let net = DenseNet::from_shapes(&ck.shapes, &ck.params)?;
        let mut model = Self::new(net, ck.input_norm(), form)?;
        model.seed = ck.seed;
        model.epochs = ck.epochs;
        model.val_loss = ck.val_loss.clone();
        Ok(model)
    }
}

/// Fits `F_R` to labeled points with an MSE loss.
pub fn train_reward(
    records: &[RewardRecord],
    hyper: &RewardHyper,
    seed: u64,
) -> Result<RewardModel> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 reward records, got {}",
            records.len()
        )));
    }
    if !(hyper.val_fraction >= 0.0 && hyper.val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must lie in [0, 1), got {}",
            hyper.val_fraction
        )));
    }
    let dim = records[0].s.len();
    for (index, r) in records.iter().enumerate() {
        if r.s.len() != dim {
            return Err(Error::RecordDimension {
                index,
                detail: format!("expected {dim}, got {}", r.s.len()),
            });
        }
        if !r.y.is_finite() {
            return Err(Error::NonFinite("reward label"));
        }
    }
    let (train, val) = split_indices(records.len(), hyper.val_fraction, seed);
    let train_records: Vec<&RewardRecord> = train.iter().map(|&i| &records[i]).collect();
    let norm = fit_norm(&train_records, |r| r.s.clone())?;
    let zin: Vec<Vec<f64>> = records
        .iter()
        .map(|r| norm.normalize(&r.s))
        .collect::<Result<_>>()?;
    let labels: Vec<[f64; 1]> = records.iter().map(|r| [r.y]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = match hyper.form {
        RewardForm::Linear => DenseNet::xavier(
            &[dim, 1],
            Activation::Identity,
            Activation::Identity,
            &mut rng,
        )?,
        RewardForm::Dense => {
            let mut sizes = vec![dim];
            sizes.extend_from_slice(&hyper.hidden);
            sizes.push(1);
            DenseNet::xavier(&sizes, hyper.activation, Activation::Identity, &mut rng)?
        }
    };
    let grad_at = |net: &DenseNet, i: usize| net.backward(&Mse, &zin[i], &labels[i]);
    let loss_at =
        |net: &DenseNet, i: usize| Ok(Mse.evaluate(&net.forward(&zin[i])?, &labels[i])?.0);
    let schedule = TrainSchedule {
        epochs: hyper.epochs,
        lr: hyper.lr,
        batch_size: hyper.batch_size,
        clip: hyper.clip,
        optimizer: Default::default(),
    };
    let val_loss = fit_minibatch(
        &mut net, &schedule, &train, &val, &grad_at, &loss_at, &mut rng,
    )?;
    let mut model = RewardModel::new(net, norm, hyper.form)?;
    model.seed = seed;
    model.epochs = hyper.epochs;
    model.val_loss = val_loss;
    Ok(model)
}
