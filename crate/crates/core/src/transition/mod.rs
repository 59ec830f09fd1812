//! Learned stochastic dynamics in the semantic space.
//!
//! Two sub-models compose one turn: an action model `h_s -> h_a` and a
//! next-state model `(h_s, h_a) -> h_s'`. Either can be backed by a deep
//! ensemble (member choice plus isotropic jitter) or by a mixture density
//! network. Both normalize inputs and targets with their own statistics.

mod diag;
mod mdn;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use diag::{
    diagnostics_from_pairs, prediction_diagnostics, DiagSummary, COS_BINS, RATIO_BINS, RATIO_MAX,
};
pub use mdn::{
    mdn_loss, mdn_loss_aux, MdnHead, MdnLayout, MdnNll, MdnNllAux, RewardHeadContext,
    HARM_VARIANCE_FLOOR, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use train::{train_model, train_transition, AuxTargets, TrainHyper};

use crate::dataio::{Checkpoint, NormStats};
use crate::error::check_len;
use crate::numcore::{softmax, DenseNet};
use crate::{Error, Result, SemAction, SemPoint};

pub const KIND_ENSEMBLE: &str = "dense-ensemble";
pub const KIND_MDN: &str = "mdn";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Ensemble,
    Mdn,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" | "de" | KIND_ENSEMBLE => Ok(Backend::Ensemble),
            "mdn" => Ok(Backend::Mdn),
            other => Err(Error::Config(format!(
                "unknown transition backend `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Ensemble => "ensemble",
            Backend::Mdn => "mdn",
        })
    }
}

/// Which half of a turn a model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    /// `h_s -> h_a`
    Action,
    /// `(h_s, h_a) -> h_s'`
    NextState,
}

impl ModelRole {
    pub fn tag(self) -> &'static str {
        match self {
            ModelRole::Action => "action",
            ModelRole::NextState => "next_state",
        }
    }

    fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "action" => Ok(ModelRole::Action),
            "next_state" => Ok(ModelRole::NextState),
            other => Err(Error::Config(format!("unknown model role `{other}`"))),
        }
    }
}

/// Deterministic nets whose disagreement, plus Gaussian jitter in
/// normalized units, supplies the sampling noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<DenseNet>,
    pub jitter_sigma: f64,
}

impl EnsembleModel {
    pub fn new(members: Vec<DenseNet>, jitter_sigma: f64) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::InvalidInput(
                "ensemble needs at least one member".into(),
            ));
        };
        if members
            .iter()
            .any(|m| m.input_dim() != first.input_dim() || m.output_dim() != first.output_dim())
        {
            return Err(Error::InvalidInput(
                "ensemble members disagree on dimensions".into(),
            ));
        }
        if !(jitter_sigma >= 0.0) || !jitter_sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "jitter sigma must be >= 0, got {jitter_sigma}"
            )));
        }
        Ok(Self {
            members,
            jitter_sigma,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.members[0].output_dim()
    }

    /// Returns the chosen member index alongside the sample.
    pub fn sample_with_member(
        &self,
        z: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<(usize, Vec<f64>)> {
        let idx = rng.random_range(0..self.members.len());
        let mut out = self.members[idx].forward(z)?;
        if self.jitter_sigma > 0.0 {
            for v in &mut out {
                let e: f64 = rng.sample(StandardNormal);
                *v += self.jitter_sigma * e;
            }
        }
        Ok((idx, out))
    }

    pub fn mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.output_dim()];
        for m in &self.members {
            acc.iter_mut().zip(m.forward(z)?).for_each(|(a, v)| *a += v);
        }
        let n = self.members.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdnModel {
    pub net: DenseNet,
    pub layout: MdnLayout,
}

impl MdnModel {
    pub fn new(net: DenseNet, layout: MdnLayout) -> Result<Self> {
        check_len("mdn network output", layout.output_dim(), net.output_dim())?;
        Ok(Self { net, layout })
    }

    pub fn head(&self, z: &[f64]) -> Result<MdnHead> {
        MdnHead::from_raw(self.layout, &self.net.forward(z)?)
    }

    /// Same draw as `self.head(z)?.sample(rng)`, evaluating only the weight
    /// logits and the drawn component's rows of the output layer.
    pub fn sample(&self, z: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let l = self.layout;
        let h = self.net.hidden_forward(z)?;
        let logit_rows: Vec<usize> = (0..l.components).collect();
        let Some(logits) = self.net.output_rows(&h, &logit_rows) else {
            return Ok(self.head(z)?.sample(rng));
        };
        crate::numcore::ensure_finite("mdn head output", &logits)?;
        let k = mdn::draw_component(&softmax(&logits), rng);
        let rows: Vec<usize> = (0..l.dim)
            .map(|d| l.mean_at(k, d))
            .chain((0..l.dim).map(|d| l.log_sigma_at(k, d)))
            .collect();
        let v = self.net.output_rows(&h, &rows).expect("checked above");
        crate::numcore::ensure_finite("mdn head output", &v)?;
        Ok((0..l.dim)
            .map(|d| {
                let sigma = v[l.dim + d].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp();
                let e: f64 = rng.sample(StandardNormal);
                v[d] + sigma * e
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    Ensemble(EnsembleModel),
    Mdn(MdnModel),
}

/// A trained sub-model together with its normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub role: ModelRole,
    pub dynamics: Dynamics,
    pub input_norm: NormStats,
    pub target_norm: NormStats,
    pub seed: u64,
    pub epochs: usize,
    pub val_loss: Vec<f64>,
}

impl TransitionModel {
    pub fn backend(&self) -> Backend {
        match self.dynamics {
            Dynamics::Ensemble(_) => Backend::Ensemble,
            Dynamics::Mdn(_) => Backend::Mdn,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_norm.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.target_norm.dim()
    }

    /// One stochastic prediction in raw units.
    pub fn sample(&self, input: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        crate::numcore::ensure_finite("model input", input)?;
        let z = self.input_norm.normalize(input)?;
        let out = match &self.dynamics {
            Dynamics::Ensemble(e) => e.sample_with_member(&z, rng)?.1,
            Dynamics::Mdn(m) => m.sample(&z, rng)?,
        };
        let raw = self.target_norm.denormalize(&out)?;
        crate::numcore::ensure_finite("model sample", &raw)
            .map_err(|_| Error::Model("non-finite sample".into()))?;
        Ok(raw)
    }

    /// The model's average prediction (ensemble mean or mixture mean), raw units.
    pub fn predict_mean(&self, input: &[f64]) -> Result<Vec<f64>> {
        let z = self.input_norm.normalize(input)?;
        let out = match &self.dynamics {
            Dynamics::Ensemble(e) => e.mean(&z)?,
            Dynamics::Mdn(m) => m.head(&z)?.mean(),
        };
        self.target_norm.denormalize(&out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (kind, shapes, params, members, components, jitter) = match &self.dynamics {
            Dynamics::Ensemble(e) => (
                KIND_ENSEMBLE,
                e.members[0].shapes(),
                e.members.iter().flat_map(|m| m.params()).collect(),
                Some(e.members.len()),
                None,
                Some(e.jitter_sigma),
            ),
            Dynamics::Mdn(m) => (
                KIND_MDN,
                m.net.shapes(),
                m.net.params(),
                None,
                Some(m.layout.components),
                None,
            ),
        };
        Checkpoint {
            kind: kind.to_string(),
            shapes,
            params,
            norm_mean: self.input_norm.mean.clone(),
            norm_std: self.input_norm.std.clone(),
            seed: self.seed,
            epochs: self.epochs,
            role: Some(self.role.tag().to_string()),
            target_mean: Some(self.target_norm.mean.clone()),
            target_std: Some(self.target_norm.std.clone()),
            members,
            mdn_components: components,
            jitter_sigma: jitter,
            val_loss: self.val_loss.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.validate()?;
        let role = ModelRole::from_tag(
            ck.role
                .as_deref()
                .ok_or(Error::Untrained("checkpoint has no model role"))?,
        )?;
        let target_norm = ck
            .target_norm()
            .ok_or(Error::Untrained("checkpoint has no target statistics"))?;
        let dynamics = match ck.kind.as_str() {
            KIND_ENSEMBLE => {
                let per = ck.params_per_member();
                let members = ck
                    .params
                    .chunks(per)
                    .map(|chunk| DenseNet::from_shapes(&ck.shapes, chunk))
                    .collect::<Result<Vec<_>>>()?;
                Dynamics::Ensemble(EnsembleModel::new(members, ck.jitter_sigma.unwrap_or(0.0))?)
            }
            KIND_MDN => {
                let components = ck
                    .mdn_components
                    .ok_or_else(|| Error::Config("mdn checkpoint lacks mdn_components".into()))?;
                let layout = MdnLayout {
                    components,
                    dim: target_norm.dim(),
                };
                Dynamics::Mdn(MdnModel::new(
                    DenseNet::from_shapes(&ck.shapes, &ck.params)?,
                    layout,
                )?)
            }
            other => {
                return Err(Error::Config(format!(
                    "not a transition checkpoint kind: `{other}`"
                )))
            }
        };
        let model = Self {
            role,
            dynamics,
            input_norm: ck.input_norm(),
            target_norm,
            seed: ck.seed,
            epochs: ck.epochs,
            val_loss: ck.val_loss.clone(),
        };
        model.check_dims()?;
        Ok(model)
    }

    fn check_dims(&self) -> Result<()> {
        let (net_in, net_out) = match &self.dynamics {
            Dynamics::Ensemble(e) => (e.input_dim(), e.output_dim()),
            Dynamics::Mdn(m) => (m.net.input_dim(), m.layout.dim),
        };
        check_len("model input statistics", net_in, self.input_dim())?;
        check_len("model target statistics", net_out, self.output_dim())?;
        let expected_in = match self.role {
            ModelRole::Action => self.output_dim(),
            ModelRole::NextState => 2 * self.output_dim(),
        };
        check_len("model input width for role", expected_in, self.input_dim())
    }
}

/// Draws an action vector for state `h_s`.
pub fn sample_action(
    model: &TransitionModel,
    h_s: &[f64],
    rng: &mut dyn RngCore,
) -> Result<SemAction> {
    if model.role != ModelRole::Action {
        return Err(Error::Model("sample_action needs an action model".into()));
    }
    model.sample(h_s, rng)
}

/// Draws the next state for `(h_s, h_a)`.
pub fn sample_next_state(
    model: &TransitionModel,
    h_s: &[f64],
    h_a: &[f64],
    rng: &mut dyn RngCore,
) -> Result<SemPoint> {
    if model.role != ModelRole::NextState {
        return Err(Error::Model(
            "sample_next_state needs a next-state model".into(),
        ));
    }
    check_len("action vector", h_s.len(), h_a.len())?;
    let input: Vec<f64> = h_s.iter().chain(h_a).copied().collect();
    model.sample(&input, rng)
}

/// The two sub-models of one backend.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPair {
    pub action: TransitionModel,
    pub next_state: TransitionModel,
}

impl TransitionPair {
    pub fn dim(&self) -> usize {
        self.action.output_dim()
    }

    /// Writes `<prefix>.action.json` and `<prefix>.next_state.json`.
    /// `PREFIX.action.json` and `PREFIX.next_state.json`.
    pub fn paths(prefix: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            std::path::PathBuf::from(s)
        };
        (with(".action.json"), with(".next_state.json"))
    }

    pub fn save(
        &self,
        prefix: &std::path::Path,
    ) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        let (a, n) = Self::paths(prefix);
        self.action.to_checkpoint().save(&a)?;
        self.next_state.to_checkpoint().save(&n)?;
        Ok((a, n))
    }

    pub fn load(action: &std::path::Path, next_state: &std::path::Path) -> Result<Self> {
        let action = TransitionModel::from_checkpoint(&Checkpoint::load(action)?)?;
        let next_state = TransitionModel::from_checkpoint(&Checkpoint::load(next_state)?)?;
        if action.role != ModelRole::Action || next_state.role != ModelRole::NextState {
            return Err(Error::Config(
                "checkpoint roles do not match (action, next_state)".into(),
            ));
        }
        check_len(
            "next-state model dimension",
            action.output_dim(),
            next_state.output_dim(),
        )?;
        Ok(Self { action, next_state })
    }
}
