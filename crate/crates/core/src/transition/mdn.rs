//! Mixture density heads: parsing raw network outputs, likelihoods, the
//! optional reward-consistency term, and their gradients.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::check_len;
use crate::numcore::{gaussian_logpdf_diag, log_sum_exp, softmax, DensityForm, OutputLoss, LN_2PI};
use crate::{Error, Result};

/// Bounds on the raw log-sigma outputs before the exponential link.
pub const LOG_SIGMA_MIN: f64 = -3.0;
pub const LOG_SIGMA_MAX: f64 = 4.0;

/// Floor on the diagonal of a transformed reward covariance.
pub const HARM_VARIANCE_FLOOR: f64 = 1e-12;

/// How a flat network output splits into mixture parameters:
/// `components` logits, then `components * dim` means, then
/// `components * dim` raw log-sigmas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MdnLayout {
    pub components: usize,
    pub dim: usize,
}

impl MdnLayout {
    pub fn output_dim(&self) -> usize {
        self.components * (1 + 2 * self.dim)
    }

    pub(crate) fn mean_at(&self, k: usize, d: usize) -> usize {
        self.components + k * self.dim + d
    }

    pub(crate) fn log_sigma_at(&self, k: usize, d: usize) -> usize {
        self.components + self.components * self.dim + k * self.dim + d
    }
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnHead {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<Vec<f64>>,
}

impl MdnHead {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sigmas: Vec<Vec<f64>>) -> Result<Self> {
        let head = Self {
            weights,
            means,
            sigmas,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn from_raw(layout: MdnLayout, raw: &[f64]) -> Result<Self> {
        check_len("mdn raw output", layout.output_dim(), raw.len())?;
        crate::numcore::ensure_finite("mdn head output", raw)?;
        let weights = softmax(&raw[..layout.components]);
        let means = (0..layout.components)
            .map(|k| (0..layout.dim).map(|d| raw[layout.mean_at(k, d)]).collect())
            .collect();
        let sigmas = (0..layout.components)
            .map(|k| {
                (0..layout.dim)
                    .map(|d| {
                        raw[layout.log_sigma_at(k, d)]
                            .clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)
                            .exp()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            weights,
            means,
            sigmas,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::InvalidInput(
                "mixture needs at least one component".into(),
            ));
        }
        check_len("mixture means", k, self.means.len())?;
        check_len("mixture sigmas", k, self.sigmas.len())?;
        let dim = self.dim();
        for (m, s) in self.means.iter().zip(&self.sigmas) {
            check_len("mixture mean", dim, m.len())?;
            check_len("mixture sigma", dim, s.len())?;
            crate::numcore::ensure_finite("mixture mean", m)?;
            if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidInput(
                    "mixture sigmas must be positive".into(),
                ));
            }
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput(
                "mixture weights must be nonnegative".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(())
    }

    /// `Σ φ_k μ_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            out.iter_mut().zip(m).for_each(|(o, v)| *o += w * v);
        }
        out
    }

    /// Draws a component index proportionally to the mixture weights.
    pub fn sample_component(&self, rng: &mut (impl RngCore + ?Sized)) -> usize {
        draw_component(&self.weights, rng)
    }

    pub fn sample(&self, rng: &mut (impl RngCore + ?Sized)) -> Vec<f64> {
        let k = self.sample_component(rng);
        self.means[k]
            .iter()
            .zip(&self.sigmas[k])
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect()
    }

    fn component_log_terms(&self, target: &[f64], form: DensityForm) -> Result<Vec<f64>> {
        check_len("mixture target", self.dim(), target.len())?;
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sigmas))
            .map(|(w, (m, s))| Ok(w.ln() + gaussian_logpdf_diag(target, m, s, form)?))
            .collect()
    }
}

pub(crate) fn draw_component(weights: &[f64], rng: &mut (impl RngCore + ?Sized)) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding can leave `acc` a hair below 1
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Linear reward read-out used by the auxiliary likelihood term:
/// `reward(x) = R x + offset`, evaluated at `anchor + prediction`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardHeadContext {
    /// One row per reward coordinate, `n` columns.
    pub r_lin: Vec<Vec<f64>>,
    pub anchor: Vec<f64>,
    pub offset: Vec<f64>,
}

impl RewardHeadContext {
    pub fn new(r_lin: Vec<Vec<f64>>, anchor: Vec<f64>) -> Result<Self> {
        let offset = vec![0.0; r_lin.len()];
        Self::with_offset(r_lin, anchor, offset)
    }

    pub fn with_offset(r_lin: Vec<Vec<f64>>, anchor: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if r_lin.is_empty() {
            return Err(Error::InvalidInput(
                "reward matrix needs at least one row".into(),
            ));
        }
        for row in &r_lin {
            check_len("reward matrix row", anchor.len(), row.len())?;
        }
        check_len("reward offset", r_lin.len(), offset.len())?;
        Ok(Self {
            r_lin,
            anchor,
            offset,
        })
    }

    pub fn reward_dim(&self) -> usize {
        self.r_lin.len()
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Mean and covariance of the reward read-out under one component:
    /// `R (μ + anchor) + offset` and `R diag(σ²) Rᵀ`.
    pub fn harm_moments(&self, mu: &[f64], sigma: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        check_len("component mean", self.dim(), mu.len())?;
        check_len("component sigma", self.dim(), sigma.len())?;
        let r = self.reward_dim();
        let mean = self
            .r_lin
            .iter()
            .zip(&self.offset)
            .map(|(row, off)| {
                row.iter()
                    .zip(mu.iter().zip(&self.anchor))
                    .map(|(w, (m, a))| w * (m + a))
                    .sum::<f64>()
                    + off
            })
            .collect();
        let mut cov = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in 0..=i {
                let v: f64 = (0..self.dim())
                    .map(|d| self.r_lin[i][d] * self.r_lin[j][d] * sigma[d] * sigma[d])
                    .sum();
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
            if cov[(i, i)] < HARM_VARIANCE_FLOOR {
                cov[(i, i)] = HARM_VARIANCE_FLOOR;
            }
        }
        Ok((mean, cov))
    }

    /// Re-expresses the context for a model whose predictions live in
    /// normalized units `z`, where the raw prediction is `mean + std ⊙ z`.
    pub fn for_normalized(&self, target_mean: &[f64], target_std: &[f64]) -> Result<Self> {
        check_len("target mean", self.dim(), target_mean.len())?;
        check_len("target std", self.dim(), target_std.len())?;
        let r_lin = self
            .r_lin
            .iter()
            .map(|row| row.iter().zip(target_std).map(|(w, s)| w * s).collect())
            .collect();
        let offset = self
            .r_lin
            .iter()
            .zip(&self.offset)
            .map(|(row, off)| {
                row.iter()
                    .zip(target_mean.iter().zip(&self.anchor))
                    .map(|(w, (m, a))| w * (m + a))
                    .sum::<f64>()
                    + off
            })
            .collect();
        Self::with_offset(r_lin, vec![0.0; self.dim()], offset)
    }
}

struct HarmTerm {
    log_density: f64,
    /// `Rᵀ C⁻¹ e`, one entry per state dimension.
    mean_grad: Vec<f64>,
    /// `(R_dᵀ C⁻¹ e)² - R_dᵀ C⁻¹ R_d`, one entry per state dimension.
    var_grad: Vec<f64>,
}

fn harm_term(
    ctx: &RewardHeadContext,
    reward_target: &[f64],
    mu: &[f64],
    sigma: &[f64],
    form: DensityForm,
) -> Result<HarmTerm> {
    check_len("reward target", ctx.reward_dim(), reward_target.len())?;
    let (mean, cov) = ctx.harm_moments(mu, sigma)?;
    let r = ctx.reward_dim();
    let n = ctx.dim();
    let chol = cov
        .clone()
        .cholesky()
        .filter(|c| {
            c.l()
                .diagonal()
                .iter()
                .all(|d| d * d >= 0.5 * HARM_VARIANCE_FLOOR)
        })
        .ok_or_else(|| Error::Singular(format!("reward covariance {cov}")))?;
    let e = DVector::from_iterator(r, reward_target.iter().zip(&mean).map(|(y, m)| y - m));
    let w = chol.solve(&e);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let constant = match form {
        DensityForm::Normalized => -0.5 * r as f64 * LN_2PI,
        DensityForm::ConstantFree => 0.0,
    };
    let log_density = -0.5 * e.dot(&w) - 0.5 * log_det + constant;
    let rmat = DMatrix::from_fn(r, n, |i, d| ctx.r_lin[i][d]);
    let cinv_r = chol.solve(&rmat);
    let mut mean_grad = vec![0.0; n];
    let mut var_grad = vec![0.0; n];
    for d in 0..n {
        let rw: f64 = (0..r).map(|i| rmat[(i, d)] * w[i]).sum();
        let rcr: f64 = (0..r).map(|i| rmat[(i, d)] * cinv_r[(i, d)]).sum();
        mean_grad[d] = rw;
        var_grad[d] = rw * rw - rcr;
    }
    Ok(HarmTerm {
        log_density,
        mean_grad,
        var_grad,
    })
}

/// `-ln Σ_k φ_k N(target | μ_k, σ_k)`, via log-sum-exp.
pub fn mdn_loss(head: &MdnHead, target: &[f64], form: DensityForm) -> Result<f64> {
    head.validate()?;
    crate::numcore::ensure_finite("mdn target", target)?;
    let terms = head.component_log_terms(target, form)?;
    Ok(-log_sum_exp(&terms))
}

/// Negative log-likelihood with the reward read-out treated as an
/// independent second observation per component.
pub fn mdn_loss_aux(
    head: &MdnHead,
    target: &[f64],
    reward_target: &[f64],
    ctx: &RewardHeadContext,
    form: DensityForm,
) -> Result<f64> {
    head.validate()?;
    crate::numcore::ensure_finite("mdn target", target)?;
    let mut terms = head.component_log_terms(target, form)?;
    for (k, t) in terms.iter_mut().enumerate() {
        *t += harm_term(ctx, reward_target, &head.means[k], &head.sigmas[k], form)?.log_density;
    }
    Ok(-log_sum_exp(&terms))
}

/// Mixture NLL as a loss on the raw network output.
#[derive(Debug, Clone, Copy)]
pub struct MdnNll {
    pub layout: MdnLayout,
    pub form: DensityForm,
}

/// Mixture NLL plus the reward-consistency term, on the raw network output.
#[derive(Debug, Clone, Copy)]
pub struct MdnNllAux<'a> {
    pub layout: MdnLayout,
    pub form: DensityForm,
    pub ctx: &'a RewardHeadContext,
    pub reward_target: &'a [f64],
}

fn mdn_value_and_grad(
    layout: MdnLayout,
    form: DensityForm,
    raw: &[f64],
    target: &[f64],
    aux: Option<(&RewardHeadContext, &[f64])>,
) -> Result<(f64, Vec<f64>)> {
    let head = MdnHead::from_raw(layout, raw)?;
    check_len("mdn target", layout.dim, target.len())?;
    let k_count = layout.components;
    let mut terms = head.component_log_terms(target, form)?;
    let mut harms = Vec::new();
    if let Some((ctx, reward_target)) = aux {
        for k in 0..k_count {
            let h = harm_term(ctx, reward_target, &head.means[k], &head.sigmas[k], form)?;
            terms[k] += h.log_density;
            harms.push(h);
        }
    }
    let lse = log_sum_exp(&terms);
    if !lse.is_finite() {
        return Err(Error::NonFinite("mdn log-likelihood"));
    }
    let resp: Vec<f64> = terms.iter().map(|t| (t - lse).exp()).collect();
    let mut grad = vec![0.0; raw.len()];
    for k in 0..k_count {
        grad[k] = head.weights[k] - resp[k];
        for d in 0..layout.dim {
            let mu = head.means[k][d];
            let sigma = head.sigmas[k][d];
            let var = sigma * sigma;
            let diff = target[d] - mu;
            let mut dl_dmu = diff / var;
            // d(log term)/d(log sigma)
            let mut dl_dls = diff * diff / var - 1.0;
            if let Some(h) = harms.get(k) {
                dl_dmu += h.mean_grad[d];
                dl_dls += var * h.var_grad[d];
            }
            grad[layout.mean_at(k, d)] = -resp[k] * dl_dmu;
            let raw_ls = raw[layout.log_sigma_at(k, d)];
            grad[layout.log_sigma_at(k, d)] = if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&raw_ls) {
                -resp[k] * dl_dls
            } else {
                0.0
            };
        }
    }
    Ok((-lse, grad))
}

impl OutputLoss for MdnNll {
    fn evaluate(&self, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        mdn_value_and_grad(self.layout, self.form, output, target, None)
    }
}

impl OutputLoss for MdnNllAux<'_> {
    fn evaluate(&self, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        mdn_value_and_grad(
            self.layout,
            self.form,
            output,
            target,
            Some((self.ctx, self.reward_target)),
        )
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn single_component_at_target_has_zero_constant_free_loss() {
        let head = MdnHead::new(vec![1.0], vec![vec![0.7, -0.2]], vec![vec![1.0, 1.0]]).unwrap();
        let loss = mdn_loss(&head, &[0.7, -0.2], DensityForm::ConstantFree).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn two_component_half_weight() {
        let head = MdnHead::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![100.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        let loss = mdn_loss(&head, &[0.0], DensityForm::ConstantFree).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn far_target_stays_finite() {
        let head = MdnHead::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![vec![0.01, 0.01], vec![0.01, 0.01]],
        )
        .unwrap();
        // quadratic terms around 1e4 and beyond
        let loss = mdn_loss(&head, &[1.5, 1.5], DensityForm::Normalized).unwrap();
        assert!(loss.is_finite());
        assert!(loss > 1e3);
    }

    #[test]
    fn harm_moments_of_row_sum() {
        let ctx = RewardHeadContext::new(vec![vec![1.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let (m, c) = ctx.harm_moments(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(m, vec![3.0]);
        assert_eq!(c[(0, 0)], 5.0);
    }

    #[test]
    fn identity_readout_squares_the_component_density() {
        let head = MdnHead::new(
            vec![0.25, 0.75],
            vec![vec![0.1, -0.3], vec![1.0, 0.4]],
            vec![vec![0.5, 1.2], vec![0.8, 0.9]],
        )
        .unwrap();
        let ctx =
            RewardHeadContext::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap();
        let t = [0.3, 0.1];
        let got = mdn_loss_aux(&head, &t, &t, &ctx, DensityForm::ConstantFree).unwrap();
        let expected = -(0..2)
            .map(|k| {
                let p = gaussian_logpdf_diag(
                    &t,
                    &head.means[k],
                    &head.sigmas[k],
                    DensityForm::ConstantFree,
                )
                .unwrap()
                .exp();
                head.weights[k] * p * p
            })
            .sum::<f64>()
            .ln();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn aux_loss_is_smallest_at_the_readout_mean() {
        let head = MdnHead::new(vec![1.0], vec![vec![0.5, -1.0]], vec![vec![0.3, 0.6]]).unwrap();
        let ctx = RewardHeadContext::new(vec![vec![2.0, 1.0]], vec![0.1, 0.2]).unwrap();
        let (m, _) = ctx.harm_moments(&head.means[0], &head.sigmas[0]).unwrap();
        let t = [0.4, -0.9];
        let best = mdn_loss_aux(&head, &t, &m, &ctx, DensityForm::Normalized).unwrap();
        for delta in [-0.5, -1e-3, 1e-3, 0.5] {
            let other =
                mdn_loss_aux(&head, &t, &[m[0] + delta], &ctx, DensityForm::Normalized).unwrap();
            assert!(best < other);
        }
    }

    #[test]
    fn tiny_variance_is_floored_not_singular() {
        let ctx = RewardHeadContext::new(vec![vec![0.0, 0.0]], vec![0.0, 0.0]).unwrap();
        let (_, c) = ctx.harm_moments(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(c[(0, 0)], HARM_VARIANCE_FLOOR);
    }

    #[test]
    fn dependent_rows_are_singular() {
        let head = MdnHead::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]).unwrap();
        let ctx =
            RewardHeadContext::new(vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![0.0, 0.0]).unwrap();
        let err = mdn_loss_aux(
            &head,
            &[0.0, 0.0],
            &[0.0, 0.0],
            &ctx,
            DensityForm::Normalized,
        );
        assert!(matches!(err, Err(Error::Singular(_))), "{err:?}");
    }

    #[test]
    fn raw_parse_gives_valid_head() {
        let layout = MdnLayout {
            components: 3,
            dim: 2,
        };
        let raw: Vec<f64> = (0..layout.output_dim())
            .map(|i| (i as f64 * 0.37).sin() * 20.0)
            .collect();
        let head = MdnHead::from_raw(layout, &raw).unwrap();
        head.validate().unwrap();
        assert!(head
            .sigmas
            .iter()
            .flatten()
            .all(|s| *s >= LOG_SIGMA_MIN.exp() && *s <= LOG_SIGMA_MAX.exp()));
    }

    #[test]
    fn collapsed_component_samples_at_mean() {
        let head = MdnHead::new(vec![1.0], vec![vec![2.0, -1.0]], vec![vec![1e-6, 1e-6]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = head.sample(&mut rng);
            assert!((x[0] - 2.0).abs() < 1e-4 && (x[1] + 1.0).abs() < 1e-4);
        }
    }
}
