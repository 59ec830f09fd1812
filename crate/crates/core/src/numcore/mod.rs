//! Dense networks with explicitly coded gradients and a few vector kernels.
//!
//! Nothing here is a general autodiff engine: every loss supplies the
//! derivative of its value with respect to the network output, and
//! [`DenseNet::backward`] chains it through the layers.

mod fit;
mod gauss;
mod loss;
mod net;

pub use fit::{fit_minibatch, Optimizer, TrainSchedule};
pub use gauss::{gaussian_logpdf_diag, DensityForm, LN_2PI};
pub use loss::{LossTag, Mse, OutputLoss};
pub use net::{Activation, AdamState, DenseNet, GradBundle, Layer, LayerGrad, LayerShape};

use crate::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Rejects vectors carrying NaN or infinities.
pub fn ensure_finite(what: &'static str, a: &[f64]) -> Result<()> {
    if all_finite(a) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax over a slice, shifted by the maximum.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, x) in v.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if *x > v[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[2.0, 2.0]), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn log_sum_exp_survives_huge_negatives() {
        let v = [-1e4, -1e4 - 1.0];
        let got = log_sum_exp(&v);
        assert!(got.is_finite());
        assert!((got - (-1e4 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, -3.0, 0.5, 7.0]);
        assert!(p.iter().all(|x| *x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
