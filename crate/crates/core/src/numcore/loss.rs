use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// A scalar loss on a network output, returning the value together with
/// its gradient with respect to every output coordinate.
pub trait OutputLoss {
    fn evaluate(&self, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Sum of squared errors over output coordinates, `Σ (y_i - t_i)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mse;

impl OutputLoss for Mse {
    fn evaluate(&self, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        crate::error::check_len("mse target", output.len(), target.len())?;
        let mut loss = 0.0;
        let grad = output
            .iter()
            .zip(target)
            .map(|(y, t)| {
                let d = y - t;
                loss += d * d;
                2.0 * d
            })
            .collect();
        Ok((loss, grad))
    }
}

/// Names of the losses the trainers know about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTag {
    Mse,
    MdnNll,
    MdnNllAux,
}

impl FromStr for LossTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossTag::Mse),
            "mdn_nll" => Ok(LossTag::MdnNll),
            "mdn_nll_aux" => Ok(LossTag::MdnNllAux),
            other => Err(Error::UnknownLossTag(other.to_string())),
        }
    }
}

impl fmt::Display for LossTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossTag::Mse => "mse",
            LossTag::MdnNll => "mdn_nll",
            LossTag::MdnNllAux => "mdn_nll_aux",
        })
    }
}
