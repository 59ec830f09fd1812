use serde::{Deserialize, Serialize};

use super::{ModelRole, TransitionModel};
use crate::dataio::TransitionRecord;
use crate::error::check_len;
use crate::numcore::{dot, norm, sub};
use crate::{Error, Result};

/// Cosine histogram covers `[-1, 1]` in equal bins.
pub const COS_BINS: usize = 20;
/// Norm-ratio histogram covers `[0, RATIO_MAX]`; larger ratios land in the last bin.
pub const RATIO_BINS: usize = 20;
pub const RATIO_MAX: f64 = 4.0;

/// Agreement between predicted and observed difference vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagSummary {
    pub count: usize,
    /// Records dropped because the observed difference had zero norm.
    pub skipped: usize,
    pub cos_mean: f64,
    pub ratio_mean: f64,
    pub cos_hist: Vec<usize>,
    pub ratio_hist: Vec<usize>,
}

impl DiagSummary {
    /// Lower edge of cosine bin `i`.
    pub fn cos_edge(i: usize) -> f64 {
        -1.0 + 2.0 * i as f64 / COS_BINS as f64
    }

    pub fn ratio_edge(i: usize) -> f64 {
        RATIO_MAX * i as f64 / RATIO_BINS as f64
    }
}

fn bin(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((value - lo) / (hi - lo) * bins as f64).floor();
    if t < 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

/// Histograms cosine similarity and `|pred| / |truth|` over paired vectors.
pub fn diagnostics_from_pairs(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<DiagSummary> {
    check_len("truth vectors", preds.len(), truths.len())?;
    let mut out = DiagSummary {
        count: 0,
        skipped: 0,
        cos_mean: 0.0,
        ratio_mean: 0.0,
        cos_hist: vec![0; COS_BINS],
        ratio_hist: vec![0; RATIO_BINS],
    };
    for (p, t) in preds.iter().zip(truths) {
        check_len("prediction", t.len(), p.len())?;
        let nt = norm(t);
        if nt == 0.0 {
            out.skipped += 1;
            continue;
        }
        let np = norm(p);
        let cos = if np == 0.0 {
            0.0
        } else {
            (dot(p, t) / (np * nt)).clamp(-1.0, 1.0)
        };
        let ratio = np / nt;
        if !cos.is_finite() || !ratio.is_finite() {
            return Err(Error::NonFinite("diagnostic prediction"));
        }
        out.count += 1;
        out.cos_mean += cos;
        out.ratio_mean += ratio;
        out.cos_hist[bin(cos, -1.0, 1.0, COS_BINS)] += 1;
        out.ratio_hist[bin(ratio, 0.0, RATIO_MAX, RATIO_BINS)] += 1;
    }
    if out.count > 0 {
        out.cos_mean /= out.count as f64;
        out.ratio_mean /= out.count as f64;
    }
    Ok(out)
}

/// Compares the model's mean prediction with each record, on difference
/// vectors: `h_a` against `s_mid - s` for the action model, and
/// `s' - s` against its prediction for the next-state model.
pub fn prediction_diagnostics(
    model: &TransitionModel,
    records: &[TransitionRecord],
) -> Result<DiagSummary> {
    let mut preds = Vec::with_capacity(records.len());
    let mut truths = Vec::with_capacity(records.len());
    for r in records {
        let action = r.action();
        match model.role {
            ModelRole::Action => {
                preds.push(model.predict_mean(&r.s)?);
                truths.push(action);
            }
            ModelRole::NextState => {
                let input: Vec<f64> = r.s.iter().chain(&action).copied().collect();
                preds.push(sub(&model.predict_mean(&input)?, &r.s));
                truths.push(sub(&r.s_next, &r.s));
            }
        }
    }
    diagnostics_from_pairs(&preds, &truths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_land_at_one_one() {
        let v = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
        let d = diagnostics_from_pairs(&v, &v).unwrap();
        assert_eq!(d.count, 2);
        assert_eq!(d.cos_hist[COS_BINS - 1], 2);
        assert_eq!(d.ratio_hist[bin(1.0, 0.0, RATIO_MAX, RATIO_BINS)], 2);
        assert!((d.cos_mean - 1.0).abs() < 1e-12 && (d.ratio_mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubled_and_orthogonal() {
        let t = vec![vec![1.0, 1.0]];
        let d = diagnostics_from_pairs(&[vec![2.0, 2.0]], &t).unwrap();
        assert!((d.cos_mean - 1.0).abs() < 1e-12 && (d.ratio_mean - 2.0).abs() < 1e-12);
        let d = diagnostics_from_pairs(&[vec![1.0, -1.0]], &t).unwrap();
        assert!(d.cos_mean.abs() < 1e-12);
    }

    #[test]
    fn zero_truth_is_skipped() {
        let d = diagnostics_from_pairs(&[vec![1.0], vec![1.0]], &[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!((d.count, d.skipped), (1, 1));
    }
}
