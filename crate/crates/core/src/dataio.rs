//! Transition/reward datasets, per-dimension normalization, seeded splits and
//! model checkpoints.
//!
//! Datasets are newline-delimited JSON: a header object `{"dims": n, "count": N}`
//! followed by one record per line. Checkpoints are a single JSON object.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::numcore::LayerShape;
use crate::{Error, Result};

/// Floor applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// One observed turn: state, state after the agent action, state after the
/// environment response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub s: Vec<f64>,
    pub s_mid: Vec<f64>,
    pub s_next: Vec<f64>,
}

impl TransitionRecord {
    /// The action displacement `s_mid - s`.
    pub fn action(&self) -> Vec<f64> {
        crate::numcore::sub(&self.s_mid, &self.s)
    }

    fn dims(&self) -> [usize; 3] {
        [self.s.len(), self.s_mid.len(), self.s_next.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub s: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub dims: usize,
    pub count: usize,
}

/// A loaded dataset with its reported dimension and any warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub records: Vec<T>,
    pub dims: usize,
    pub warnings: Vec<String>,
}

impl<T> Dataset<T> {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn load_lines<T: DeserializeOwned>(
    path: &Path,
    dims_of: impl Fn(&T) -> Vec<usize>,
) -> Result<Dataset<T>> {
    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut header: Option<DatasetHeader> = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg: e.to_string(),
        };
        match header {
            None => header = Some(serde_json::from_str(&line).map_err(parse_err)?),
            Some(h) => {
                let rec: T = serde_json::from_str(&line).map_err(parse_err)?;
                let dims = dims_of(&rec);
                if dims.iter().any(|d| *d != h.dims) {
                    return Err(Error::RecordDimension {
                        index: records.len(),
                        detail: format!("header says {} but record has {:?}", h.dims, dims),
                    });
                }
                records.push(rec);
            }
        }
    }
    let Some(h) = header else {
        return Ok(Dataset {
            records,
            dims: 0,
            warnings: vec![format!("{display}: empty dataset")],
        });
    };
    let mut warnings = Vec::new();
    if h.count != records.len() {
        return Err(Error::Parse {
            path: display,
            line: 1,
            msg: format!(
                "header count {} but file holds {} records",
                h.count,
                records.len()
            ),
        });
    }
    if records.is_empty() {
        warnings.push(format!("{display}: empty dataset"));
    }
    Ok(Dataset {
        records,
        dims: h.dims,
        warnings,
    })
}

fn write_lines<T: Serialize>(path: &Path, dims: usize, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        dims,
        count: records.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_transitions(path: impl AsRef<Path>) -> Result<Dataset<TransitionRecord>> {
    load_lines(path.as_ref(), |r: &TransitionRecord| r.dims().to_vec())
}

pub fn load_rewards(path: impl AsRef<Path>) -> Result<Dataset<RewardRecord>> {
    load_lines(path.as_ref(), |r: &RewardRecord| vec![r.s.len()])
}

pub fn write_transitions(path: impl AsRef<Path>, records: &[TransitionRecord]) -> Result<()> {
    let dims = records.first().map_or(0, |r| r.s.len());
    for (index, r) in records.iter().enumerate() {
        if r.dims().iter().any(|d| *d != dims) {
            return Err(Error::RecordDimension {
                index,
                detail: format!("{:?} vs {dims}", r.dims()),
            });
        }
    }
    write_lines(path.as_ref(), dims, records)
}

pub fn write_rewards(path: impl AsRef<Path>, records: &[RewardRecord]) -> Result<()> {
    let dims = records.first().map_or(0, |r| r.s.len());
    if let Some(index) = records.iter().position(|r| r.s.len() != dims) {
        return Err(Error::RecordDimension {
            index,
            detail: format!("expected {dims}"),
        });
    }
    write_lines(path.as_ref(), dims, records)
}

/// Per-dimension mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Zero mean, unit scale: normalization becomes a no-op.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("normalize input", self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect())
    }

    pub fn denormalize(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("denormalize input", self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((z, m), s)| z * s + m)
            .collect())
    }
}

/// Fits [`NormStats`] over the vectors picked out of each record by `select`.
pub fn fit_norm<T>(records: &[T], select: impl Fn(&T) -> Vec<f64>) -> Result<NormStats> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 records to fit normalization, got {}",
            records.len()
        )));
    }
    let rows: Vec<Vec<f64>> = records.iter().map(select).collect();
    let dim = rows[0].len();
    for r in &rows {
        check_len("normalization row", dim, r.len())?;
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for r in &rows {
        var.iter_mut()
            .zip(r)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    let std = var
        .into_iter()
        .map(|v| (v / n).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

/// Seeded shuffle, then the first `round(fraction * len)` records go to training.
pub fn split<T: Clone>(records: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let order = permutation(records.len(), seed);
    let n_train = ((fraction * records.len() as f64).round() as usize).min(records.len());
    let train = order[..n_train]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    let valid = order[n_train..]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    Ok((train, valid))
}

/// Index form of [`split`] keyed by the validation share; keeps at least
/// two training indices when `len >= 2`.
pub(crate) fn split_indices(len: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let order = permutation(len, seed);
    let n_train = ((1.0 - val_fraction) * len as f64).round() as usize;
    let n_train = n_train.max(len.min(2)).min(len);
    (order[..n_train].to_vec(), order[n_train..].to_vec())
}

pub(crate) fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Serialized model parameters plus everything inference needs.
///
/// `shapes` describes one network; ensembles store `members` copies of it
/// back to back in `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub kind: String,
    pub shapes: Vec<LayerShape>,
    pub params: Vec<f64>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub seed: u64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_std: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdn_components: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_loss: Vec<f64>,
}

impl Checkpoint {
    pub fn params_per_member(&self) -> usize {
        self.shapes
            .iter()
            .map(|s| s.input * s.output + s.output)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::InvalidInput("checkpoint has no layers".into()));
        }
        let members = self.members.unwrap_or(1);
        check_len(
            "checkpoint params",
            self.params_per_member() * members,
            self.params.len(),
        )?;
        check_len(
            "checkpoint norm_std",
            self.norm_mean.len(),
            self.norm_std.len(),
        )?;
        check_len(
            "checkpoint norm_mean",
            self.shapes[0].input,
            self.norm_mean.len(),
        )?;
        if let (Some(m), Some(s)) = (&self.target_mean, &self.target_std) {
            check_len("checkpoint target_std", m.len(), s.len())?;
        }
        if self.norm_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput(
                "checkpoint norm_std must be positive".into(),
            ));
        }
        crate::numcore::ensure_finite("checkpoint params", &self.params)
    }

    pub fn input_norm(&self) -> NormStats {
        NormStats {
            mean: self.norm_mean.clone(),
            std: self.norm_std.clone(),
        }
    }

    pub fn target_norm(&self) -> Option<NormStats> {
        match (&self.target_mean, &self.target_std) {
            (Some(mean), Some(std)) => Some(NormStats {
                mean: mean.clone(),
                std: std.clone(),
            }),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
