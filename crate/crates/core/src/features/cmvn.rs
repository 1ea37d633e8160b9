use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Added to the variance before the square root.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Where normalization statistics come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CmvnMode {
    None,
    /// Statistics of each utterance (or view) alone.
    PerUtterance,
    /// Statistics pooled by speaker id, falling back to the utterance id.
    PerSpeaker,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Accum {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: u64,
}

/// Per-speaker, per-channel running sums.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CmvnStats {
    speakers: BTreeMap<String, Accum>,
}

impl CmvnStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, f: &FeatureMatrix) -> Result<()> {
        let acc = self
            .speakers
            .entry(f.cmvn_key().to_string())
            .or_insert_with(|| Accum {
                sum: vec![0.0; f.bins()],
                sum_sq: vec![0.0; f.bins()],
                count: 0,
            });
        if acc.sum.len() != f.bins() {
            return Err(Error::shape("cmvn accumulate", &[acc.sum.len()], &[f.bins()]));
        }
        for t in 0..f.frames() {
            for (c, &v) in f.frame(t).iter().enumerate() {
                acc.sum[c] += v;
                acc.sum_sq[c] += v * v;
            }
        }
        acc.count += f.frames() as u64;
        Ok(())
    }

    /// Merges partial statistics (summation of sums and counts).
    pub fn merge(&mut self, other: &CmvnStats) -> Result<()> {
        for (k, o) in &other.speakers {
            match self.speakers.get_mut(k) {
                Some(a) => {
                    if a.sum.len() != o.sum.len() {
                        return Err(Error::shape("cmvn merge", &[a.sum.len()], &[o.sum.len()]));
                    }
                    a.sum.iter_mut().zip(&o.sum).for_each(|(x, y)| *x += y);
                    a.sum_sq.iter_mut().zip(&o.sum_sq).for_each(|(x, y)| *x += y);
                    a.count += o.count;
                }
                None => {
                    self.speakers.insert(k.clone(), o.clone());
                }
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.speakers.keys().map(String::as_str)
    }

    pub fn count(&self, speaker: &str) -> Option<u64> {
        self.speakers.get(speaker).map(|a| a.count)
    }

    /// Per-channel mean and population variance for one speaker.
    pub fn mean_var(&self, speaker: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = self
            .speakers
            .get(speaker)
            .ok_or_else(|| Error::Lookup(format!("no CMVN statistics for speaker {speaker:?}")))?;
        if a.count == 0 {
            return Err(Error::Lookup(format!("CMVN statistics for speaker {speaker:?} are empty")));
        }
        let n = a.count as f64;
        let mean: Vec<f64> = a.sum.iter().map(|s| s / n).collect();
        let var = a
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0))
            .collect();
        Ok((mean, var))
    }
}

/// Folds a stream of matrices into per-speaker statistics.
pub fn accumulate_cmvn<'a>(features: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<CmvnStats> {
    let mut stats = CmvnStats::new();
    for f in features {
        stats.add(f)?;
    }
    Ok(stats)
}

/// `(x − mean) / sqrt(var + ε)` per channel, using the matrix's speaker statistics.
pub fn apply_cmvn(f: &FeatureMatrix, stats: &CmvnStats) -> Result<FeatureMatrix> {
    let (mean, var) = stats.mean_var(f.cmvn_key())?;
    if mean.len() != f.bins() {
        return Err(Error::shape("apply_cmvn", &[f.bins()], &[mean.len()]));
    }
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + VARIANCE_FLOOR).sqrt()).collect();
    let mut out = f.clone();
    for t in 0..f.frames() {
        for (c, v) in out.frame_mut(t).iter_mut().enumerate() {
            *v = (*v - mean[c]) * inv[c];
        }
    }
    Ok(out)
}

/// Normalizes a matrix with its own statistics.
pub fn cmvn_per_utterance(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.frames() == 0 {
        return Ok(f.clone());
    }
    let mut own = f.clone();
    own.speaker_id = None;
    if own.utterance_id.is_empty() {
        own.utterance_id = "_".into();
    }
    let stats = accumulate_cmvn([&own])?;
    let mut out = apply_cmvn(&own, &stats)?;
    out.utterance_id = f.utterance_id.clone();
    out.speaker_id = f.speaker_id.clone();
    Ok(out)
}
