//! Log-mel filterbank features and cepstral mean/variance normalization.

mod cmvn;
pub(crate) mod fbank;

pub use cmvn::{accumulate_cmvn, apply_cmvn, cmvn_per_utterance, CmvnMode, CmvnStats, VARIANCE_FLOOR};
pub use fbank::{fbank, mel_to_hz, hz_to_mel, FbankConfig, MelBank, LOG_FLOOR};

use crate::error::{Error, Result};
use crate::nn::tensor::{Real, Tensor};

/// `T×F` frame sequence with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    frames: usize,
    bins: usize,
    pub frame_shift_ms: f64,
    pub utterance_id: String,
    pub speaker_id: Option<String>,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, frames: usize, bins: usize, frame_shift_ms: f64) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::shape("feature matrix", &[frames, bins], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            values,
            frames,
            bins,
            frame_shift_ms,
            utterance_id: String::new(),
            speaker_id: None,
        })
    }

    pub fn with_ids(mut self, utterance_id: impl Into<String>, speaker_id: Option<String>) -> Self {
        self.utterance_id = utterance_id.into();
        self.speaker_id = speaker_id;
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.bins + f]
    }

    pub fn set(&mut self, t: usize, f: usize, v: f64) {
        self.values[t * self.bins + f] = v;
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.bins..(t + 1) * self.bins]
    }

    /// Speaker key used for CMVN: the speaker id, or the utterance id when absent.
    pub fn cmvn_key(&self) -> &str {
        self.speaker_id.as_deref().unwrap_or(&self.utterance_id)
    }

    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        Tensor::new(&[self.frames, self.bins], self.values.iter().map(|&v| F::of(v)).collect())
            .expect("consistent shape")
    }

    /// Keeps every `stride`-th frame starting at frame 0.
    pub fn subsample(&self, stride: usize) -> FeatureMatrix {
        let stride = stride.max(1);
        let mut values = Vec::with_capacity(self.frames.div_ceil(stride) * self.bins);
        for t in (0..self.frames).step_by(stride) {
            values.extend_from_slice(self.frame(t));
        }
        FeatureMatrix {
            frames: values.len() / self.bins.max(1),
            values,
            bins: self.bins,
            frame_shift_ms: self.frame_shift_ms * stride as f64,
            utterance_id: self.utterance_id.clone(),
            speaker_id: self.speaker_id.clone(),
        }
    }
}
