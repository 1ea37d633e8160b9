use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{LossWeights, DEFAULT_TEMPERATURE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub k: f64,
    pub warmup_n: u64,
    /// `d_model` used by the schedule; `None` takes the encoder's.
    pub d_model_for_lr: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Exponent applied to `d_model` in the schedule: `0.5` or `-0.5`.
    pub lr_exponent: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub temperature: f64,
    pub weights: LossWeights,
    /// Both views of an utterance draw the same alteration stream.
    pub share_alteration: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 40,
            k: 0.5,
            warmup_n: 8000,
            d_model_for_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            lr_exponent: 0.5,
            grad_clip: Some(5.0),
            temperature: DEFAULT_TEMPERATURE,
            weights: LossWeights::default(),
            share_alteration: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.warmup_n == 0 {
            return bad("warmup_n must be at least 1".into());
        }
        if self.lr_exponent != 0.5 && self.lr_exponent != -0.5 {
            return bad(format!("lr_exponent must be 0.5 or -0.5, got {}", self.lr_exponent));
        }
        if !(self.k > 0.0) {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.d_model_for_lr == Some(0) {
            return bad("d_model_for_lr must be positive".into());
        }
        self.weights.validate()
    }

    pub fn lr_d_model(&self, encoder_d_model: usize) -> usize {
        self.d_model_for_lr.unwrap_or(encoder_d_model)
    }
}

/// `k · d^e · min(n^-0.5, n · warmup_n^-1.5)` for step `n ≥ 1`.
pub fn lr_at(n: u64, k: f64, d_model: usize, warmup_n: u64, exponent: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::arg("learning-rate step numbering starts at 1"));
    }
    if warmup_n == 0 {
        return Err(Error::arg("warmup_n must be at least 1"));
    }
    let n = n as f64;
    let decay = n.powf(-0.5);
    let warm = n * (warmup_n as f64).powf(-1.5);
    Ok(k * (d_model as f64).powf(exponent) * decay.min(warm))
}

impl TrainConfig {
    pub fn lr(&self, n: u64, encoder_d_model: usize) -> Result<f64> {
        lr_at(n, self.k, self.lr_d_model(encoder_d_model), self.warmup_n, self.lr_exponent)
    }
}
