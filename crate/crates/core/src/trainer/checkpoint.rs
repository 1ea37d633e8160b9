//! Training checkpoints stored as a named-tensor container.
//!
//! Entries: `param.<name>` and `adam.m.<name>` / `adam.v.<name>` (f32), plus
//! f64 metadata records `meta.step`, `meta.adam_t`, `meta.seed` (high and low
//! 32-bit halves), `meta.encoder` and `meta.train`. Every random draw in
//! training is keyed by (seed, step), so those two values are the complete
//! random-number state.

use std::path::Path;

use super::adam::AdamState;
use super::container::NamedTensors;
use super::schedule::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{init_params, EncoderConfig, ModelParams, Tensor};
use crate::objective::LossWeights;

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Number of optimizer steps taken so far.
    pub step: u64,
}

impl TrainState {
    pub fn new(encoder: &EncoderConfig, seed: u64) -> Result<Self> {
        let params = init_params(encoder, seed)?;
        let adam = AdamState::zeros_like(params.tensors());
        Ok(Self { params, adam, step: 0 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub train: TrainConfig,
}

fn split_u64(v: u64) -> [f64; 2] {
    [(v >> 32) as f64, (v & 0xffff_ffff) as f64]
}

fn join_u64(w: &[f64]) -> Result<u64> {
    let part = |x: f64| {
        if x >= 0.0 && x <= f64::from(u32::MAX) && x.fract() == 0.0 {
            Ok(x as u64)
        } else {
            Err(Error::Data(format!("invalid 32-bit word {x} in checkpoint metadata")))
        }
    };
    match w {
        [hi, lo] => Ok(part(*hi)? << 32 | part(*lo)?),
        _ => Err(Error::Data(format!("expected 2 words for a 64-bit value, found {}", w.len()))),
    }
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn unopt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

fn train_words(c: &TrainConfig) -> Vec<f64> {
    vec![
        c.batch_size as f64,
        c.epochs as f64,
        c.k,
        c.warmup_n as f64,
        opt(c.d_model_for_lr.map(|d| d as f64)),
        c.beta1,
        c.beta2,
        c.eps,
        c.lr_exponent,
        opt(c.grad_clip),
        c.temperature,
        c.weights.contrastive,
        c.weights.reconstruction,
        f64::from(u8::from(c.share_alteration)),
    ]
}

fn train_from_words(w: &[f64], seed: u64) -> Result<TrainConfig> {
    if w.len() != 14 {
        return Err(Error::Data(format!("train config record has {} fields, expected 14", w.len())));
    }
    Ok(TrainConfig {
        batch_size: w[0] as usize,
        epochs: w[1] as usize,
        k: w[2],
        warmup_n: w[3] as u64,
        d_model_for_lr: unopt(w[4]).map(|d| d as usize),
        beta1: w[5],
        beta2: w[6],
        eps: w[7],
        seed,
        lr_exponent: w[8],
        grad_clip: unopt(w[9]),
        temperature: w[10],
        weights: LossWeights {
            contrastive: w[11],
            reconstruction: w[12],
        },
        share_alteration: w[13] != 0.0,
    })
}

fn record(words: Vec<f64>) -> Tensor<f64> {
    let n = words.len();
    Tensor::new(&[n], words).expect("sized")
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<NamedTensors> {
        let s = &self.state;
        let mut c = NamedTensors::new();
        c.push("meta.step", record(split_u64(s.step).to_vec()))?;
        c.push("meta.adam_t", record(split_u64(s.adam.t).to_vec()))?;
        c.push("meta.seed", record(split_u64(self.train.seed).to_vec()))?;
        c.push("meta.encoder", record(s.params.config().to_words()))?;
        c.push("meta.train", record(train_words(&self.train)))?;
        for (i, name) in s.params.names().iter().enumerate() {
            c.push(format!("param.{name}"), s.params.tensors()[i].clone())?;
            c.push(format!("adam.m.{name}"), s.adam.m[i].clone())?;
            c.push(format!("adam.v.{name}"), s.adam.v[i].clone())?;
        }
        Ok(c)
    }

    /// Rebuilds a checkpoint; every entry must be recognised and every
    /// expected entry present.
    pub fn from_container(c: &NamedTensors) -> Result<Self> {
        let words = |name: &str| -> Result<Vec<f64>> { Ok(c.require(name)?.exact::<f64>(name)?.into_data()) };
        let encoder = EncoderConfig::from_words(&words("meta.encoder")?)?;
        let seed = join_u64(&words("meta.seed")?)?;
        let train = train_from_words(&words("meta.train")?, seed)?;
        let step = join_u64(&words("meta.step")?)?;
        let adam_t = join_u64(&words("meta.adam_t")?)?;

        let mut params: ModelParams<f32> = init_params(&encoder, 0)?;
        let mut adam = AdamState::zeros_like(params.tensors());
        adam.t = adam_t;
        let meta = ["meta.step", "meta.adam_t", "meta.seed", "meta.encoder", "meta.train"];
        for name in c.names() {
            let known = meta.contains(&name)
                || ["param.", "adam.m.", "adam.v."].iter().any(|p| {
                    name.strip_prefix(p).is_some_and(|rest| params.index_of(rest).is_some())
                });
            if !known {
                return Err(Error::UnknownTensor(name.to_string()));
            }
        }
        let names = params.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let p = format!("param.{name}");
            params.set(name, c.require(&p)?.exact::<f32>(&p)?)?;
            for (key, slot) in [("adam.m.", &mut adam.m[i]), ("adam.v.", &mut adam.v[i])] {
                let k = format!("{key}{name}");
                let t = c.require(&k)?.exact::<f32>(&k)?;
                if t.shape() != slot.shape() {
                    return Err(Error::shape("checkpoint moment", slot.shape(), t.shape()));
                }
                *slot = t;
            }
        }
        Ok(Self {
            state: TrainState { params, adam, step },
            train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&NamedTensors::load(path)?)
    }
}
