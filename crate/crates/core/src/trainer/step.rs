use rand::seq::SliceRandom;
use serde::Serialize;

use super::adam::{adam_step, clip_global_norm, AdamHyper};
use super::checkpoint::TrainState;
use super::schedule::TrainConfig;
use crate::alteration::{alter, AlterationConfig};
use crate::augment::{augment_view_with_ids, AugmentConfig, Frontend, NoiseBank};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::features::{accumulate_cmvn, CmvnMode};
use crate::nn::{encode, project, reconstruct, Bound, EncoderConfig, Graph, ModelParams, Tensor, Var};
use crate::objective::{nt_xent_with_grad, ContrastiveBatch};
use crate::par;
use crate::rng::{hash_str, rng_from};

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: Option<String>,
    pub waveform: Waveform,
}

impl Utterance {
    pub fn new(id: impl Into<String>, waveform: Waveform) -> Self {
        Self {
            id: id.into(),
            speaker: None,
            waveform,
        }
    }
}

/// Everything between a raw waveform and the encoder's (input, target) pair.
#[derive(Clone, Debug)]
pub struct ViewPipeline {
    pub augment: AugmentConfig,
    pub alteration: AlterationConfig,
    pub frontend: Frontend,
    pub noise: NoiseBank,
}

/// One view ready for the encoder: the altered input and the clean target
/// aligned with the encoder's output frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedView {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

const AUGMENT_STREAM: u64 = 0xa06;
const ALTER_STREAM: u64 = 0x7e2a;
const DROPOUT_STREAM: u64 = 0xd20;
const SHUFFLE_STREAM: u64 = 0x5e0;

impl ViewPipeline {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.alteration.validate()?;
        if self.augment.enabled.noise && self.noise.is_empty() {
            return Err(Error::Config("noise augmentation is enabled but the noise bank is empty".into()));
        }
        Ok(())
    }

    /// Augments, extracts features and alters one view. The reconstruction
    /// target is the augmented, unaltered feature matrix (every 4th frame when
    /// the prenet subsamples time).
    pub fn prepare(&self, utt: &Utterance, encoder: &EncoderConfig, words: &[u64], alter_words: &[u64]) -> Result<PreparedView> {
        let mut aug_rng = rng_from(&[words, &[AUGMENT_STREAM]].concat());
        let (clean, _) = augment_view_with_ids(
            &utt.waveform,
            &utt.id,
            utt.speaker.as_deref(),
            &self.augment,
            &self.noise,
            &self.frontend,
            &mut aug_rng,
        )?;
        let mut alt_rng = rng_from(&[alter_words, &[ALTER_STREAM]].concat());
        let rec = alter(&clean, &self.alteration, &mut alt_rng)?;
        let target = if encoder.use_prenet { clean.subsample(4) } else { clean };
        Ok(PreparedView {
            input: rec.altered.to_tensor(),
            target: target.to_tensor(),
        })
    }

    /// Fits per-speaker CMVN statistics on clean features when that mode is on.
    pub fn fit_cmvn(mut self, data: &[Utterance]) -> Result<Self> {
        if self.frontend.cmvn_mode() != CmvnMode::PerSpeaker {
            return Ok(self);
        }
        let feats = par::try_map_slice(data, |u| {
            Ok::<_, Error>(self.frontend.fbank(&u.waveform)?.with_ids(u.id.clone(), u.speaker.clone()))
        })?;
        let stats = accumulate_cmvn(&feats)?;
        self.frontend = self.frontend.with_stats(stats);
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub ntxent: f64,
    pub recon: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

struct ViewPass {
    graph: Graph<f32>,
    bound: Bound,
    z: Var,
    recon: Var,
}

fn forward_view(params: &ModelParams<f32>, view: &PreparedView, dropout_words: Option<Vec<u64>>) -> Result<ViewPass> {
    let mut graph = Graph::new();
    graph.set_check_finite(false);
    let bound = params.bind(&mut graph);
    let x = graph.constant(view.input.clone());
    let mut drop_rng = dropout_words.map(|w| rng_from(&w));
    let h = encode(&mut graph, &bound, x, drop_rng.as_mut())?;
    let z = project(&mut graph, &bound, h)?;
    let r = reconstruct(&mut graph, &bound, h)?;
    let target = graph.constant(view.target.clone());
    let recon = graph.l1_loss(r, target, None)?;
    Ok(ViewPass { graph, bound, z, recon })
}

fn view_grads(pass: &ViewPass, seeds: Vec<(Var, Tensor<f32>)>, params: &ModelParams<f32>) -> Result<Vec<Tensor<f32>>> {
    let mut grads = pass.graph.backward_from(seeds)?;
    Ok(pass
        .bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

/// Random-stream key of one view: (seed, step, utterance, view).
fn view_words(cfg: &TrainConfig, step: u64, utt: &Utterance, view: usize) -> Vec<u64> {
    vec![cfg.seed, step, hash_str(&utt.id), view as u64]
}

/// One optimizer step on `batch`: two views per utterance, alteration,
/// encoder, NT-Xent over the `2N` projections plus the mean per-view L1
/// reconstruction, backward, clipping and Adam with the scheduled rate.
/// Views occupy rows `(2k, 2k+1)` for utterance `k`.
pub fn train_step(state: &mut TrainState, batch: &[&Utterance], pipeline: &ViewPipeline, cfg: &TrainConfig) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if batch.len() == 1 {
        log::warn!("batch of one utterance: the contrastive loss is identically zero");
    }
    let enc = state.params.config().clone();
    let n = state.step + 1;
    let lr = cfg.lr(n, enc.d_model)?;
    let views = 2 * batch.len();
    let params = &state.params;

    let passes = par::try_map_range(views, |i| {
        let utt = batch[i / 2];
        let words = view_words(cfg, n, utt, i % 2);
        let alter_words = view_words(cfg, n, utt, if cfg.share_alteration { 0 } else { i % 2 });
        let view = pipeline.prepare(utt, &enc, &words, &alter_words)?;
        let dropout = (enc.dropout > 0.0).then(|| [words.as_slice(), &[DROPOUT_STREAM]].concat());
        forward_view(params, &view, dropout)
    })?;

    let proj = enc.proj_dim;
    let mut z = Vec::with_capacity(views * proj);
    for p in &passes {
        z.extend_from_slice(p.graph.value(p.z).data());
    }
    let batch_z = ContrastiveBatch::new(Tensor::new(&[views, proj], z)?, cfg.temperature)?;
    let (ntxent, dz) = nt_xent_with_grad(&batch_z)?;
    let recon = passes.iter().map(|p| p.graph.value(p.recon).data()[0] as f64).sum::<f64>() / views as f64;
    let w = cfg.weights;
    let loss = w.contrastive * ntxent + w.reconstruction * recon;
    if !loss.is_finite() {
        let ids: Vec<&str> = batch.iter().map(|u| u.id.as_str()).collect();
        return Err(Error::Numeric(format!("non-finite loss {loss} at step {n} for batch {ids:?}")));
    }

    let recon_seed = (w.reconstruction / views as f64) as f32;
    let per_view = par::try_map_range(views, |i| {
        let p = &passes[i];
        let mut seeds = Vec::with_capacity(2);
        if w.contrastive > 0.0 {
            let row: Vec<f32> = dz.row(i).iter().map(|&g| g * w.contrastive as f32).collect();
            seeds.push((p.z, Tensor::new(&[1, proj], row)?));
        }
        if w.reconstruction > 0.0 {
            seeds.push((p.recon, Tensor::scalar(recon_seed)));
        }
        view_grads(p, seeds, params)
    })?;
    drop(passes);

    let mut grads: Vec<Tensor<f32>> = params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
    for g in &per_view {
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.add_assign(gi);
        }
    }
    drop(per_view);
    let grad_norm = match cfg.grad_clip {
        Some(c) => clip_global_norm(&mut grads, c),
        None => super::adam::global_norm(&grads),
    };
    let hp = AdamHyper {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    };
    let names = state.params.names().to_vec();
    adam_step(state.params.tensors_mut(), &names, &grads, &mut state.adam, lr, &hp)?;
    state.step = n;
    Ok(StepMetrics {
        step: n,
        epoch: 0,
        loss,
        ntxent,
        recon,
        lr,
        grad_norm,
    })
}

/// Full batches per epoch; the last incomplete batch is dropped.
pub fn steps_per_epoch(utterances: usize, batch_size: usize) -> usize {
    utterances.checked_div(batch_size).unwrap_or(0)
}

/// Utterance order for `epoch`, a seeded permutation.
pub fn epoch_order(utterances: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..utterances).collect();
    order.shuffle(&mut rng_from(&[seed, epoch as u64, SHUFFLE_STREAM]));
    order
}

/// Trains from `state.step` until `max_steps` (or the configured epochs) are
/// done, calling `on_step` after every step. The batch for step `s` depends
/// only on (seed, s), so a restored state continues exactly where it stopped.
pub fn train<C>(
    state: &mut TrainState,
    data: &[Utterance],
    pipeline: &ViewPipeline,
    cfg: &TrainConfig,
    max_steps: Option<u64>,
    mut on_step: C,
) -> Result<()>
where
    C: FnMut(&TrainState, &StepMetrics) -> Result<()>,
{
    cfg.validate()?;
    pipeline.validate()?;
    let spe = steps_per_epoch(data.len(), cfg.batch_size);
    if spe == 0 {
        return Err(Error::Data(format!(
            "{} utterances do not fill a single batch of {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let total = (spe * cfg.epochs) as u64;
    let end = max_steps.map_or(total, |m| m.min(total));
    let mut order: Option<(usize, Vec<usize>)> = None;
    while state.step < end {
        let epoch = (state.step / spe as u64) as usize;
        let slot = (state.step % spe as u64) as usize;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(data.len(), cfg.seed, epoch)));
        }
        let idx = &order.as_ref().expect("set above").1[slot * cfg.batch_size..(slot + 1) * cfg.batch_size];
        let batch: Vec<&Utterance> = idx.iter().map(|&i| &data[i]).collect();
        let mut m = train_step(state, &batch, pipeline, cfg)?;
        m.epoch = epoch + 1;
        on_step(state, &m)?;
    }
    Ok(())
}
