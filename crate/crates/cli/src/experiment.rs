//! Pretraining runs, linear-probe evaluation of encoders and augmentation
//! ablations.

use serde::Serialize;
use speech_simclr::augment::{Frontend, NoiseBank, AUGMENTATION_NAMES};
use speech_simclr::nn::ModelParams;
use speech_simclr::trainer::{encode_utterances, steps_per_epoch, train, StepMetrics, TrainState, Utterance, ViewPipeline};
use speech_simclr::{Error, Result};

use crate::config::RunConfig;
use crate::probe::{pooled_rows, probe, ProbeReport};

pub fn view_pipeline(run: &RunConfig, noise: NoiseBank, data: &[Utterance]) -> Result<ViewPipeline> {
    ViewPipeline {
        augment: run.augment.clone(),
        alteration: run.alteration.clone(),
        frontend: run.frontend.build()?,
        noise,
    }
    .fit_cmvn(data)
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub state: TrainState,
    /// Mean loss of each completed epoch.
    pub epoch_loss: Vec<f64>,
    /// Parameters at the end of each requested epoch.
    pub snapshots: Vec<(usize, ModelParams<f32>)>,
}

/// Pretrains from scratch for `run.train.epochs` epochs.
pub fn pretrain(
    run: &RunConfig,
    data: &[Utterance],
    noise: NoiseBank,
    snapshot_epochs: &[usize],
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<PretrainOutcome> {
    run.validate()?;
    let pipeline = view_pipeline(run, noise, data)?;
    let mut state = TrainState::new(&run.encoder, run.train.seed)?;
    let spe = steps_per_epoch(data.len(), run.train.batch_size) as u64;
    let mut epoch_loss = Vec::new();
    let mut snapshots = Vec::new();
    let mut sum = 0.0;
    train(&mut state, data, &pipeline, &run.train, None, |st, m| {
        on_step(m);
        sum += m.loss;
        if m.step % spe == 0 {
            epoch_loss.push(sum / spe as f64);
            sum = 0.0;
            if snapshot_epochs.contains(&m.epoch) {
                snapshots.push((m.epoch, st.params.clone()));
            }
        }
        Ok(())
    })?;
    Ok(PretrainOutcome {
        state,
        epoch_loss,
        snapshots,
    })
}

/// Probe accuracy of mean-pooled encoder outputs on clean features.
pub fn probe_encoder(
    params: &ModelParams<f32>,
    data: &[Utterance],
    labels: &[usize],
    classes: usize,
    frontend: &Frontend,
    probe_cfg: &crate::probe::ProbeConfig,
) -> Result<ProbeReport> {
    let archive = encode_utterances(params, data, frontend)?;
    let ids: Vec<String> = data.iter().map(|u| u.id.clone()).collect();
    probe(&pooled_rows(&archive, &ids)?, labels, classes, probe_cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub toggle: String,
    pub accuracy: f64,
    pub delta: f64,
}

/// Pretrain + probe with every augmentation on, then once per named toggle
/// with that augmentation off. Report only; no threshold applies.
pub fn ablate(
    run: &RunConfig,
    data: &[Utterance],
    labels: &[usize],
    classes: usize,
    noise: &NoiseBank,
    toggles: &[String],
) -> Result<Vec<AblationRow>> {
    for t in toggles {
        if !AUGMENTATION_NAMES.contains(&t.as_str()) {
            return Err(Error::Argument(format!(
                "unknown augmentation {t:?}; expected one of {AUGMENTATION_NAMES:?}"
            )));
        }
    }
    let frontend = view_pipeline(run, noise.clone(), data)?.frontend;
    let score = |cfg: &RunConfig| -> Result<f64> {
        let out = pretrain(cfg, data, noise.clone(), &[], |_| {})?;
        Ok(probe_encoder(&out.state.params, data, labels, classes, &frontend, &cfg.probe)?.test_accuracy)
    };
    let mut all_on = run.clone();
    for name in AUGMENTATION_NAMES {
        all_on.augment.enabled.set(name, true)?;
    }
    let base = score(&all_on)?;
    let mut rows = vec![AblationRow {
        toggle: "all-on".into(),
        accuracy: base,
        delta: 0.0,
    }];
    for t in toggles {
        let mut cfg = all_on.clone();
        cfg.augment.enabled.set(t, false)?;
        let acc = score(&cfg)?;
        rows.push(AblationRow {
            toggle: format!("no-{t}"),
            accuracy: acc,
            delta: acc - base,
        });
    }
    Ok(rows)
}

/// CSV with columns `toggle,accuracy,delta`.
pub fn ablation_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
