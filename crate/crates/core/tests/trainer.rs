use std::f64::consts::PI;

use speech_simclr::alteration::AlterationConfig;
use speech_simclr::augment::{AugmentConfig, Frontend, NoiseBank};
use speech_simclr::dsp::Waveform;
use speech_simclr::features::{CmvnMode, FbankConfig};
use speech_simclr::nn::EncoderConfig;
use speech_simclr::objective::LossWeights;
use speech_simclr::trainer::*;
use speech_simclr::Error;

const RATE: u32 = 16000;

fn tone(freq: f64, len: usize, phase: f64) -> Waveform {
    let x: Vec<f64> = (0..len)
        .map(|i| 0.3 * (2.0 * PI * freq * i as f64 / f64::from(RATE) + phase).sin())
        .collect();
    Waveform::from_f64(&x, RATE).unwrap()
}

fn data(n: usize) -> Vec<Utterance> {
    (0..n)
        .map(|i| Utterance::new(format!("utt{i:03}"), tone(200.0 + 40.0 * i as f64, 4000, i as f64)))
        .collect()
}

fn pipeline() -> ViewPipeline {
    let noise: Vec<f32> = (0..3000).map(|i| ((i * 7919 % 613) as f32 / 613.0 - 0.5) * 0.2).collect();
    ViewPipeline {
        augment: AugmentConfig::default(),
        alteration: AlterationConfig::default(),
        frontend: Frontend::new(FbankConfig::default(), RATE, CmvnMode::PerUtterance).unwrap(),
        noise: NoiseBank::new(vec![Waveform::new(noise, RATE).unwrap()]).unwrap(),
    }
}

fn encoder() -> EncoderConfig {
    EncoderConfig {
        proj_dim: 8,
        ..EncoderConfig::toy(1, 16, 32, 2)
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        epochs: 3,
        warmup_n: 20,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn contrastive_only_single_utterance_batch_changes_nothing() {
    let d = data(1);
    let mut state = TrainState::new(&encoder(), 1).unwrap();
    let before = state.params.clone();
    let cfg = TrainConfig {
        weights: LossWeights::contrastive_only(),
        ..config()
    };
    let m = train_step(&mut state, &[&d[0]], &pipeline(), &cfg).unwrap();
    assert_eq!(m.loss, 0.0);
    assert_eq!(m.grad_norm, 0.0);
    assert_eq!(state.params, before);
    assert_eq!(state.step, 1);
}

#[test]
fn metrics_record_the_scheduled_rate() {
    let d = data(4);
    let mut state = TrainState::new(&encoder(), 1).unwrap();
    let cfg = config();
    let mut seen = Vec::new();
    train(&mut state, &d, &pipeline(), &cfg, Some(4), |_, m| {
        seen.push(m.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.len(), 4);
    for m in &seen {
        assert_eq!(m.lr, lr_at(m.step, 0.5, 16, 20, 0.5).unwrap());
        assert!(m.grad_norm.is_finite() && m.loss.is_finite());
        assert!((m.loss - (m.ntxent + m.recon)).abs() < 1e-12);
    }
    assert_eq!(seen.iter().map(|m| m.epoch).collect::<Vec<_>>(), [1, 1, 2, 2]);
}

#[test]
fn resume_from_checkpoint_is_bitwise_identical() {
    let d = data(6);
    let cfg = config();
    let p = pipeline();
    let mut straight = TrainState::new(&encoder(), cfg.seed).unwrap();
    train(&mut straight, &d, &p, &cfg, Some(8), |_, _| Ok(())).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.sscn");
    let mut first = TrainState::new(&encoder(), cfg.seed).unwrap();
    train(&mut first, &d, &p, &cfg, Some(4), |_, _| Ok(())).unwrap();
    Checkpoint {
        state: first,
        train: cfg.clone(),
    }
    .save(&path)
    .unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.train, cfg);
    let mut resumed = loaded.state;
    train(&mut resumed, &d, &p, &cfg, Some(8), |_, _| Ok(())).unwrap();
    assert_eq!(resumed, straight);
}

#[test]
fn empty_batch_and_undersized_data_are_rejected() {
    let mut state = TrainState::new(&encoder(), 1).unwrap();
    assert!(train_step(&mut state, &[], &pipeline(), &config()).is_err());
    let cfg = TrainConfig {
        batch_size: 10,
        ..config()
    };
    let err = train(&mut state, &data(3), &pipeline(), &cfg, None, |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn extraction_shapes_and_determinism() {
    let d = data(3);
    let enc = EncoderConfig {
        use_prenet: true,
        prenet_channels: 8,
        ..encoder()
    };
    let state = TrainState::new(&enc, 2).unwrap();
    let fe = pipeline().frontend;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.sscn"), dir.path().join("b.sscn"));
    extract_features(&state.params, &d, &fe, &a).unwrap();
    extract_features(&state.params, &d, &fe, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let arch = NamedTensors::load(&a).unwrap();
    assert_eq!(arch.len(), 3);
    let frames = fe.features(&d[0].waveform).unwrap().frames();
    for (name, t) in arch.iter() {
        assert!(name.starts_with("utt"));
        assert_eq!(t.shape(), &[enc.output_len(frames), 16]);
    }
}

#[test]
fn corrupted_checkpoint_is_rejected_without_side_effects() {
    let cfg = config();
    let state = TrainState::new(&encoder(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.sscn");
    Checkpoint { state, train: cfg }.save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[1] = b'Z';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Format { offset: 0, .. })));
}
