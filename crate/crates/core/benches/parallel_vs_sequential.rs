//! Compares the rayon build with the sequential fallback.
//!
//! ```text
//! cargo bench -p speech-simclr --bench parallel_vs_sequential
//! cargo bench -p speech-simclr --bench parallel_vs_sequential --no-default-features
//! ```
//!
//! Both runs report under the same group names, with the function id naming
//! the build, so criterion's report places them side by side. The parallel
//! build also measures itself inside a one-thread pool.

use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use speech_simclr::alteration::AlterationConfig;
use speech_simclr::augment::{AugmentConfig, Frontend, NoiseBank};
use speech_simclr::dsp::Waveform;
use speech_simclr::features::{CmvnMode, FbankConfig};
use speech_simclr::nn::EncoderConfig;
use speech_simclr::par;
use speech_simclr::trainer::{encode_utterances, train_step, TrainConfig, TrainState, Utterance, ViewPipeline};

const RATE: u32 = 16000;

fn corpus(n: usize) -> Vec<Utterance> {
    (0..n)
        .map(|i| {
            let f0 = 110.0 + 23.0 * i as f64;
            let x: Vec<f64> = (0..RATE as usize)
                .map(|t| {
                    let t = t as f64 / f64::from(RATE);
                    (1..6).map(|h| 0.1 / h as f64 * (2.0 * PI * f0 * h as f64 * t).sin()).sum()
                })
                .collect();
            Utterance::new(format!("u{i}"), Waveform::from_f64(&x, RATE).unwrap())
        })
        .collect()
}

fn pipeline() -> ViewPipeline {
    let noise: Vec<f64> = (0..2 * RATE as usize).map(|i| ((i * 7919 % 1013) as f64 / 1013.0 - 0.5) * 0.4).collect();
    ViewPipeline {
        augment: AugmentConfig::default(),
        alteration: AlterationConfig::default(),
        frontend: Frontend::new(FbankConfig::default(), RATE, CmvnMode::PerUtterance).unwrap(),
        noise: NoiseBank::new(vec![Waveform::from_f64(&noise, RATE).unwrap()]).unwrap(),
    }
}

fn encoder() -> EncoderConfig {
    EncoderConfig {
        proj_hidden: 64,
        ..EncoderConfig::toy(4, 64, 256, 4)
    }
}

fn build() -> &'static str {
    if par::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

/// Runs `f` as measured in this build, and for the rayon build once more
/// inside a one-thread pool.
fn variants(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(build(), |b| b.iter(&mut f));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function("parallel-1-thread", |b| b.iter(|| pool.install(&mut f)));
    }
    g.finish();
}

fn bench(c: &mut Criterion) {
    let data = corpus(8);
    let batch: Vec<&Utterance> = data.iter().collect();
    let pipe = pipeline();
    let cfg = TrainConfig {
        batch_size: 8,
        ..TrainConfig::default()
    };
    let state = TrainState::new(&encoder(), 0).unwrap();
    variants(c, "train_step_n8", || {
        let mut s = state.clone();
        black_box(train_step(&mut s, &batch, &pipe, &cfg).unwrap());
    });
    variants(c, "encode_8_utterances", || {
        black_box(encode_utterances(&state.params, &data, &pipe.frontend).unwrap());
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
