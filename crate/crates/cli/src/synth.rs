//! Synthetic labelled corpus: harmonic tones whose classes differ in
//! fundamental-frequency band, amplitude-modulation rate and spectral
//! envelope, plus a small bank of coloured-noise clips.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use speech_simclr::augment::reverberate;
use speech_simclr::dsp::Waveform;
use speech_simclr::features::{FbankConfig, FeatureMatrix};
use speech_simclr::rng::{rng_from, Rng as SeededRng};
use speech_simclr::trainer::Utterance;
use speech_simclr::{par, Error, Result};

use crate::probe::{cross_validate, ProbeConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Timbre {
    /// Harmonic amplitudes falling as `1/h²`.
    Dark,
    /// Odd harmonics only, `1/h`.
    Odd,
    /// Flat up to 3.5 kHz.
    Bright,
    /// Resonances near 700 Hz and 2.2 kHz.
    Formant,
}

impl Timbre {
    fn gain(self, h: usize, freq: f64) -> f64 {
        let h = h as f64;
        match self {
            Timbre::Dark => 1.0 / (h * h),
            Timbre::Odd => {
                if h as usize % 2 == 1 {
                    1.0 / h
                } else {
                    0.0
                }
            }
            Timbre::Bright => {
                if freq < 3500.0 {
                    0.5
                } else {
                    0.0
                }
            }
            Timbre::Formant => {
                let peak = |f0: f64, bw: f64| 1.0 / (1.0 + ((freq - f0) / bw).powi(2));
                peak(700.0, 150.0) + 0.6 * peak(2200.0, 250.0) + 0.02
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassSpec {
    pub f0_band_hz: [f64; 2],
    pub am_rate_hz: f64,
    pub timbre: Timbre,
}

pub const CLASSES: [ClassSpec; 4] = [
    ClassSpec {
        f0_band_hz: [95.0, 125.0],
        am_rate_hz: 2.5,
        timbre: Timbre::Dark,
    },
    ClassSpec {
        f0_band_hz: [150.0, 190.0],
        am_rate_hz: 5.0,
        timbre: Timbre::Odd,
    },
    ClassSpec {
        f0_band_hz: [230.0, 290.0],
        am_rate_hz: 9.0,
        timbre: Timbre::Bright,
    },
    ClassSpec {
        f0_band_hz: [350.0, 440.0],
        am_rate_hz: 16.0,
        timbre: Timbre::Formant,
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub noise_clips: usize,
    pub noise_duration_s: f64,
    /// Per-utterance coloured background noise at an SNR drawn from this
    /// range (dB); `None` keeps utterances clean apart from a faint floor.
    pub background_snr_db: Option<[f64; 2]>,
    /// Per-utterance reverberance drawn from this range (percent).
    pub reverberance_pct: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 200,
            duration_s: 1.0,
            sample_rate_hz: 16000,
            noise_clips: 4,
            noise_duration_s: 2.0,
            background_snr_db: Some([-5.0, 5.0]),
            reverberance_pct: Some([0.0, 100.0]),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=CLASSES.len()).contains(&self.classes) {
            return Err(Error::Config(format!("synthetic class count must be 2..={}", CLASSES.len())));
        }
        if self.per_class == 0 || !(self.duration_s > 0.05) || self.sample_rate_hz < 8000 {
            return Err(Error::Config(
                "synthetic data needs per_class ≥ 1, duration > 50 ms and a rate of at least 8 kHz".into(),
            ));
        }
        let range_ok = |r: Option<[f64; 2]>| r.is_none_or(|[lo, hi]| lo.is_finite() && hi.is_finite() && lo <= hi);
        if !range_ok(self.background_snr_db) || !range_ok(self.reverberance_pct) {
            return Err(Error::Config("synthetic nuisance ranges need finite lo ≤ hi".into()));
        }
        if self.reverberance_pct.is_some_and(|[lo, hi]| lo < 0.0 || hi > 100.0) {
            return Err(Error::Config("synthetic reverberance must lie in [0, 100]".into()));
        }
        if self.noise_clips > 0 && !(self.noise_duration_s > 0.0) {
            return Err(Error::Config("noise clips need a positive duration".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub utterances: Vec<Utterance>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub noise: Vec<Waveform>,
}

fn utterance(spec: &ClassSpec, cfg: &SynthConfig, rng: &mut SeededRng) -> Result<Waveform> {
    let rate = f64::from(cfg.sample_rate_hz);
    let len = (cfg.duration_s * rate).round() as usize;
    let [lo, hi] = spec.f0_band_hz;
    let f0_start = rng.random_range(lo..hi);
    let f0_end = (f0_start * rng.random_range(0.97..1.03)).clamp(lo, hi);
    let am_rate = spec.am_rate_hz * rng.random_range(0.9..1.1);
    let am_depth = rng.random_range(0.6..0.9);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let nyquist = rate / 2.0;
    let harmonics = (0.9 * nyquist / hi).floor() as usize;
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut x = vec![0.0; len];
    let mut phase = 0.0;
    for (i, s) in x.iter_mut().enumerate() {
        let t = i as f64 / rate;
        let f0 = f0_start + (f0_end - f0_start) * i as f64 / len as f64;
        phase += 2.0 * PI * f0 / rate;
        let mut v = 0.0;
        for (h, ph) in phases.iter().enumerate() {
            let h = h + 1;
            let f = f0 * h as f64;
            if f >= 0.9 * nyquist {
                break;
            }
            let g = spec.timbre.gain(h, f);
            if g > 0.0 {
                v += g * (phase * h as f64 + ph).sin();
            }
        }
        let am = 1.0 - am_depth * 0.5 * (1.0 - (2.0 * PI * am_rate * t + am_phase).cos());
        *s = v * am;
    }
    let fade = ((0.02 * rate) as usize).min(len / 2);
    for i in 0..fade {
        let g = i as f64 / fade as f64;
        x[i] *= g;
        x[len - 1 - i] *= g;
    }
    if let Some([lo, hi]) = cfg.reverberance_pct {
        let r = rng.random_range(lo..=hi);
        x = reverberate(&Waveform::from_f64(&normalize(&x, 0.5), cfg.sample_rate_hz)?, r, 50.0, rng.random_range(0.0..=100.0))?.to_f64();
    }
    if let Some([lo, hi]) = cfg.background_snr_db {
        let pole = rng.random_range(0.0..0.98);
        let noise = coloured(pole, x.len(), rng);
        let p_sig = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let snr = rng.random_range(lo..=hi);
        let g = (p_sig / p_noise.max(1e-30) / 10f64.powf(snr / 10.0)).sqrt();
        x.iter_mut().zip(&noise).for_each(|(s, n)| *s += g * n);
    }
    let mut x = normalize(&x, rng.random_range(0.3..0.7));
    let floor = 10f64.powf(-35.0 / 20.0) * rng.random_range(0.3..0.7);
    for s in &mut x {
        *s += floor * rng.random_range(-1.0..1.0);
    }
    Waveform::from_f64(&x, cfg.sample_rate_hz)
}

fn normalize(x: &[f64], peak: f64) -> Vec<f64> {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    x.iter().map(|v| v * peak / m).collect()
}

/// One-pole low-passed uniform noise.
fn coloured(pole: f64, len: usize, rng: &mut SeededRng) -> Vec<f64> {
    let mut y = 0.0;
    (0..len)
        .map(|_| {
            y = pole * y + (1.0 - pole) * rng.random_range(-1.0..1.0);
            y
        })
        .collect()
}

fn noise_clip(kind: usize, cfg: &SynthConfig, rng: &mut SeededRng) -> Result<Waveform> {
    let len = (cfg.noise_duration_s * f64::from(cfg.sample_rate_hz)).round() as usize;
    // Successively darker colours: white, then one-pole low-passed noise.
    let pole = [0.0, 0.7, 0.9, 0.98][kind % 4];
    Waveform::from_f64(&normalize(&coloured(pole, len, rng), 0.5), cfg.sample_rate_hz)
}

/// Generates the corpus; utterance ids are `c<class>_<index>`.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let total = cfg.classes * cfg.per_class;
    let utterances = par::try_map_range(total, |i| {
        let (c, j) = (i / cfg.per_class, i % cfg.per_class);
        let mut rng = rng_from(&[cfg.seed, c as u64, j as u64, 0x5e7]);
        Ok::<_, Error>(Utterance::new(format!("c{c}_{j:04}"), utterance(&CLASSES[c], cfg, &mut rng)?))
    })?;
    let noise = (0..cfg.noise_clips)
        .map(|k| noise_clip(k, cfg, &mut rng_from(&[cfg.seed, k as u64, 0x401])))
        .collect::<Result<_>>()?;
    Ok(SyntheticDataset {
        utterances,
        labels: (0..total).map(|i| i / cfg.per_class).collect(),
        class_names: (0..cfg.classes).map(|c| format!("c{c}")).collect(),
        noise,
    })
}

/// Per-bin mean and standard deviation over time.
fn summary(f: &FeatureMatrix) -> Vec<f64> {
    let (t, b) = (f.frames(), f.bins());
    let mut mean = vec![0.0; b];
    let mut sq = vec![0.0; b];
    for i in 0..t {
        for (j, &v) in f.frame(i).iter().enumerate() {
            mean[j] += v / t as f64;
            sq[j] += v * v / t as f64;
        }
    }
    let std = mean.iter().zip(&sq).map(|(m, s)| (s - m * m).max(0.0).sqrt());
    mean.iter().copied().chain(std).collect()
}

/// Five-fold cross-validated accuracy of the linear probe on clean,
/// unnormalized FBANK summaries (per-bin mean and deviation).
pub fn separability(ds: &SyntheticDataset, sample_rate_hz: u32) -> Result<f64> {
    let fe = speech_simclr::augment::Frontend::new(
        FbankConfig::default(),
        sample_rate_hz,
        speech_simclr::features::CmvnMode::None,
    )?;
    let rows = par::try_map_slice(&ds.utterances, |u| Ok::<_, Error>(summary(&fe.features(&u.waveform)?)))?;
    cross_validate(&rows, &ds.labels, ds.class_names.len(), 5, &ProbeConfig::default())
}

/// Minimum accuracy [`separability`] must reach for the corpus to be usable.
pub const SEPARABILITY_THRESHOLD: f64 = 0.95;

/// [`generate`] followed by the separability self-check.
pub fn generate_checked(cfg: &SynthConfig) -> Result<(SyntheticDataset, f64)> {
    let ds = generate(cfg)?;
    let acc = separability(&ds, cfg.sample_rate_hz)?;
    if acc < SEPARABILITY_THRESHOLD {
        return Err(Error::Data(format!(
            "synthetic classes are not separable enough: cross-validated accuracy {acc:.3} < {SEPARABILITY_THRESHOLD}"
        )));
    }
    Ok((ds, acc))
}
