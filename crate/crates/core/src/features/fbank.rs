use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::dsp::{stft, StftConfig, Waveform};
use crate::error::{Error, Result};

/// Floor applied to mel energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbankConfig {
    pub n_mels: usize,
    pub low_freq_hz: f64,
    /// Upper filter edge; values ≤ 0 are taken relative to Nyquist.
    pub high_freq_hz: f64,
    pub stft: StftConfig,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            low_freq_hz: 20.0,
            high_freq_hz: 0.0,
            stft: StftConfig::default(),
        }
    }
}

/// Triangular filters, equally spaced on the mel scale, over one-sided FFT bins.
#[derive(Clone, Debug, PartialEq)]
pub struct MelBank {
    /// Per filter: first bin and weights.
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
    num_bins: usize,
}

impl MelBank {
    pub fn new(n_mels: usize, n_fft: usize, rate: u32, low_hz: f64, high_hz: f64) -> Result<Self> {
        let num_bins = n_fft / 2 + 1;
        if n_mels == 0 {
            return Err(Error::arg("n_mels must be at least 1"));
        }
        if n_mels > num_bins {
            return Err(Error::arg(format!(
                "n_mels {n_mels} exceeds the {num_bins} FFT bins of n_fft {n_fft}"
            )));
        }
        let nyquist = f64::from(rate) / 2.0;
        let high = if high_hz <= 0.0 { nyquist + high_hz } else { high_hz };
        if !(0.0 <= low_hz && low_hz < high && high <= nyquist) {
            return Err(Error::arg(format!("invalid mel range {low_hz}..{high} Hz (Nyquist {nyquist})")));
        }
        let (mlo, mhi) = (hz_to_mel(low_hz), hz_to_mel(high));
        let step = (mhi - mlo) / (n_mels + 1) as f64;
        let bin_hz = f64::from(rate) / n_fft as f64;
        let mut filters = Vec::with_capacity(n_mels);
        let mut centers = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let left = mlo + m as f64 * step;
            let center = left + step;
            let right = center + step;
            centers.push(mel_to_hz(center));
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..num_bins {
                let mel = hz_to_mel(k as f64 * bin_hz);
                let w = if mel > left && mel < right {
                    if mel <= center {
                        (mel - left) / (center - left)
                    } else {
                        (right - mel) / (right - center)
                    }
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        Ok(Self {
            filters,
            centers_hz: centers,
            num_bins,
        })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Dense weights of filter `m` over all FFT bins.
    pub fn dense(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_bins];
        let (start, w) = &self.filters[m];
        out[*start..start + w.len()].copy_from_slice(w);
        out
    }

    /// Applies the bank to one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for ((start, w), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Log-mel filterbank energies, one row per frame.
pub fn fbank(w: &Waveform, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    let rate = w.sample_rate_hz();
    let n_fft = cfg.stft.fft_size(rate);
    let bank = MelBank::new(cfg.n_mels, n_fft, rate, cfg.low_freq_hz, cfg.high_freq_hz)?;
    fbank_with(w, cfg, &bank)
}

/// [`fbank`] with a prebuilt filterbank.
pub fn fbank_with(w: &Waveform, cfg: &FbankConfig, bank: &MelBank) -> Result<FeatureMatrix> {
    let spec = stft(w, &cfg.stft)?;
    let power = spec.power();
    let bins = spec.num_bins();
    let t = spec.num_frames;
    let m = bank.len();
    let mut values = vec![0.0; t * m];
    for f in 0..t {
        let row = &mut values[f * m..(f + 1) * m];
        bank.apply(&power[f * bins..(f + 1) * bins], row);
        for v in row.iter_mut() {
            *v = v.max(LOG_FLOOR).ln();
        }
    }
    FeatureMatrix::new(values, t, m, cfg.stft.frame_shift_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn silence_hits_the_floor() {
        let w = Waveform::silence(16000, 16000).unwrap();
        let f = fbank(&w, &FbankConfig::default()).unwrap();
        assert_eq!((f.frames(), f.bins()), (98, 80));
        assert!(f.values().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn filters_are_nonnegative_unimodal_and_ordered() {
        let bank = MelBank::new(80, 512, 16000, 20.0, 0.0).unwrap();
        for m in 0..bank.len() {
            let w = bank.dense(m);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!(w.iter().any(|&x| x > 0.0), "filter {m} is empty");
            let peak = w
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(w[..=peak].windows(2).all(|p| p[0] <= p[1]));
            assert!(w[peak..].windows(2).all(|p| p[0] >= p[1]));
        }
        assert!(bank.centers_hz().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn too_many_mels_is_an_error() {
        assert!(matches!(MelBank::new(300, 512, 16000, 20.0, 0.0), Err(Error::Argument(_))));
        let cfg = FbankConfig {
            n_mels: 300,
            ..FbankConfig::default()
        };
        let w = Waveform::silence(800, 16000).unwrap();
        assert!(fbank(&w, &cfg).is_err());
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 20.0, 700.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn tone_energy_lands_in_matching_filter() {
        let x: Vec<f64> = (0..16000).map(|i| 0.5 * (2.0 * PI * 1000.0 * i as f64 / 16000.0).sin()).collect();
        let w = Waveform::from_f64(&x, 16000).unwrap();
        let f = fbank(&w, &FbankConfig::default()).unwrap();
        let row = f.frame(50);
        let best = (0..80).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap();
        let bank = MelBank::new(80, 512, 16000, 20.0, 0.0).unwrap();
        let nearest = (0..80)
            .min_by(|&a, &b| {
                (bank.centers_hz()[a] - 1000.0)
                    .abs()
                    .partial_cmp(&(bank.centers_hz()[b] - 1000.0).abs())
                    .unwrap()
            })
            .unwrap();
        assert!(best.abs_diff(nearest) <= 1, "{best} vs {nearest}");
    }
}
