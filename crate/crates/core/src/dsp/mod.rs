//! Waveforms, WAV I/O, resampling, convolution and short-time Fourier analysis.
//!
//! Samples are stored as `f32`; every computation runs in `f64`.

mod convolve;
mod resample;
mod stft;
mod wav;

pub use convolve::{convolve, convolve_direct, convolve_fft, DIRECT_MAX_TAPS};
pub use resample::{resample, resample_to_len};
pub use stft::{stft, ComplexSpectrogram, StftConfig, Window};
pub use wav::{read_wav, read_wav_bytes, wav_bytes, write_wav};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::arg(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Builds a waveform from 64-bit samples, rounding to storage precision.
    pub fn from_f64(samples: &[f64], sample_rate_hz: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&x| x as f32).collect(), sample_rate_hz)
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&x| f64::from(x)).collect()
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Mean power (mean of squared samples); zero for an empty waveform.
    pub fn power(&self) -> f64 {
        mean_power(&self.to_f64())
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}
