use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
    /// Hann raised to the power 0.85.
    Povey,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let c = (2.0 * PI * n as f64 / denom).cos();
                match self {
                    Window::Hamming => 0.54 - 0.46 * c,
                    Window::Hann => 0.5 - 0.5 * c,
                    Window::Povey => (0.5 - 0.5 * c).powf(0.85),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    /// FFT size; `None` rounds the frame length up to a power of two.
    pub n_fft: Option<usize>,
    pub window: Window,
    /// Per-frame pre-emphasis coefficient; 0 disables it.
    pub preemphasis: f64,
    /// Subtract each frame's mean before windowing.
    pub remove_dc: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            n_fft: None,
            window: Window::Povey,
            preemphasis: 0.97,
            remove_dc: false,
        }
    }
}

impl StftConfig {
    pub fn frame_length_samples(&self, rate: u32) -> usize {
        (f64::from(rate) * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn frame_shift_samples(&self, rate: u32) -> usize {
        (f64::from(rate) * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn fft_size(&self, rate: u32) -> usize {
        self.n_fft
            .unwrap_or_else(|| self.frame_length_samples(rate).next_power_of_two())
    }

    pub fn validate(&self, rate: u32) -> Result<()> {
        let len = self.frame_length_samples(rate);
        let shift = self.frame_shift_samples(rate);
        if shift == 0 || len < shift {
            return Err(Error::Config(format!(
                "frame length ({len} samples) must be >= frame shift ({shift} samples) > 0"
            )));
        }
        if self.fft_size(rate) < len {
            return Err(Error::Config(format!(
                "n_fft {} is smaller than the frame length {len}",
                self.fft_size(rate)
            )));
        }
        if !(0.0..=1.0).contains(&self.preemphasis) {
            return Err(Error::Config("pre-emphasis coefficient must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Frames produced for `num_samples` samples (edge frames are dropped).
    pub fn num_frames(&self, num_samples: usize, rate: u32) -> usize {
        let len = self.frame_length_samples(rate);
        let shift = self.frame_shift_samples(rate);
        if num_samples < len || shift == 0 {
            0
        } else {
            (num_samples - len) / shift + 1
        }
    }
}

/// One-sided complex spectra of successive windowed frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Vec<Complex<f64>>,
    pub num_frames: usize,
    pub n_fft: usize,
    pub frame_length_samples: usize,
    pub frame_shift_samples: usize,
    /// Always true: frames extending past the signal end are dropped.
    pub snip_edges: bool,
}

impl ComplexSpectrogram {
    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        let b = self.num_bins();
        &self.frames[t * b..(t + 1) * b]
    }

    /// `|X|²` per frame and bin, row-major.
    pub fn power(&self) -> Vec<f64> {
        self.frames.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Short-time Fourier transform with snipped edges and no dither.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let rate = w.sample_rate_hz();
    cfg.validate(rate)?;
    let len = cfg.frame_length_samples(rate);
    let shift = cfg.frame_shift_samples(rate);
    let n_fft = cfg.fft_size(rate);
    let bins = n_fft / 2 + 1;
    let t = cfg.num_frames(w.len(), rate);
    let window = cfg.window.coefficients(len);
    let x = w.to_f64();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut frames = Vec::with_capacity(t * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut frame = vec![0.0; len];
    for f in 0..t {
        frame.copy_from_slice(&x[f * shift..f * shift + len]);
        if cfg.remove_dc {
            let mean = frame.iter().sum::<f64>() / len as f64;
            frame.iter_mut().for_each(|v| *v -= mean);
        }
        if cfg.preemphasis > 0.0 {
            for i in (1..len).rev() {
                frame[i] -= cfg.preemphasis * frame[i - 1];
            }
            frame[0] -= cfg.preemphasis * frame[0];
        }
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < len {
                Complex::new(frame[i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        frames.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        frames,
        num_frames: t,
        n_fft,
        frame_length_samples: len,
        frame_shift_samples: shift,
        snip_edges: true,
    })
}
