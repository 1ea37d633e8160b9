//! Pitch shifting (duration preserving) and speed perturbation.
//!
//! Pitch shift by `c` cents = phase-vocoder time stretch by `r = 2^(c/1200)`
//! followed by band-limited resampling back to the original length, which
//! scales every frequency by `r`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{resample_to_len, Window, Waveform};
use crate::error::{Error, Result};

fn pv_fft_size(rate: u32) -> usize {
    // ~64 ms analysis frames.
    let target = f64::from(rate) * 0.064;
    (target.log2().round().exp2() as usize).max(64)
}

fn wrap(phase: f64) -> f64 {
    phase - 2.0 * PI * ((phase + PI) / (2.0 * PI)).floor()
}

/// Phase-vocoder time stretch: output has `round(len · factor)` samples and the
/// same local spectrum.
pub fn time_stretch(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::arg(format!("stretch factor must be positive, got {factor}")));
    }
    let len = w.len();
    let out_len = (len as f64 * factor).round() as usize;
    if factor == 1.0 || len == 0 {
        return Ok(w.clone());
    }
    let n = pv_fft_size(w.sample_rate_hz());
    let hop_s = n / 4;
    let hop_a = hop_s as f64 / factor;
    let half = n / 2;

    let mut padded = vec![0.0; half];
    padded.extend(w.to_f64());
    padded.resize(half + len + n + 1, 0.0);

    let frames = (len as f64 / hop_a).floor() as usize + 2;
    let window = Window::Hann.coefficients(n + 1)[..n].to_vec();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut out = vec![0.0; frames * hop_s + n];
    let mut norm = vec![0.0; frames * hop_s + n];
    let mut prev_phase = vec![0.0; n / 2 + 1];
    let mut synth_phase = vec![0.0; n / 2 + 1];
    let mut prev_pos = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); n];

    for m in 0..frames {
        let pos = (m as f64 * hop_a).round() as usize;
        for i in 0..n {
            let x = padded.get(pos + i).copied().unwrap_or(0.0);
            buf[i] = Complex::new(x * window[i], 0.0);
        }
        fwd.process(&mut buf);
        let da = pos as f64 - prev_pos as f64;
        for k in 0..=n / 2 {
            let phase = buf[k].arg();
            let omega = 2.0 * PI * k as f64 / n as f64;
            if m == 0 {
                synth_phase[k] = phase;
            } else {
                let inst = if da > 0.0 {
                    omega + wrap(phase - prev_phase[k] - omega * da) / da
                } else {
                    omega
                };
                synth_phase[k] += inst * hop_s as f64;
            }
            prev_phase[k] = phase;
            let mag = buf[k].norm();
            buf[k] = Complex::from_polar(mag, synth_phase[k]);
        }
        for k in 1..n / 2 {
            buf[n - k] = buf[k].conj();
        }
        inv.process(&mut buf);
        let start = m * hop_s;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
        prev_pos = pos;
    }
    let y: Vec<f64> = (0..out_len)
        .map(|i| {
            let j = i + half;
            if norm[j] > 1e-8 {
                out[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect();
    Waveform::from_f64(&y, w.sample_rate_hz())
}

/// Shifts pitch by `cents` while keeping the length unchanged.
pub fn pitch_shift(w: &Waveform, cents: i32) -> Result<Waveform> {
    if cents.abs() > 1200 {
        return Err(Error::arg(format!("pitch shift of {cents} cents exceeds ±1200")));
    }
    if cents == 0 || w.is_empty() {
        return Ok(w.clone());
    }
    let ratio = 2f64.powf(f64::from(cents) / 1200.0);
    let stretched = time_stretch(w, ratio)?;
    resample_to_len(&stretched, w.len())
}

/// Speed change by a single resampling step: the output has
/// `round(len / factor)` samples and every frequency is scaled by `factor`.
pub fn speed_perturb(w: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor > 0.0) {
        return Err(Error::arg(format!("speed factor must be positive, got {factor}")));
    }
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::arg(format!("speed factor {factor} outside [0.5, 2]")));
    }
    if factor == 1.0 {
        return Ok(w.clone());
    }
    let out_len = (w.len() as f64 / factor).round() as usize;
    resample_to_len(w, out_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{peak_frequency, sine};

    #[test]
    fn zero_cents_is_identity() {
        let w = sine(440.0, 16000, 8000, 0.5);
        assert_eq!(pitch_shift(&w, 0).unwrap(), w);
    }

    #[test]
    fn pitch_ratio_on_sines() {
        let w = sine(440.0, 16000, 16000, 0.5);
        for (cents, want) in [(300, 440.0 * 2f64.powf(0.25)), (-300, 440.0 * 2f64.powf(-0.25))] {
            let y = pitch_shift(&w, cents).unwrap();
            assert_eq!(y.len(), w.len());
            let got = peak_frequency(&y);
            assert!((got - want).abs() <= 0.02 * want, "{cents}: {got} vs {want}");
        }
    }

    #[test]
    fn stretch_keeps_frequency() {
        let w = sine(600.0, 16000, 12000, 0.5);
        let y = time_stretch(&w, 1.3).unwrap();
        assert_eq!(y.len(), 15600);
        assert!((peak_frequency(&y) - 600.0).abs() < 6.0);
    }

    #[test]
    fn speed_examples() {
        let w = sine(440.0, 16000, 16000, 0.5);
        assert_eq!(speed_perturb(&w, 1.0).unwrap(), w);
        assert_eq!(speed_perturb(&w, 0.8).unwrap().len(), 20000);
        let fast = speed_perturb(&w, 1.2).unwrap();
        let got = peak_frequency(&fast);
        assert!((got - 528.0).abs() <= 5.28, "{got}");
        assert!(matches!(speed_perturb(&w, 0.0), Err(Error::Argument(_))));
        assert!(matches!(speed_perturb(&w, -1.0), Err(Error::Argument(_))));
    }
}
