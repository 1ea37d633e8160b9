//! Measurement helpers shared by unit tests.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::Waveform;

pub fn sine(freq: f64, rate: u32, len: usize, amp: f64) -> Waveform {
    let x: Vec<f64> = (0..len)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin())
        .collect();
    Waveform::from_f64(&x, rate).unwrap()
}

/// Frequency of the strongest spectral peak (Hann window, 4× zero padding,
/// parabolic interpolation on log magnitude).
pub fn peak_frequency(w: &Waveform) -> f64 {
    let x = w.to_f64();
    let n = (x.len().next_power_of_two()) * 4;
    let len = x.len();
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| {
            if i < len {
                let win = 0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
                Complex::new(x[i] * win, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm() + 1e-30).collect();
    let k = (1..n / 2 - 1)
        .max_by(|&a, &b| mags[a].partial_cmp(&mags[b]).unwrap())
        .unwrap();
    let (a, b, c) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
    let delta = 0.5 * (a - c) / (a - 2.0 * b + c);
    (k as f64 + delta) * f64::from(w.sample_rate_hz()) / n as f64
}
