//! Band-limited resampling with a Kaiser-windowed sinc kernel.
//!
//! For rational rate changes with a small numerator the kernel is tabulated
//! per polyphase branch; otherwise weights are evaluated on the fly at each
//! fractional input position. Both paths evaluate the same kernel.

use std::f64::consts::PI;
use std::sync::OnceLock;

use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the sinc on each side of the center at cutoff 1.
const ZERO_CROSSINGS: usize = 16;
const KAISER_BETA: f64 = 8.6;
/// Passband edge relative to the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;
const MAX_TABLE_PHASES: u64 = 4096;
/// Kernel samples per input-sample step in the interpolated lookup table.
const TABLE_RES: usize = 1024;

const WINDOW_RES: usize = 1 << 16;

/// Kaiser window over `r = |x| / half_width` in `[0, 1]`.
fn window_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let norm = bessel_i0(KAISER_BETA);
        (0..=WINDOW_RES + 1)
            .map(|i| {
                let r = (i as f64 / WINDOW_RES as f64).min(1.0);
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
            })
            .collect()
    })
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    cutoff: f64,
    half_width: f64,
    norm: f64,
}

impl Kernel {
    /// `ratio` = output rate / input rate.
    fn new(ratio: f64) -> Self {
        let cutoff = ratio.min(1.0) * ROLLOFF;
        Self {
            cutoff,
            half_width: ZERO_CROSSINGS as f64 / cutoff,
            norm: bessel_i0(KAISER_BETA),
        }
    }

    /// Weight of an input sample at distance `x` (in input samples).
    fn weight(&self, x: f64) -> f64 {
        if x.abs() >= self.half_width {
            return 0.0;
        }
        let r = x / self.half_width;
        let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.norm;
        let arg = PI * self.cutoff * x;
        let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
        self.cutoff * sinc * win
    }

    fn taps(&self) -> isize {
        self.half_width.ceil() as isize
    }

    /// Kernel sampled every `1/TABLE_RES` input samples over
    /// `[-(taps + 1), taps + 1]`, with the window read from a shared table.
    fn table(&self) -> KernelTable {
        let win = window_table();
        let reach = self.taps() as usize + 1;
        let n = 2 * reach * TABLE_RES + 2;
        let values = (0..n)
            .map(|i| {
                let x = (i as f64 / TABLE_RES as f64 - reach as f64).abs();
                if x >= self.half_width {
                    return 0.0;
                }
                let pos = x / self.half_width * WINDOW_RES as f64;
                let j = pos as usize;
                let f = pos - j as f64;
                let w = win[j] + f * (win[j + 1] - win[j]);
                let arg = PI * self.cutoff * x;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
                self.cutoff * sinc * w
            })
            .collect();
        KernelTable { values, reach }
    }
}

struct KernelTable {
    values: Vec<f64>,
    /// Offset (in input samples) of the first table entry below zero.
    reach: usize,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Taps of one output sample: valid input range `first..=last` relative to
/// the fractional center `base + frac`.
fn tap_range(len: usize, base: isize, taps: isize) -> Option<(usize, usize)> {
    let first = (base - taps + 1).max(0);
    let last = (base + taps).min(len as isize - 1);
    (first <= last).then_some((first as usize, last as usize))
}

fn interpolate_exact(x: &[f64], base: isize, taps: isize, ws: &[f64]) -> f64 {
    let Some((first, last)) = tap_range(x.len(), base, taps) else {
        return 0.0;
    };
    let skip = (first as isize - (base - taps + 1)) as usize;
    x[first..=last].iter().zip(&ws[skip..]).map(|(a, w)| a * w).sum()
}

fn interpolate_table(x: &[f64], base: isize, frac: f64, taps: isize, table: &KernelTable) -> f64 {
    let Some((first, last)) = tap_range(x.len(), base, taps) else {
        return 0.0;
    };
    // Every tap sits a whole number of samples from the first, so all share
    // one interpolation fraction.
    let pos = ((first as isize - base) as f64 - frac + table.reach as f64) * TABLE_RES as f64;
    let j0 = pos as usize;
    let f = pos - j0 as f64;
    let t = &table.values;
    let mut acc = 0.0;
    for (k, &a) in x[first..=last].iter().enumerate() {
        let j = j0 + k * TABLE_RES;
        acc += (t[j] + f * (t[j + 1] - t[j])) * a;
    }
    acc
}

/// Resamples 64-bit samples so that output sample `n` sits at input position
/// `n · step`, producing exactly `out_len` samples. `step` is input samples per
/// output sample; the anti-aliasing cutoff follows from it.
pub(crate) fn resample_positions(x: &[f64], step: f64, out_len: usize) -> Vec<f64> {
    let k = Kernel::new(1.0 / step);
    let table = k.table();
    let taps = k.taps();
    (0..out_len)
        .map(|n| {
            let t = n as f64 * step;
            let base = t.floor();
            interpolate_table(x, base as isize, t - base, taps, &table)
        })
        .collect()
}

/// Rational-ratio polyphase resampling: `up` output samples per `down` input samples.
fn resample_rational(x: &[f64], up: u64, down: u64, out_len: usize) -> Vec<f64> {
    let k = Kernel::new(up as f64 / down as f64);
    let taps = k.taps();
    let table: Vec<Vec<f64>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            (-taps + 1..=taps).map(|off| k.weight(off as f64 - frac)).collect()
        })
        .collect();
    (0..out_len as u64)
        .map(|n| {
            let num = n * down;
            let base = (num / up) as isize;
            let phase = (num % up) as usize;
            interpolate_exact(x, base, taps, &table[phase])
        })
        .collect()
}

/// Changes the sample rate. Output length is `round(len · target / source)`;
/// equal rates return the input unchanged.
pub fn resample(w: &Waveform, target_rate_hz: u32) -> Result<Waveform> {
    if target_rate_hz == 0 {
        return Err(Error::arg("target sample rate must be positive"));
    }
    let src = w.sample_rate_hz();
    if src == target_rate_hz {
        return Ok(w.clone());
    }
    let out_len = (w.len() as f64 * f64::from(target_rate_hz) / f64::from(src)).round() as usize;
    let g = gcd(u64::from(src), u64::from(target_rate_hz));
    let (up, down) = (u64::from(target_rate_hz) / g, u64::from(src) / g);
    let x = w.to_f64();
    let y = if up <= MAX_TABLE_PHASES {
        resample_rational(&x, up, down, out_len)
    } else {
        resample_positions(&x, down as f64 / up as f64, out_len)
    };
    Waveform::from_f64(&y, target_rate_hz)
}

/// Stretches or compresses a waveform to exactly `out_len` samples by
/// band-limited interpolation, keeping the sample rate label.
pub fn resample_to_len(w: &Waveform, out_len: usize) -> Result<Waveform> {
    if out_len == w.len() {
        return Ok(w.clone());
    }
    if w.is_empty() {
        return Waveform::silence(out_len, w.sample_rate_hz());
    }
    let step = w.len() as f64 / out_len.max(1) as f64;
    let y = resample_positions(&w.to_f64(), step, out_len);
    Waveform::from_f64(&y, w.sample_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize) -> Waveform {
        let x: Vec<f64> = (0..len)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin())
            .collect();
        Waveform::from_f64(&x, rate).unwrap()
    }

    #[test]
    fn lengths_and_identity() {
        let w = sine(440.0, 16000, 16000);
        assert_eq!(resample(&w, 8000).unwrap().len(), 8000);
        assert_eq!(resample(&w, 22050).unwrap().len(), 22050);
        let same = resample(&w, 16000).unwrap();
        assert_eq!(same, w);
        assert!(matches!(resample(&w, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn exact_and_tabulated_kernels_agree() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.31).sin() + 0.2 * (i as f64 * 1.7).cos()).collect();
        let a = resample_rational(&x, 5, 4, 600);
        let b = resample_positions(&x, 4.0 / 5.0, 600);
        let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn passband_sine_is_preserved() {
        let w = sine(1000.0, 16000, 4000);
        let y = resample(&w, 24000).unwrap().to_f64();
        // Compare interior samples with the analytic sine at the new rate.
        let err = (200..5800)
            .map(|n| (y[n] - 0.5 * (2.0 * PI * 1000.0 * n as f64 / 24000.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-3, "{err}");
    }

    #[test]
    fn linear_in_amplitude() {
        let w = sine(700.0, 16000, 3000);
        let x = w.to_f64();
        let a = resample_rational(&x, 1, 2, 1500);
        let scaled: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        let b = resample_rational(&scaled, 1, 2, 1500);
        for (p, q) in a.iter().zip(&b) {
            assert!((2.5 * p - q).abs() <= 1e-9 * (q.abs() + 1e-3));
        }
    }
}
