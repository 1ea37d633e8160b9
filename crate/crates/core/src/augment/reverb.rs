//! Freeverb-style reverberator with sox-like parameter semantics.
//!
//! Eight parallel lowpass-feedback comb filters feed four series allpass
//! filters. `reverberance` sets the comb feedback (and the wet level),
//! `damping` the in-loop lowpass, and `room_scale` the delay-line lengths.

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const COMB_TUNING: [usize; 8] = [1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617];
const ALLPASS_TUNING: [usize; 4] = [556, 441, 341, 225];
const TUNING_RATE: f64 = 44100.0;
const INPUT_GAIN: f64 = 0.015;
const WET_SCALE: f64 = 3.0;
const ALLPASS_FEEDBACK: f64 = 0.5;

struct Comb {
    buf: Vec<f64>,
    idx: usize,
    feedback: f64,
    damp: f64,
    store: f64,
}

impl Comb {
    fn tick(&mut self, x: f64) -> f64 {
        let y = self.buf[self.idx];
        self.store = y * (1.0 - self.damp) + self.store * self.damp;
        self.buf[self.idx] = x + self.store * self.feedback;
        self.idx = (self.idx + 1) % self.buf.len();
        y
    }
}

struct Allpass {
    buf: Vec<f64>,
    idx: usize,
}

impl Allpass {
    fn tick(&mut self, x: f64) -> f64 {
        let b = self.buf[self.idx];
        let y = b - x;
        self.buf[self.idx] = x + b * ALLPASS_FEEDBACK;
        self.idx = (self.idx + 1) % self.buf.len();
        y
    }
}

/// Parameter mapping, exposed for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct Freeverb {
    pub feedback: f64,
    pub damping: f64,
    pub wet: f64,
    pub delay_scale: f64,
}

impl Freeverb {
    /// Maps percentages onto filter coefficients. Feedback follows sox's
    /// logarithmic curve (0.3 at 0 %, 0.98 at 100 %); the wet level grows
    /// linearly from 0, so 0 % reverberance is the dry signal.
    pub fn new(reverberance_pct: f64, damping_pct: f64, room_scale_pct: f64) -> Result<Self> {
        for (name, v) in [
            ("reverberance", reverberance_pct),
            ("damping", damping_pct),
            ("room scale", room_scale_pct),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::arg(format!("{name} {v} outside [0, 100]")));
            }
        }
        let a = -1.0 / (1.0 - 0.3f64).ln();
        let b = 100.0 / ((1.0 - 0.98f64).ln() * a + 1.0);
        Ok(Self {
            feedback: 1.0 - ((reverberance_pct - b) / (a * b)).exp(),
            damping: damping_pct / 100.0 * 0.3 + 0.2,
            wet: reverberance_pct / 100.0,
            delay_scale: room_scale_pct / 100.0 * 0.9 + 0.1,
        })
    }

    /// Wet (reverberant) component alone for 64-bit input.
    pub fn wet_signal(&self, x: &[f64], rate: u32) -> Vec<f64> {
        let len_of = |t: usize, scale: f64| ((t as f64 * scale * f64::from(rate) / TUNING_RATE).round() as usize).max(1);
        let mut combs: Vec<Comb> = COMB_TUNING
            .iter()
            .map(|&t| Comb {
                buf: vec![0.0; len_of(t, self.delay_scale)],
                idx: 0,
                feedback: self.feedback,
                damp: self.damping,
                store: 0.0,
            })
            .collect();
        let mut allpasses: Vec<Allpass> = ALLPASS_TUNING
            .iter()
            .map(|&t| Allpass {
                buf: vec![0.0; len_of(t, 1.0)],
                idx: 0,
            })
            .collect();
        x.iter()
            .map(|&s| {
                let input = s * INPUT_GAIN;
                let mut acc: f64 = combs.iter_mut().map(|c| c.tick(input)).sum();
                for ap in &mut allpasses {
                    acc = ap.tick(acc);
                }
                acc * WET_SCALE
            })
            .collect()
    }
}

/// Dry signal plus the reverberant tail; output length equals input length.
pub fn reverberate(w: &Waveform, reverberance_pct: f64, damping_pct: f64, room_scale_pct: f64) -> Result<Waveform> {
    let fv = Freeverb::new(reverberance_pct, damping_pct, room_scale_pct)?;
    if fv.wet == 0.0 {
        return Ok(w.clone());
    }
    let x = w.to_f64();
    let wet = fv.wet_signal(&x, w.sample_rate_hz());
    let y: Vec<f64> = x.iter().zip(&wet).map(|(d, r)| d + fv.wet * r).collect();
    Waveform::from_f64(&y, w.sample_rate_hz())
}
