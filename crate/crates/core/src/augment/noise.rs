use std::fs;
use std::path::Path;

use rand::Rng as _;

use crate::dsp::{mean_power, read_wav, resample, Waveform};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Read-only collection of noise clips.
#[derive(Clone, Debug, Default)]
pub struct NoiseBank {
    clips: Vec<Waveform>,
}

impl NoiseBank {
    pub fn new(clips: Vec<Waveform>) -> Result<Self> {
        if let Some(i) = clips.iter().position(Waveform::is_empty) {
            return Err(Error::Data(format!("noise clip {i} is empty")));
        }
        Ok(Self { clips })
    }

    /// Loads every `*.wav` in `dir`, in lexicographic filename order, resampled
    /// to `rate_hz`.
    pub fn from_dir(dir: impl AsRef<Path>, rate_hz: u32) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        let clips = paths
            .iter()
            .map(|p| read_wav(p).and_then(|w| resample(&w, rate_hz)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(clips)
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[Waveform] {
        &self.clips
    }

    /// Uniform clip, then uniform start offset within it.
    pub fn sample(&self, rng: &mut Rng) -> Result<(&Waveform, usize)> {
        if self.clips.is_empty() {
            return Err(Error::Config("additive noise is enabled but the noise bank is empty".into()));
        }
        let clip = &self.clips[rng.random_range(0..self.clips.len())];
        let offset = rng.random_range(0..clip.len());
        Ok((clip, offset))
    }
}

#[derive(Clone, Debug)]
pub struct NoiseOutcome {
    pub waveform: Waveform,
    /// False when the speech (or noise segment) had zero power and the input
    /// was returned unchanged.
    pub applied: bool,
    /// Amplitude factor applied to the noise segment.
    pub scale: f64,
    pub offset: usize,
}

/// Adds `noise` (tiled from a random start offset) scaled to `snr_db`.
pub fn add_noise(w: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut Rng) -> Result<NoiseOutcome> {
    if noise.is_empty() {
        return Err(Error::arg("noise clip is empty"));
    }
    let resampled;
    let noise = if noise.sample_rate_hz() != w.sample_rate_hz() {
        resampled = resample(noise, w.sample_rate_hz())?;
        &resampled
    } else {
        noise
    };
    let offset = rng.random_range(0..noise.len());
    add_noise_at(w, noise, snr_db, offset)
}

/// [`add_noise`] with an explicit start offset into the noise clip.
pub fn add_noise_at(w: &Waveform, noise: &Waveform, snr_db: f64, offset: usize) -> Result<NoiseOutcome> {
    let x = w.to_f64();
    let src = noise.to_f64();
    if src.is_empty() {
        return Err(Error::arg("noise clip is empty"));
    }
    let seg: Vec<f64> = (0..x.len()).map(|i| src[(offset + i) % src.len()]).collect();
    let ps = mean_power(&x);
    let pn = mean_power(&seg);
    if ps == 0.0 || pn == 0.0 {
        return Ok(NoiseOutcome {
            waveform: w.clone(),
            applied: false,
            scale: 0.0,
            offset,
        });
    }
    let scale = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let y: Vec<f64> = x.iter().zip(&seg).map(|(s, n)| s + scale * n).collect();
    Ok(NoiseOutcome {
        waveform: Waveform::from_f64(&y, w.sample_rate_hz())?,
        applied: true,
        scale,
        offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn square(len: usize, amp: f32) -> Waveform {
        Waveform::new((0..len).map(|i| if i % 2 == 0 { amp } else { -amp }).collect(), 16000).unwrap()
    }

    #[test]
    fn unit_rms_at_10_db() {
        let out = add_noise_at(&square(100, 1.0), &square(37, 1.0), 10.0, 3).unwrap();
        assert!((out.scale - 10f64.powf(-0.5)).abs() < 1e-12);
        let out = add_noise_at(&square(100, 1.0), &square(50, 1.0), 0.0, 0).unwrap();
        assert!((out.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silent_speech_is_flagged_not_failed() {
        let silent = Waveform::silence(100, 16000).unwrap();
        let out = add_noise_at(&silent, &square(10, 1.0), 5.0, 0).unwrap();
        assert!(!out.applied);
        assert_eq!(out.waveform, silent);
    }

    #[test]
    fn short_noise_is_tiled() {
        let noise = Waveform::new(vec![1.0, 2.0, 3.0], 16000).unwrap();
        let speech = Waveform::new(vec![1.0; 7], 16000).unwrap();
        let out = add_noise_at(&speech, &noise, 0.0, 2).unwrap();
        let diff: Vec<f64> = out
            .waveform
            .to_f64()
            .iter()
            .map(|v| (v - 1.0) / out.scale)
            .collect();
        let want = [3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        for (d, w) in diff.iter().zip(want) {
            assert!((d - w).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_bank_and_empty_clip() {
        assert!(NoiseBank::default().sample(&mut rng_from(&[0])).is_err());
        assert!(NoiseBank::new(vec![Waveform::silence(0, 16000).unwrap()]).is_err());
        let w = square(10, 1.0);
        assert!(add_noise(&w, &Waveform::silence(0, 16000).unwrap(), 5.0, &mut rng_from(&[0])).is_err());
    }

    #[test]
    fn mismatched_rate_is_resampled() {
        let w = square(1000, 0.5);
        let n = Waveform::new(vec![0.3; 500], 8000).unwrap();
        let out = add_noise(&w, &n, 5.0, &mut rng_from(&[1])).unwrap();
        assert_eq!(out.waveform.sample_rate_hz(), 16000);
        assert_eq!(out.waveform.len(), 1000);
    }
}
