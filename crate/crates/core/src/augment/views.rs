use rand::{Rng as _, RngCore};

use super::{add_noise, pitch_shift, reverberate, spec_freq_mask, spec_time_mask, speed_perturb};
use super::{AugmentConfig, MaskRegion, NoiseBank};
use crate::dsp::{resample, Waveform};
use crate::error::{Error, Result};
use crate::features::fbank::fbank_with;
use crate::features::{apply_cmvn, cmvn_per_utterance, CmvnMode, CmvnStats, FbankConfig, FeatureMatrix, MelBank};
use crate::rng::{rng_from, Rng};

/// Feature extraction front end: FBANK followed by optional CMVN.
#[derive(Clone, Debug)]
pub struct Frontend {
    config: FbankConfig,
    rate_hz: u32,
    bank: MelBank,
    cmvn: CmvnMode,
    stats: Option<CmvnStats>,
}

impl Frontend {
    pub fn new(config: FbankConfig, rate_hz: u32, cmvn: CmvnMode) -> Result<Self> {
        config.stft.validate(rate_hz)?;
        let bank = MelBank::new(
            config.n_mels,
            config.stft.fft_size(rate_hz),
            rate_hz,
            config.low_freq_hz,
            config.high_freq_hz,
        )?;
        Ok(Self {
            config,
            rate_hz,
            bank,
            cmvn,
            stats: None,
        })
    }

    /// Statistics used in [`CmvnMode::PerSpeaker`] mode.
    pub fn with_stats(mut self, stats: CmvnStats) -> Self {
        self.stats = Some(stats);
        self
    }

    pub fn config(&self) -> &FbankConfig {
        &self.config
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn n_mels(&self) -> usize {
        self.config.n_mels
    }

    pub fn cmvn_mode(&self) -> CmvnMode {
        self.cmvn
    }

    /// FBANK without normalization.
    pub fn fbank(&self, w: &Waveform) -> Result<FeatureMatrix> {
        if w.sample_rate_hz() != self.rate_hz {
            return fbank_with(&resample(w, self.rate_hz)?, &self.config, &self.bank);
        }
        fbank_with(w, &self.config, &self.bank)
    }

    /// Applies the configured normalization to an FBANK matrix.
    pub fn normalize(&self, f: FeatureMatrix) -> Result<FeatureMatrix> {
        match self.cmvn {
            CmvnMode::None => Ok(f),
            CmvnMode::PerUtterance => cmvn_per_utterance(&f),
            CmvnMode::PerSpeaker => {
                let stats = self
                    .stats
                    .as_ref()
                    .ok_or_else(|| Error::Config("per-speaker CMVN needs precomputed statistics".into()))?;
                apply_cmvn(&f, stats)
            }
        }
    }

    /// FBANK then normalization.
    pub fn features(&self, w: &Waveform) -> Result<FeatureMatrix> {
        self.normalize(self.fbank(w)?)
    }

    /// As [`Frontend::features`], tagging the matrix with the ids that select
    /// its CMVN statistics.
    pub fn features_with_ids(&self, w: &Waveform, utterance_id: &str, speaker_id: Option<&str>) -> Result<FeatureMatrix> {
        let f = self.fbank(w)?.with_ids(utterance_id, speaker_id.map(str::to_string));
        self.normalize(f)
    }
}

/// Random parameters drawn for one view; `None` marks a skipped augmentation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViewDraw {
    pub cents: Option<i32>,
    pub speed: Option<f64>,
    pub room_scale_pct: Option<f64>,
    pub snr_db: Option<f64>,
    pub noise_applied: bool,
    pub time_masks: Vec<MaskRegion>,
    pub freq_masks: Vec<MaskRegion>,
}

fn uniform(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// One full pass of the chain: pitch → speed → reverb → noise → features →
/// time masks → frequency masks.
pub fn augment_view(
    w: &Waveform,
    cfg: &AugmentConfig,
    bank: &NoiseBank,
    frontend: &Frontend,
    rng: &mut Rng,
) -> Result<(FeatureMatrix, ViewDraw)> {
    augment_view_with_ids(w, "", None, cfg, bank, frontend, rng)
}

/// [`augment_view`] for a waveform whose ids select per-speaker statistics.
pub fn augment_view_with_ids(
    w: &Waveform,
    utterance_id: &str,
    speaker_id: Option<&str>,
    cfg: &AugmentConfig,
    bank: &NoiseBank,
    frontend: &Frontend,
    rng: &mut Rng,
) -> Result<(FeatureMatrix, ViewDraw)> {
    let on = &cfg.enabled;
    let mut draw = ViewDraw::default();
    let mut x = w.clone();
    if on.pitch {
        let [lo, hi] = cfg.pitch_cents_range;
        let cents = rng.random_range(lo..=hi);
        x = pitch_shift(&x, cents)?;
        draw.cents = Some(cents);
    }
    if on.speed {
        let factor = uniform(rng, cfg.speed_range);
        x = speed_perturb(&x, factor)?;
        draw.speed = Some(factor);
    }
    if on.reverb {
        let room = uniform(rng, cfg.room_scale_range);
        x = reverberate(&x, cfg.reverberance_pct, cfg.damping_pct, room)?;
        draw.room_scale_pct = Some(room);
    }
    if on.noise {
        let snr = uniform(rng, cfg.snr_db_range);
        let (clip, _) = bank.sample(rng)?;
        let out = add_noise(&x, clip, snr, rng)?;
        x = out.waveform;
        draw.snr_db = Some(snr);
        draw.noise_applied = out.applied;
    }
    let mut f = frontend.features_with_ids(&x, utterance_id, speaker_id)?;
    if on.time_mask {
        for _ in 0..cfg.time_mask_count {
            let (m, r) = spec_time_mask(&f, cfg.time_mask_max_frames, rng);
            f = m;
            draw.time_masks.push(r);
        }
    }
    if on.freq_mask {
        for _ in 0..cfg.freq_mask_count {
            let (m, r) = spec_freq_mask(&f, cfg.freq_mask_max_channels, rng);
            f = m;
            draw.freq_masks.push(r);
        }
    }
    Ok((f, draw))
}

/// Two independently augmented views of `w`, each from its own sub-stream of `rng`.
pub fn make_views(
    w: &Waveform,
    cfg: &AugmentConfig,
    bank: &NoiseBank,
    frontend: &Frontend,
    rng: &mut Rng,
) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let (s1, s2) = (rng.next_u64(), rng.next_u64());
    let (a, _) = augment_view(w, cfg, bank, frontend, &mut rng_from(&[s1]))?;
    let (b, _) = augment_view(w, cfg, bank, frontend, &mut rng_from(&[s2]))?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::sine;

    fn frontend() -> Frontend {
        Frontend::new(FbankConfig::default(), 16000, CmvnMode::PerUtterance).unwrap()
    }

    fn bank() -> NoiseBank {
        let mut r = rng_from(&[99]);
        let clip: Vec<f32> = (0..4000).map(|_| r.random_range(-0.5..0.5)).collect();
        NoiseBank::new(vec![Waveform::new(clip, 16000).unwrap()]).unwrap()
    }

    #[test]
    fn disabled_chain_is_plain_features() {
        let w = sine(500.0, 16000, 8000, 0.3);
        let fe = frontend();
        let (a, b) = make_views(&w, &AugmentConfig::disabled(), &NoiseBank::default(), &fe, &mut rng_from(&[1])).unwrap();
        let plain = fe.features(&w).unwrap();
        assert_eq!(a, plain);
        assert_eq!(b, plain);
    }

    #[test]
    fn same_seed_same_views_and_views_differ() {
        let w = sine(300.0, 16000, 8000, 0.3);
        let (fe, nb, cfg) = (frontend(), bank(), AugmentConfig::default());
        let one = make_views(&w, &cfg, &nb, &fe, &mut rng_from(&[5])).unwrap();
        let two = make_views(&w, &cfg, &nb, &fe, &mut rng_from(&[5])).unwrap();
        assert_eq!(one, two);
        assert_ne!(one.0, one.1);
    }

    #[test]
    fn noise_without_bank_is_a_config_error() {
        let w = sine(300.0, 16000, 8000, 0.3);
        let err = make_views(&w, &AugmentConfig::default(), &NoiseBank::default(), &frontend(), &mut rng_from(&[5]))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
