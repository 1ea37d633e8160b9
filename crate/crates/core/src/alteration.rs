//! Temporal, channel and magnitude alteration of feature sequences: the
//! corrupted input whose reconstruction forms the auxiliary objective.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlterationConfig {
    /// Frames per temporal block.
    pub time_width: usize,
    /// Upper bound on the fraction of frames selected for temporal alteration.
    pub max_time_pct: f64,
    /// Channel block width is drawn uniformly from `0..=channel_max_width`.
    pub channel_max_width: usize,
    /// Probability of adding Gaussian noise to the whole matrix.
    pub magnitude_prob: f64,
    pub magnitude_variance: f64,
    pub p_zero: f64,
    pub p_replace: f64,
    pub p_keep: f64,
}

impl Default for AlterationConfig {
    fn default() -> Self {
        Self {
            time_width: 4,
            max_time_pct: 0.15,
            channel_max_width: 4,
            magnitude_prob: 0.0,
            magnitude_variance: 0.2,
            p_zero: 0.8,
            p_replace: 0.1,
            p_keep: 0.1,
        }
    }
}

impl AlterationConfig {
    /// Every knob off.
    pub fn none() -> Self {
        Self {
            max_time_pct: 0.0,
            channel_max_width: 0,
            magnitude_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.max_time_pct) || !unit(self.magnitude_prob) {
            return Err(Error::Config("alteration percentages must be within [0, 1]".into()));
        }
        let probs = [self.p_zero, self.p_replace, self.p_keep];
        if probs.iter().any(|p| !unit(*p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("policy probabilities {probs:?} must sum to 1")));
        }
        if self.max_time_pct > 0.0 && self.time_width == 0 {
            return Err(Error::Config("time_width must be positive when temporal alteration is on".into()));
        }
        if !(self.magnitude_variance >= 0.0) {
            return Err(Error::Config("magnitude_variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Number of temporal blocks for a sequence of `frames` frames.
    pub fn temporal_blocks(&self, frames: usize) -> usize {
        if self.time_width == 0 {
            return 0;
        }
        ((self.max_time_pct * frames as f64) / self.time_width as f64).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Zero,
    Replace,
    Keep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TemporalBlock {
    pub start: usize,
    pub len: usize,
    pub branch: Branch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlterationRecord {
    pub altered: FeatureMatrix,
    /// Frames selected by the temporal policy, whatever branch they received.
    pub time_mask: Vec<bool>,
    pub channel_mask: Vec<bool>,
    pub magnitude_applied: bool,
    pub blocks: Vec<TemporalBlock>,
}

impl AlterationRecord {
    fn untouched(f: &FeatureMatrix) -> Self {
        Self {
            altered: f.clone(),
            time_mask: vec![false; f.frames()],
            channel_mask: vec![false; f.bins()],
            magnitude_applied: false,
            blocks: Vec::new(),
        }
    }

    /// Cell mask (row-major) of everything selected in time or channel.
    pub fn cell_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.time_mask.len() * self.channel_mask.len());
        for &t in &self.time_mask {
            out.extend(self.channel_mask.iter().map(|&c| t || c));
        }
        out
    }
}

/// Selects `floor(P_T·T/W_T)` non-overlapping blocks of `W_T` frames (starts
/// drawn without replacement from the multiples of `W_T`) and applies the
/// zero / replace / keep policy to each.
pub fn alter_temporal(f: &FeatureMatrix, cfg: &AlterationConfig, rng: &mut Rng) -> AlterationRecord {
    let mut rec = AlterationRecord::untouched(f);
    let t = f.frames();
    let width = cfg.time_width;
    let wanted = cfg.temporal_blocks(t);
    if wanted == 0 || t == 0 {
        return rec;
    }
    let slots = t.div_ceil(width);
    let mut starts: Vec<usize> = sample(rng, slots, wanted.min(slots))
        .into_iter()
        .map(|s| s * width)
        .collect();
    starts.sort_unstable();
    for start in starts {
        let len = width.min(t - start);
        let u: f64 = rng.random();
        let branch = if u < cfg.p_zero {
            Branch::Zero
        } else if u < cfg.p_zero + cfg.p_replace {
            Branch::Replace
        } else {
            Branch::Keep
        };
        match branch {
            Branch::Zero => {
                for i in start..start + len {
                    rec.altered.frame_mut(i).fill(0.0);
                }
            }
            Branch::Replace => {
                let src = rng.random_range(0..=t - len);
                for i in 0..len {
                    rec.altered.frame_mut(start + i).copy_from_slice(f.frame(src + i));
                }
            }
            Branch::Keep => {}
        }
        rec.time_mask[start..start + len].fill(true);
        rec.blocks.push(TemporalBlock { start, len, branch });
    }
    rec
}

/// Zeroes a block of `W_c ~ U{0..W_C}` consecutive channels starting at
/// `I_C ~ U{0..F−W_c−1}` across every frame.
pub fn alter_channel(f: &FeatureMatrix, cfg: &AlterationConfig, rng: &mut Rng) -> Result<AlterationRecord> {
    let mut rec = AlterationRecord::untouched(f);
    let bins = f.bins();
    if cfg.channel_max_width == 0 {
        return Ok(rec);
    }
    if cfg.channel_max_width >= bins {
        return Err(Error::arg(format!(
            "channel block width {} must be below the channel count {bins}",
            cfg.channel_max_width
        )));
    }
    let width = rng.random_range(0..=cfg.channel_max_width);
    if width == 0 {
        return Ok(rec);
    }
    let start = rng.random_range(0..bins - width);
    mask_channels(&mut rec, start, width);
    Ok(rec)
}

fn mask_channels(rec: &mut AlterationRecord, start: usize, width: usize) {
    for t in 0..rec.altered.frames() {
        rec.altered.frame_mut(t)[start..start + width].fill(0.0);
    }
    rec.channel_mask[start..start + width].fill(true);
}

/// Zeroes channels `start..start + width` (the deterministic core of [`alter_channel`]).
pub fn alter_channel_block(f: &FeatureMatrix, start: usize, width: usize) -> Result<AlterationRecord> {
    if start + width > f.bins() {
        return Err(Error::arg(format!("channel block {start}+{width} exceeds {} channels", f.bins())));
    }
    let mut rec = AlterationRecord::untouched(f);
    mask_channels(&mut rec, start, width);
    Ok(rec)
}

/// With probability `P_N`, adds zero-mean Gaussian noise of the configured
/// variance to every cell.
pub fn alter_magnitude(f: &FeatureMatrix, cfg: &AlterationConfig, rng: &mut Rng) -> Result<AlterationRecord> {
    let mut rec = AlterationRecord::untouched(f);
    if cfg.magnitude_prob <= 0.0 || rng.random::<f64>() >= cfg.magnitude_prob {
        return Ok(rec);
    }
    let normal = Normal::new(0.0, cfg.magnitude_variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    for v in rec.altered.values_mut() {
        *v += normal.sample(rng);
    }
    rec.magnitude_applied = true;
    Ok(rec)
}

/// Temporal, then channel, then magnitude alteration, with merged masks.
pub fn alter(f: &FeatureMatrix, cfg: &AlterationConfig, rng: &mut Rng) -> Result<AlterationRecord> {
    let temporal = alter_temporal(f, cfg, rng);
    let channel = alter_channel(&temporal.altered, cfg, rng)?;
    let magnitude = alter_magnitude(&channel.altered, cfg, rng)?;
    Ok(AlterationRecord {
        altered: magnitude.altered,
        time_mask: temporal.time_mask,
        channel_mask: channel.channel_mask,
        magnitude_applied: magnitude.magnitude_applied,
        blocks: temporal.blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn ramp(t: usize, f: usize) -> FeatureMatrix {
        FeatureMatrix::new((0..t * f).map(|i| 1.0 + i as f64).collect(), t, f, 10.0).unwrap()
    }

    #[test]
    fn block_count_arithmetic() {
        let cfg = AlterationConfig::default();
        assert_eq!(cfg.temporal_blocks(400), 15);
        let rec = alter_temporal(&ramp(400, 3), &cfg, &mut rng_from(&[1]));
        assert_eq!(rec.blocks.len(), 15);
        assert_eq!(rec.time_mask.iter().filter(|&&m| m).count(), 60);
    }

    #[test]
    fn zero_pct_selects_nothing() {
        let cfg = AlterationConfig {
            max_time_pct: 0.0,
            ..AlterationConfig::default()
        };
        let f = ramp(50, 4);
        let rec = alter_temporal(&f, &cfg, &mut rng_from(&[2]));
        assert_eq!(rec.altered, f);
        assert!(rec.time_mask.iter().all(|m| !m));
    }

    #[test]
    fn blocks_do_not_overlap_and_stay_in_range() {
        let cfg = AlterationConfig {
            max_time_pct: 1.0,
            time_width: 3,
            ..AlterationConfig::default()
        };
        let mut rng = rng_from(&[3]);
        for t in [1, 2, 7, 31, 100] {
            let rec = alter_temporal(&ramp(t, 2), &cfg, &mut rng);
            let mut covered = vec![0; t];
            for b in &rec.blocks {
                assert!(b.start + b.len <= t && b.start % 3 == 0);
                for c in &mut covered[b.start..b.start + b.len] {
                    *c += 1;
                }
            }
            assert!(covered.iter().all(|&c| c <= 1));
        }
    }

    #[test]
    fn replaced_frames_come_from_the_same_utterance() {
        let cfg = AlterationConfig {
            p_zero: 0.0,
            p_replace: 1.0,
            p_keep: 0.0,
            ..AlterationConfig::default()
        };
        let f = ramp(200, 2);
        let rec = alter_temporal(&f, &cfg, &mut rng_from(&[4]));
        for b in &rec.blocks {
            let first = rec.altered.frame(b.start);
            let src = (0..200).find(|&s| f.frame(s) == first).expect("copied frame");
            for i in 0..b.len {
                assert_eq!(rec.altered.frame(b.start + i), f.frame(src + i));
            }
        }
    }

    #[test]
    fn channel_block_definition() {
        let f = ramp(6, 80);
        let rec = alter_channel_block(&f, 10, 4).unwrap();
        for t in 0..6 {
            for c in 0..80 {
                let want = if (10..14).contains(&c) { 0.0 } else { f.get(t, c) };
                assert_eq!(rec.altered.get(t, c), want);
            }
        }
        assert_eq!(rec.channel_mask.iter().filter(|&&m| m).count(), 4);
        let cfg = AlterationConfig {
            channel_max_width: 80,
            ..AlterationConfig::default()
        };
        assert!(alter_channel(&f, &cfg, &mut rng_from(&[0])).is_err());
    }

    #[test]
    fn channel_width_zero_draw_is_identity() {
        let f = ramp(5, 20);
        let mut rng = rng_from(&[5]);
        let mut seen_zero = false;
        for _ in 0..200 {
            let rec = alter_channel(&f, &AlterationConfig::default(), &mut rng).unwrap();
            if rec.channel_mask.iter().all(|m| !m) {
                assert_eq!(rec.altered, f);
                seen_zero = true;
            }
        }
        assert!(seen_zero);
    }

    #[test]
    fn magnitude_off_and_masks_untouched() {
        let f = ramp(10, 10);
        let rec = alter_magnitude(&f, &AlterationConfig::default(), &mut rng_from(&[6])).unwrap();
        assert_eq!(rec.altered, f);
        let cfg = AlterationConfig {
            magnitude_prob: 1.0,
            ..AlterationConfig::default()
        };
        let rec = alter_magnitude(&f, &cfg, &mut rng_from(&[6])).unwrap();
        assert!(rec.magnitude_applied);
        assert_ne!(rec.altered, f);
        assert!(rec.time_mask.iter().chain(&rec.channel_mask).all(|m| !m));
    }

    #[test]
    fn alter_identity_determinism_and_locality() {
        let f = ramp(120, 40);
        let rec = alter(&f, &AlterationConfig::none(), &mut rng_from(&[7])).unwrap();
        assert_eq!(rec.altered, f);
        assert!(rec.cell_mask().iter().all(|m| !m));

        let cfg = AlterationConfig::default();
        let a = alter(&f, &cfg, &mut rng_from(&[8])).unwrap();
        let b = alter(&f, &cfg, &mut rng_from(&[8])).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.altered.frames(), a.altered.bins()), (120, 40));
        for (i, m) in a.cell_mask().iter().enumerate() {
            if !m {
                assert_eq!(a.altered.values()[i], f.values()[i]);
            }
        }
    }
}
