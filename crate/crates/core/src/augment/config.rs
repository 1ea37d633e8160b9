use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names accepted by [`AugmentToggles::set`], in chain order.
pub const AUGMENTATION_NAMES: [&str; 6] = ["pitch", "speed", "reverb", "noise", "time_mask", "freq_mask"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentToggles {
    pub pitch: bool,
    pub speed: bool,
    pub reverb: bool,
    pub noise: bool,
    pub time_mask: bool,
    pub freq_mask: bool,
}

impl Default for AugmentToggles {
    fn default() -> Self {
        Self::all(true)
    }
}

impl AugmentToggles {
    pub fn all(on: bool) -> Self {
        Self {
            pitch: on,
            speed: on,
            reverb: on,
            noise: on,
            time_mask: on,
            freq_mask: on,
        }
    }

    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = match name {
            "pitch" => &mut self.pitch,
            "speed" => &mut self.speed,
            "reverb" => &mut self.reverb,
            "noise" => &mut self.noise,
            "time_mask" => &mut self.time_mask,
            "freq_mask" => &mut self.freq_mask,
            other => {
                return Err(Error::Config(format!(
                    "unknown augmentation {other:?}; expected one of {AUGMENTATION_NAMES:?}"
                )))
            }
        };
        *slot = on;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub pitch_cents_range: [i32; 2],
    pub speed_range: [f64; 2],
    pub snr_db_range: [f64; 2],
    pub reverberance_pct: f64,
    pub damping_pct: f64,
    pub room_scale_range: [f64; 2],
    pub time_mask_max_frames: usize,
    pub freq_mask_max_channels: usize,
    /// Masks of each kind applied per view.
    pub time_mask_count: usize,
    pub freq_mask_count: usize,
    pub enabled: AugmentToggles,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            pitch_cents_range: [-300, 300],
            speed_range: [0.8, 1.2],
            snr_db_range: [5.0, 10.0],
            reverberance_pct: 50.0,
            damping_pct: 50.0,
            room_scale_range: [0.0, 100.0],
            time_mask_max_frames: 40,
            freq_mask_max_channels: 10,
            time_mask_count: 1,
            freq_mask_count: 1,
            enabled: AugmentToggles::default(),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: AugmentToggles::all(false),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [pl, ph] = self.pitch_cents_range;
        if pl > ph || pl < -1200 || ph > 1200 {
            return Err(Error::Config(format!("pitch_cents_range {pl}..{ph} must be ordered within ±1200")));
        }
        let [sl, sh] = self.speed_range;
        if !(0.5 <= sl && sl <= sh && sh <= 2.0) {
            return Err(Error::Config(format!("speed_range {sl}..{sh} must be ordered within [0.5, 2]")));
        }
        let [nl, nh] = self.snr_db_range;
        if !(nl <= nh && nl.is_finite() && nh.is_finite()) {
            return Err(Error::Config(format!("snr_db_range {nl}..{nh} must be ordered")));
        }
        let [rl, rh] = self.room_scale_range;
        let pct = |v: f64| (0.0..=100.0).contains(&v);
        if !(rl <= rh && pct(rl) && pct(rh)) {
            return Err(Error::Config(format!("room_scale_range {rl}..{rh} must be ordered within [0, 100]")));
        }
        if !pct(self.reverberance_pct) || !pct(self.damping_pct) {
            return Err(Error::Config("reverberance and damping must be within [0, 100]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_toggle_by_name() {
        let mut c = AugmentConfig::default();
        c.validate().unwrap();
        for name in AUGMENTATION_NAMES {
            c.enabled.set(name, false).unwrap();
        }
        assert_eq!(c.enabled, AugmentToggles::all(false));
        assert!(c.enabled.set("echo", false).is_err());
    }

    #[test]
    fn inverted_ranges_rejected() {
        let c = AugmentConfig {
            snr_db_range: [10.0, 5.0],
            ..AugmentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = AugmentConfig {
            speed_range: [0.1, 1.2],
            ..AugmentConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
