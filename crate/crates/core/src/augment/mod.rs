//! Stochastic waveform and spectrogram augmentations, and two-view construction.

mod config;
mod mask;
mod noise;
mod pitch;
mod reverb;
mod views;

pub use config::{AugmentConfig, AugmentToggles, AUGMENTATION_NAMES};
pub use mask::{spec_freq_mask, spec_time_mask, MaskRegion};
pub use noise::{add_noise, add_noise_at, NoiseBank, NoiseOutcome};
pub use pitch::{pitch_shift, speed_perturb, time_stretch};
pub use reverb::{reverberate, Freeverb};
pub use views::{augment_view, augment_view_with_ids, make_views, Frontend, ViewDraw};
