use rand::Rng as _;

use crate::features::FeatureMatrix;
use crate::rng::Rng;

/// A contiguous block `[start, start + width)` along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskRegion {
    pub start: usize,
    pub width: usize,
}

fn draw(extent: usize, max_width: usize, rng: &mut Rng) -> MaskRegion {
    let width = rng.random_range(0..=max_width).min(extent);
    let start = rng.random_range(0..=extent - width);
    MaskRegion { start, width }
}

/// Zeroes `t ~ U{0..max_width}` consecutive frames (clamped to `T`).
pub fn spec_time_mask(f: &FeatureMatrix, max_width: usize, rng: &mut Rng) -> (FeatureMatrix, MaskRegion) {
    let region = draw(f.frames(), max_width, rng);
    let mut out = f.clone();
    for t in region.start..region.start + region.width {
        out.frame_mut(t).fill(0.0);
    }
    (out, region)
}

/// Zeroes `c ~ U{0..max_channels}` consecutive channels across all frames.
pub fn spec_freq_mask(f: &FeatureMatrix, max_channels: usize, rng: &mut Rng) -> (FeatureMatrix, MaskRegion) {
    let region = draw(f.bins(), max_channels, rng);
    let mut out = f.clone();
    for t in 0..f.frames() {
        out.frame_mut(t)[region.start..region.start + region.width].fill(0.0);
    }
    (out, region)
}
