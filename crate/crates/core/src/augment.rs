//! SpecAugment and paired-view construction.
//!
//! Time warping is applied once to the input; the two views then receive
//! independent frequency and time masks. The time-masking budget (mask count
//! and total masked fraction) is scaled by `time_scale_ratio`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `T × F` feature matrix (frames by frequency bins).
pub type FeatureMatrix = Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    pub warp_factor: usize,
    pub num_freq_masks: usize,
    pub max_freq_mask_width: usize,
    pub num_time_masks: usize,
    pub max_time_mask_width: usize,
    pub max_time_mask_fraction: f64,
    /// Multiplier on the time-mask count and on the masked-fraction cap.
    pub time_scale_ratio: f64,
    /// Multiplier on the frequency-mask count.
    pub freq_scale_ratio: f64,
    pub mask_value: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl SpecAugmentConfig {
    /// Regular SpecAugment settings.
    pub fn baseline() -> Self {
        Self {
            warp_factor: 80,
            num_freq_masks: 2,
            max_freq_mask_width: 27,
            num_time_masks: 10,
            max_time_mask_width: 100,
            max_time_mask_fraction: 0.15,
            time_scale_ratio: 1.0,
            freq_scale_ratio: 1.0,
            mask_value: 0.0,
        }
    }

    /// Baseline settings with 2.5x time masking.
    pub fn cr_ctc() -> Self {
        Self { time_scale_ratio: 2.5, ..Self::baseline() }
    }

    /// All augmentation disabled.
    pub fn none() -> Self {
        Self {
            warp_factor: 0,
            num_freq_masks: 0,
            num_time_masks: 0,
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_time_mask_fraction) {
            return Err(Error::invalid("max_time_mask_fraction must lie in [0, 1]"));
        }
        if !(self.time_scale_ratio >= 0.0 && self.time_scale_ratio.is_finite()) {
            return Err(Error::invalid("time_scale_ratio must be finite and >= 0"));
        }
        if !(self.freq_scale_ratio >= 0.0 && self.freq_scale_ratio.is_finite()) {
            return Err(Error::invalid("freq_scale_ratio must be finite and >= 0"));
        }
        if !self.mask_value.is_finite() {
            return Err(Error::invalid("mask_value must be finite"));
        }
        Ok(())
    }

    pub fn effective_num_time_masks(&self) -> usize {
        (self.num_time_masks as f64 * self.time_scale_ratio).round() as usize
    }

    pub fn effective_max_time_fraction(&self) -> f64 {
        (self.max_time_mask_fraction * self.time_scale_ratio).min(1.0)
    }

    pub fn effective_num_freq_masks(&self) -> usize {
        (self.num_freq_masks as f64 * self.freq_scale_ratio).round() as usize
    }
}

/// Features plus a per-frame flag marking frames covered by a time mask.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedView {
    pub features: FeatureMatrix,
    pub time_masked: Vec<bool>,
}

impl AugmentedView {
    pub fn unmasked(features: FeatureMatrix) -> Self {
        let time_masked = vec![false; features.rows()];
        Self { features, time_masked }
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn masked_frames(&self) -> usize {
        self.time_masked.iter().filter(|&&m| m).count()
    }
}

/// Warps the time axis around one random pivot frame.
///
/// A pivot `c` drawn from `[w, T - w)` moves to `c + d` with `d` uniform in
/// `[-w, w]`; each side is resampled by linear interpolation, per frequency
/// bin. Inputs with `w == 0` or `T <= 2w` are returned unchanged.
pub fn time_warp<R: Rng + ?Sized>(x: &FeatureMatrix, w: usize, rng: &mut R) -> FeatureMatrix {
    let frames = x.rows();
    if w == 0 || frames <= 2 * w {
        return x.clone();
    }
    let pivot = rng.random_range(w..frames - w);
    let shift = rng.random_range(-(w as i64)..=w as i64);
    let target = (pivot as i64 + shift).clamp(1, frames as i64 - 2) as usize;
    if target == pivot {
        return x.clone();
    }

    let mut out = Matrix::zeros(frames, x.cols());
    for i in 0..frames {
        let src = if i < target {
            i as f64 * pivot as f64 / target as f64
        } else {
            pivot as f64 + (i - target) as f64 * (frames - 1 - pivot) as f64 / (frames - 1 - target) as f64
        };
        let lo = (src.floor() as usize).min(frames - 1);
        let hi = (lo + 1).min(frames - 1);
        let frac = src - lo as f64;
        let (rlo, rhi) = (x.row(lo), x.row(hi));
        for (o, (a, b)) in out.row_mut(i).iter_mut().zip(rlo.iter().zip(rhi)) {
            *o = a + frac * (b - a);
        }
    }
    out
}

/// Applies independent frequency and time masks to a copy of `x`.
pub fn apply_masks<R: Rng + ?Sized>(x: &FeatureMatrix, cfg: &SpecAugmentConfig, rng: &mut R) -> AugmentedView {
    let frames = x.rows();
    let bins = x.cols();
    let mut features = x.clone();

    for _ in 0..cfg.effective_num_freq_masks() {
        let width = rng.random_range(0..=cfg.max_freq_mask_width).min(bins);
        if width == 0 {
            continue;
        }
        let start = rng.random_range(0..=bins - width);
        for t in 0..frames {
            features.row_mut(t)[start..start + width].fill(cfg.mask_value);
        }
    }

    let mut time_masked = vec![false; frames];
    let cap = (cfg.effective_max_time_fraction() * frames as f64).floor() as usize;
    let mut budget = cap;
    for _ in 0..cfg.effective_num_time_masks() {
        let width = rng.random_range(0..=cfg.max_time_mask_width).min(frames).min(budget);
        if width == 0 {
            continue;
        }
        let start = rng.random_range(0..=frames - width);
        for t in start..start + width {
            features.row_mut(t).fill(cfg.mask_value);
        }
        time_masked[start..start + width].fill(true);
        budget -= width;
    }

    AugmentedView { features, time_masked }
}

/// Warp once, then mask two copies independently.
pub fn make_views<R: Rng + ?Sized>(
    x: &FeatureMatrix,
    cfg: &SpecAugmentConfig,
    rng: &mut R,
) -> (AugmentedView, AugmentedView) {
    let warped = time_warp(x, cfg.warp_factor, rng);
    let a = apply_masks(&warped, cfg, rng);
    let b = apply_masks(&warped, cfg, rng);
    (a, b)
}

/// Single augmented view, as used by single-branch objectives.
pub fn augment<R: Rng + ?Sized>(x: &FeatureMatrix, cfg: &SpecAugmentConfig, rng: &mut R) -> AugmentedView {
    let warped = time_warp(x, cfg.warp_factor, rng);
    apply_masks(&warped, cfg, rng)
}
