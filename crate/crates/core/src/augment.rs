//! Additive-noise augmentation at exact SNRs, SNR sampling, and the
//! reference/source split of training samples.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Mean squared amplitude.
pub fn measure_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// `10 log10(P_signal / P_noise)`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (measure_power(signal) / measure_power(noise)).log10()
}

/// A clean signal with noise added, plus the scaled noise that was added.
#[derive(Debug, Clone)]
pub struct NoisyMix {
    pub mixed: Waveform,
    pub scaled_noise: Vec<f64>,
    pub gain: f64,
}

/// Gain that brings `noise_power` to `clean_power / 10^(snr/10)`.
pub fn snr_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Picks a noise segment as long as `len`: a random contiguous slice of a
/// longer clip, or the clip tiled from a random circular offset.
fn noise_segment<R: Rng + ?Sized>(noise: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    if noise.len() >= len {
        let start = rng.random_range(0..=noise.len() - len);
        noise[start..start + len].to_vec()
    } else {
        let offset = rng.random_range(0..noise.len());
        (0..len)
            .map(|i| noise[(offset + i) % noise.len()])
            .collect()
    }
}

/// Adds noise to `clean` so that the mixture's SNR is exactly `snr_db`.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<NoisyMix> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr {snr_db} dB")));
    }
    if measure_power(noise.samples()) == 0.0 {
        return Err(Error::SilentNoise);
    }
    let clean_power = measure_power(clean.samples());
    if clean_power == 0.0 {
        return Err(Error::SilentClean);
    }
    let segment = noise_segment(noise.samples(), clean.len(), rng);
    let noise_power = measure_power(&segment);
    if noise_power == 0.0 {
        return Err(Error::SilentNoise);
    }
    let gain = snr_gain(clean_power, noise_power, snr_db);
    let scaled_noise: Vec<f64> = segment.iter().map(|n| gain * n).collect();
    let mixed = clean
        .samples()
        .iter()
        .zip(&scaled_noise)
        .map(|(c, n)| c + n)
        .collect();
    Ok(NoisyMix {
        mixed: Waveform::new(mixed, clean.sample_rate_hz())?,
        scaled_noise,
        gain,
    })
}

/// Gaussian SNR distribution in dB, clipped to a range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSpec {
    pub mean_db: f64,
    pub std_db: f64,
    pub clip_range_db: (f64, f64),
}

impl Default for SnrSpec {
    fn default() -> Self {
        Self {
            mean_db: 0.0,
            std_db: 20.0,
            clip_range_db: (-10.0, 40.0),
        }
    }
}

pub fn sample_snr<R: Rng + ?Sized>(spec: &SnrSpec, rng: &mut R) -> Result<f64> {
    let (lo, hi) = spec.clip_range_db;
    if !(spec.std_db > 0.0 && lo < hi) {
        return Err(Error::InvalidArgument(format!("invalid SNR spec {spec:?}")));
    }
    let normal = Normal::new(spec.mean_db, spec.std_db)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(normal.sample(rng).clamp(lo, hi))
}

pub const REFERENCE_FRACTION: (f64, f64) = (0.25, 0.45);
/// Shortest sample that still leaves a non-empty reference and remainder.
pub const MIN_SPLIT_LEN: usize = 4;

/// A contiguous reference slice `[ref_start, ref_start + ref_len)` of a
/// `total`-long sequence; the remainder is everything else, prefix then suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSplit {
    pub total: usize,
    pub ref_start: usize,
    pub ref_len: usize,
}

impl SegmentSplit {
    pub fn at(total: usize, fraction: f64, start: usize) -> Result<Self> {
        if total < MIN_SPLIT_LEN {
            return Err(Error::TooShortToSplit(total));
        }
        let ref_len = ((fraction * total as f64).round() as usize).clamp(1, total - 1);
        if start + ref_len > total {
            return Err(Error::InvalidArgument(format!(
                "reference [{start}, {}) exceeds length {total}",
                start + ref_len
            )));
        }
        Ok(Self {
            total,
            ref_start: start,
            ref_len,
        })
    }

    pub fn ref_end(&self) -> usize {
        self.ref_start + self.ref_len
    }

    pub fn remainder_len(&self) -> usize {
        self.total - self.ref_len
    }

    pub fn reference_indices(&self) -> std::ops::Range<usize> {
        self.ref_start..self.ref_end()
    }

    pub fn remainder_indices(&self) -> Vec<usize> {
        (0..self.ref_start)
            .chain(self.ref_end()..self.total)
            .collect()
    }

    pub fn reference<T: Clone>(&self, seq: &[T]) -> Vec<T> {
        seq[self.reference_indices()].to_vec()
    }

    pub fn remainder<T: Clone>(&self, seq: &[T]) -> Vec<T> {
        let mut out = seq[..self.ref_start].to_vec();
        out.extend_from_slice(&seq[self.ref_end()..]);
        out
    }
}

/// Draws a reference fraction uniformly in [0.25, 0.45] and a uniform start.
pub fn split_reference<R: Rng + ?Sized>(total: usize, rng: &mut R) -> Result<SegmentSplit> {
    if total < MIN_SPLIT_LEN {
        return Err(Error::TooShortToSplit(total));
    }
    let (lo, hi) = REFERENCE_FRACTION;
    let fraction = rng.random_range(lo..=hi);
    let ref_len = ((fraction * total as f64).round() as usize).clamp(1, total - 1);
    let start = rng.random_range(0..=total - ref_len);
    SegmentSplit::at(total, fraction, start)
}
