//! YIN-style F0 tracking and per-utterance min-max normalization.

use super::Waveform;

pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 600.0;
pub const YIN_THRESHOLD: f64 = 0.15;
/// Analysis frame length in samples; matches the default STFT size so F0 frames
/// line up with mel frames.
pub const ANALYSIS_FRAME: usize = 1024;

/// Per-frame F0 in Hz; 0 marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub values_hz: Vec<f64>,
    pub hop: usize,
}

impl F0Contour {
    pub fn len(&self) -> usize {
        self.values_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values_hz.is_empty()
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.values_hz.is_empty() {
            return 0.0;
        }
        self.values_hz.iter().filter(|&&v| v > 0.0).count() as f64 / self.values_hz.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedF0 {
    pub values: Vec<f64>,
    /// False when the input had no voiced frame; `values` is then all zero.
    pub has_voiced: bool,
}

/// Frame-level F0 by the cumulative-mean-normalized difference function.
///
/// Frame `i` covers samples `[i * hop, i * hop + 1024)`; the first local
/// minimum below [`YIN_THRESHOLD`] within the 50-600 Hz lag band is refined by
/// parabolic interpolation. Frames without such a dip are unvoiced.
pub fn extract_f0(w: &Waveform, hop: usize) -> F0Contour {
    let sr = w.sample_rate_hz() as f64;
    let hop = hop.max(1);
    let samples = w.samples();
    let tau_min = (sr / F0_MAX_HZ).floor().max(2.0) as usize;
    let tau_max = (sr / F0_MIN_HZ).ceil() as usize;
    let frame = ANALYSIS_FRAME.max(tau_max + 2);
    let window = frame - tau_max;

    let n_frames = if samples.len() < frame {
        1
    } else {
        1 + (samples.len() - frame) / hop
    };

    let mut diff = vec![0.0; tau_max + 2];
    let values_hz = (0..n_frames)
        .map(|i| {
            let start = i * hop;
            let end = (start + frame).min(samples.len());
            let x = &samples[start..end];
            if x.len() < window + tau_max {
                return 0.0;
            }
            frame_f0(x, window, tau_min, tau_max, sr, &mut diff)
        })
        .collect();
    F0Contour { values_hz, hop }
}

fn frame_f0(
    x: &[f64],
    window: usize,
    tau_min: usize,
    tau_max: usize,
    sr: f64,
    diff: &mut [f64],
) -> f64 {
    let energy: f64 = x[..window].iter().map(|v| v * v).sum();
    if energy <= 1e-12 * window as f64 {
        return 0.0;
    }
    // the difference function needs one lag beyond tau_max for interpolation
    let top = (tau_max + 1).min(x.len() - window);
    diff[0] = 0.0;
    for tau in 1..=top {
        diff[tau] = x[..window]
            .iter()
            .zip(&x[tau..tau + window])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    // cumulative mean normalization, in place
    let mut running = 0.0;
    let mut cmnd = vec![1.0; top + 1];
    for tau in 1..=top {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    let mut tau = tau_min;
    while tau <= tau_max.min(top) {
        if cmnd[tau] < YIN_THRESHOLD {
            while tau < top && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            let refined = if tau > 1 && tau < top {
                let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
                let denom = a - 2.0 * b + c;
                if denom.abs() > 1e-12 {
                    tau as f64 + 0.5 * (a - c) / denom
                } else {
                    tau as f64
                }
            } else {
                tau as f64
            };
            let f0 = sr / refined;
            return if (F0_MIN_HZ..=F0_MAX_HZ).contains(&f0) {
                f0
            } else {
                0.0
            };
        }
        tau += 1;
    }
    0.0
}

/// Maps voiced frames onto `[0, 1]` by the utterance's voiced min and max.
///
/// Unvoiced frames map to 0; a constant voiced contour maps to 0.5.
pub fn minmax_normalize_f0(f0: &F0Contour) -> NormalizedF0 {
    let voiced = f0.values_hz.iter().copied().filter(|&v| v > 0.0);
    let (lo, hi) = voiced.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return NormalizedF0 {
            values: vec![0.0; f0.values_hz.len()],
            has_voiced: false,
        };
    }
    let span = hi - lo;
    let values = f0
        .values_hz
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                0.0
            } else if span == 0.0 {
                0.5
            } else {
                (v - lo) / span
            }
        })
        .collect();
    NormalizedF0 {
        values,
        has_voiced: true,
    }
}
