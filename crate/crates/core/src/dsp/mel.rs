use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FrameSpec, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const LOG_FLOOR: f64 = 1e-10;

/// Log-mel energies, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Matrix,
    pub frame_spec: FrameSpec,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `fft_size / 2 + 1` magnitude bins, peak height 1.
///
/// Filter `i` rises from mel point `i` to `i + 1` and falls to `i + 2`, with
/// `n_mels + 2` points spaced evenly on the HTK mel scale between fmin and fmax.
pub fn mel_filterbank(spec: &FrameSpec, sample_rate_hz: u32) -> Matrix {
    let n_bins = spec.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(spec.fmin_hz);
    let mel_hi = hz_to_mel(spec.fmax_hz);
    let points: Vec<f64> = (0..spec.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (spec.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / spec.fft_size as f64;

    let mut fb = Matrix::zeros(spec.n_mels, n_bins);
    for m in 0..spec.n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            *w = rise.min(fall).max(0.0);
        }
    }
    fb
}

fn hann(n: usize) -> Vec<f64> {
    // periodic form
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed magnitude STFT through a mel filterbank, then natural log with a floor.
pub fn mel_spectrogram(w: &Waveform, spec: &FrameSpec) -> Result<MelSpectrogram> {
    spec.validate(w.sample_rate_hz())?;
    if w.len() < spec.fft_size {
        return Err(Error::InputTooShort(format!(
            "{} samples, need at least {}",
            w.len(),
            spec.fft_size
        )));
    }
    let n_frames = spec.frame_count(w.len());
    let fb = mel_filterbank(spec, w.sample_rate_hz());
    let window = hann(spec.fft_size);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(spec.fft_size);
    let n_bins = spec.fft_size / 2 + 1;

    let samples = w.samples();
    let mut buf = vec![Complex::new(0.0, 0.0); spec.fft_size];
    let mut mag = vec![0.0; n_bins];
    let mut out = Matrix::zeros(n_frames, spec.n_mels);
    for t in 0..n_frames {
        let start = t * spec.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (m, c) in mag.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        let row = out.row_mut(t);
        for (m, r) in row.iter_mut().enumerate() {
            let e: f64 = fb.row(m).iter().zip(&mag).map(|(a, b)| a * b).sum();
            *r = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(MelSpectrogram {
        frames: out,
        frame_spec: *spec,
    })
}
