//! Signal-processing front end: waveforms, log-mel spectrograms and F0 tracking.

mod mel;
mod pitch;
mod wav;

pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelSpectrogram};
pub use pitch::{
    extract_f0, minmax_normalize_f0, F0Contour, NormalizedF0, F0_MAX_HZ, F0_MIN_HZ, YIN_THRESHOLD,
};
pub use wav::{read_wav, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty waveform".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Samples `[start, end)` as a new waveform.
    pub fn slice(&self, start: usize, end: usize) -> Result<Waveform> {
        if start >= end || end > self.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {end}) outside waveform of length {}",
                self.samples.len()
            )));
        }
        Waveform::new(self.samples[start..end].to_vec(), self.sample_rate_hz)
    }
}

/// STFT framing and mel filterbank parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub fft_size: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            fft_size: 1024,
            hop: 256,
            n_mels: 80,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
        }
    }
}

impl FrameSpec {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if self.fft_size == 0 || self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "hop {} must be in 1..={}",
                self.hop, self.fft_size
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidArgument("n_mels must be at least 1".into()));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::InvalidArgument(format!(
                "filterbank range [{}, {}] invalid for nyquist {nyquist}",
                self.fmin_hz, self.fmax_hz
            )));
        }
        Ok(())
    }

    /// Number of full frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            1 + (len - self.fft_size) / self.hop
        }
    }

    /// Sample range `[start, end)` covering frames `[first, first + n)`.
    pub fn sample_span(&self, first: usize, n: usize) -> (usize, usize) {
        let start = first * self.hop;
        (
            start,
            start + (n.saturating_sub(1)) * self.hop + self.fft_size,
        )
    }
}
