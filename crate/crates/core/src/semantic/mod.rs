//! Frame-level content features and their K-means quantization.
//!
//! The extractor produces 13 mel-cepstral coefficients plus their deltas.
//! Quantization replaces each frame with its nearest centroid *vector*, not a
//! cluster index.

mod kmeans;

pub use kmeans::{kmeans_fit, kmeans_fit_traced, quantize_continuous, Codebook, KmeansTrace};

use crate::dsp::{mel_spectrogram, FrameSpec, MelSpectrogram, Waveform};
use crate::error::Result;
use crate::matrix::Matrix;

pub const N_CEPSTRA: usize = 13;
pub const FEATURE_DIM: usize = 2 * N_CEPSTRA;
const DELTA_WIDTH: usize = 2;

/// Frame-aligned feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Matrix,
    pub hop: usize,
}

impl FeatureSequence {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

pub fn extract_semantic(w: &Waveform) -> Result<FeatureSequence> {
    let spec = FrameSpec::default();
    let mel = mel_spectrogram(w, &spec)?;
    Ok(semantic_from_mel(&mel, false))
}

/// Cepstra (orthonormal DCT-II of the log-mel rows) followed by regression
/// deltas. With `mean_norm`, the utterance mean of each cepstrum is removed
/// first, which strips the static spectral envelope.
pub fn semantic_from_mel(mel: &MelSpectrogram, mean_norm: bool) -> FeatureSequence {
    let n_mels = mel.n_mels();
    let n = mel.n_frames();
    let basis: Vec<Vec<f64>> = (0..N_CEPSTRA)
        .map(|k| {
            let norm = if k == 0 {
                (1.0 / n_mels as f64).sqrt()
            } else {
                (2.0 / n_mels as f64).sqrt()
            };
            (0..n_mels)
                .map(|j| {
                    norm * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n_mels as f64)
                        .cos()
                })
                .collect()
        })
        .collect();

    let mut cep = Matrix::zeros(n, N_CEPSTRA);
    for t in 0..n {
        let row = mel.frames.row(t);
        for (k, b) in basis.iter().enumerate() {
            cep.row_mut(t)[k] = b.iter().zip(row).map(|(a, x)| a * x).sum();
        }
    }
    if mean_norm {
        let mean = cep.mean_row();
        for t in 0..n {
            for (c, m) in cep.row_mut(t).iter_mut().zip(&mean) {
                *c -= m;
            }
        }
    }

    let denom = 2.0 * (1..=DELTA_WIDTH).map(|d| (d * d) as f64).sum::<f64>();
    let mut out = Matrix::zeros(n, FEATURE_DIM);
    for t in 0..n {
        let row = out.row_mut(t);
        row[..N_CEPSTRA].copy_from_slice(cep.row(t));
        for k in 0..N_CEPSTRA {
            let mut acc = 0.0;
            for d in 1..=DELTA_WIDTH {
                let fwd = cep.get((t + d).min(n - 1), k);
                let back = cep.get(t.saturating_sub(d), k);
                acc += d as f64 * (fwd - back);
            }
            row[N_CEPSTRA + k] = acc / denom;
        }
    }
    FeatureSequence {
        frames: out,
        hop: mel.frame_spec.hop,
    }
}
