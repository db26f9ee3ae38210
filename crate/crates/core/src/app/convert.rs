use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::NoroModel;
use crate::dsp::{FrameSpec, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::Result;
use crate::matrix::Matrix;

/// Converted log-mel, as written by `convert`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelOutput {
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop: usize,
    pub sample_rate_hz: u32,
    pub log_mel: Vec<Vec<f64>>,
}

impl MelOutput {
    pub fn from_matrix(mel: &Matrix) -> Self {
        Self {
            n_frames: mel.rows(),
            n_mels: mel.cols(),
            hop: FrameSpec::default().hop,
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            log_mel: mel.iter_rows().map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        Matrix::from_rows(&self.log_mel)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Normalized log-mel with `src`'s content and pitch in `reference`'s voice.
pub fn convert_normalized(
    model: &NoroModel,
    src: &Waveform,
    reference: &Waveform,
    n_steps: usize,
    seed: u64,
) -> Result<Matrix> {
    let feats = model.features(src)?;
    let h_ref = model.h_ref(&model.mel(reference)?)?;
    model.convert(
        &feats,
        &h_ref,
        n_steps,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// Same as [`convert_normalized`], mapped back to log-mel units.
pub fn convert_wav(
    model: &NoroModel,
    src: &Waveform,
    reference: &Waveform,
    n_steps: usize,
    seed: u64,
) -> Result<MelOutput> {
    let z = convert_normalized(model, src, reference, n_steps, seed)?;
    Ok(MelOutput::from_matrix(&model.mel_norm.denormalize(&z)))
}
