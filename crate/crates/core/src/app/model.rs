use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::acoustic::{align_frames, ScoreNet, ScoreNetConfig, SourceEncoder};
use crate::diffusion::{sample, NoiseSchedule};
use crate::dsp::{extract_f0, mel_spectrogram, minmax_normalize_f0, FrameSpec, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{ParamStore, Tape, Tensor};
use crate::reference::{ReferenceConfig, ReferenceEncoder};
use crate::semantic::{quantize_continuous, semantic_from_mel, Codebook, FEATURE_DIM};
use crate::speaker_eval::pooled_embedding;

const PARAM_PREFIX: &str = "param/";
/// Per-bin standard deviations are floored here so constant bins stay finite.
const MIN_STD: f64 = 1e-3;

/// Per-bin standardization of log-mel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MelNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelNorm {
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut sum: Vec<f64> = vec![];
        let mut sq: Vec<f64> = vec![];
        let mut n = 0usize;
        for m in mels {
            if sum.is_empty() {
                sum = vec![0.0; m.cols()];
                sq = vec![0.0; m.cols()];
            }
            for row in m.iter_rows() {
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InputTooShort("no frames for mel statistics".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(MIN_STD))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, mel: &Matrix) -> Matrix {
        self.map(mel, |x, m, s| (x - m) / s)
    }

    pub fn denormalize(&self, mel: &Matrix) -> Matrix {
        self.map(mel, |x, m, s| x * s + m)
    }

    fn map(&self, mel: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Matrix {
        let mut out = mel.clone();
        for t in 0..out.rows() {
            for (j, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = f(*v, self.mean[j], self.std[j]);
            }
        }
        out
    }
}

/// Frame-aligned model inputs for one waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    /// Normalized log-mel, `T × n_mels`.
    pub mel: Matrix,
    /// Quantized content features, `T × D`.
    pub content: Matrix,
    /// Normalized F0, length `T`.
    pub pitch: Vec<f64>,
}

impl UtteranceFeatures {
    pub fn n_frames(&self) -> usize {
        self.mel.rows()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            mel: self.mel.select_rows(rows),
            content: self.content.select_rows(rows),
            pitch: rows.iter().map(|&i| self.pitch[i]).collect(),
        }
    }
}

/// Log-mel frames and content features before quantization and normalization.
#[derive(Debug, Clone)]
pub struct RawFeatures {
    pub mel: Matrix,
    pub semantic: Matrix,
    pub pitch: Vec<f64>,
}

pub fn raw_features(w: &Waveform, mean_norm: bool) -> Result<RawFeatures> {
    let spec = FrameSpec::default();
    let mel = mel_spectrogram(w, &spec)?;
    let semantic = semantic_from_mel(&mel, mean_norm).frames;
    let f0 = extract_f0(w, spec.hop);
    let pitch = align_frames(&minmax_normalize_f0(&f0).values, mel.n_frames())?;
    Ok(RawFeatures {
        mel: mel.frames,
        semantic,
        pitch,
    })
}

/// Everything needed to run conversion: parameters, codebook and mel statistics.
#[derive(Debug, Clone)]
pub struct NoroModel {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub reference: ReferenceEncoder,
    pub source: SourceEncoder,
    pub score: ScoreNet,
    pub codebook: Codebook,
    pub mel_norm: MelNorm,
    pub schedule: NoiseSchedule,
}

impl NoroModel {
    pub fn new<R: Rng + ?Sized>(
        config: TrainConfig,
        codebook: Codebook,
        mel_norm: MelNorm,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let n_mels = FrameSpec::default().n_mels;
        if codebook.dim() != FEATURE_DIM || mel_norm.mean.len() != n_mels {
            return Err(Error::Shape(
                "codebook or mel statistics do not fit the front end".into(),
            ));
        }
        let mut store = ParamStore::new();
        let reference = ReferenceEncoder::init(
            &mut store,
            ReferenceConfig {
                n_mels,
                d: config.d,
                m: config.m,
                heads: config.heads,
                layers: config.layers,
            },
            rng,
        )?;
        let source = SourceEncoder::init(&mut store, FEATURE_DIM, config.d, rng)?;
        let score = ScoreNet::init(
            &mut store,
            ScoreNetConfig {
                n_mels,
                d: config.d,
                heads: config.heads,
                n_blocks: config.n_blocks,
            },
            rng,
        )?;
        Ok(Self {
            config,
            store,
            reference,
            source,
            score,
            codebook,
            mel_norm,
            schedule: NoiseSchedule::default(),
        })
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let mut arrays: std::collections::BTreeMap<String, Tensor> = self
            .store
            .iter()
            .map(|(k, v)| (format!("{PARAM_PREFIX}{k}"), v.clone()))
            .collect();
        arrays.insert(
            "codebook".into(),
            Tensor::from_matrix(&self.codebook.centroids),
        );
        arrays.insert(
            "mel_mean".into(),
            Tensor::vector(self.mel_norm.mean.clone()),
        );
        arrays.insert("mel_std".into(), Tensor::vector(self.mel_norm.std.clone()));
        Checkpoint {
            config: self.config.clone(),
            step,
            arrays,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let codebook = Codebook {
            centroids: ckpt.array("codebook")?.to_matrix()?,
        };
        let mel_norm = MelNorm {
            mean: ckpt.array("mel_mean")?.data().to_vec(),
            std: ckpt.array("mel_std")?.data().to_vec(),
        };
        // structure only; every value is overwritten below
        let mut model = Self::new(
            ckpt.config.clone(),
            codebook,
            mel_norm,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        let stored = ckpt
            .arrays
            .keys()
            .filter(|k| k.starts_with(PARAM_PREFIX))
            .count();
        if stored != model.store.len() {
            return Err(Error::Format(format!(
                "checkpoint has {stored} parameters, model expects {}",
                model.store.len()
            )));
        }
        for (name, value) in model.store.iter_mut() {
            let src = ckpt.array(&format!("{PARAM_PREFIX}{name}"))?;
            if src.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} stored as {:?}, expected {:?}",
                    src.shape(),
                    value.shape()
                )));
            }
            *value = src.clone();
        }
        Ok(model)
    }

    pub fn features(&self, w: &Waveform) -> Result<UtteranceFeatures> {
        self.features_from_raw(&raw_features(w, self.config.semantic_mean_norm)?)
    }

    pub fn features_from_raw(&self, raw: &RawFeatures) -> Result<UtteranceFeatures> {
        let hop = FrameSpec::default().hop;
        let content = quantize_continuous(
            &crate::semantic::FeatureSequence {
                frames: raw.semantic.clone(),
                hop,
            },
            &self.codebook,
        )?
        .frames;
        Ok(UtteranceFeatures {
            mel: self.mel_norm.normalize(&raw.mel),
            content,
            pitch: raw.pitch.clone(),
        })
    }

    /// Normalized log-mel of a waveform.
    pub fn mel(&self, w: &Waveform) -> Result<Matrix> {
        let mel = mel_spectrogram(w, &FrameSpec::default())?;
        Ok(self.mel_norm.normalize(&mel.frames))
    }

    pub fn h_ref(&self, mel: &Matrix) -> Result<Matrix> {
        self.reference.encode(&self.store, mel)
    }

    /// Unit-norm mean of `h_ref` rows.
    pub fn reference_embedding(&self, mel: &Matrix) -> Result<Vec<f64>> {
        pooled_embedding(&self.h_ref(mel)?)
    }

    /// Unit-norm mean of the encoder's last hidden layer.
    pub fn speaker_embedding(&self, mel: &Matrix) -> Result<Vec<f64>> {
        crate::speaker_eval::speaker_embedding(&self.reference, &self.store, mel)
    }

    /// Samples a normalized mel with the source's content and pitch and the
    /// reference's `h_ref`.
    pub fn convert<R: Rng + ?Sized>(
        &self,
        src: &UtteranceFeatures,
        h_ref: &Matrix,
        n_steps: usize,
        rng: &mut R,
    ) -> Result<Matrix> {
        let mut tape = Tape::new();
        let h_src = self
            .source
            .forward(&mut tape, &self.store, &src.content, &src.pitch)?;
        let h_src = tape.value(h_src).clone();
        let h_ref = Tensor::from_matrix(h_ref);
        let frames = src.n_frames();
        let n_mels = self.mel_norm.mean.len();
        let out = sample(
            |z, t| {
                let mut tape = Tape::new();
                let z = tape.constant(z.clone());
                let hs = tape.constant(h_src.clone());
                let hr = tape.constant(h_ref.clone());
                let s = self
                    .score
                    .forward(&mut tape, &self.store, &self.schedule, z, t, hs, hr)?;
                Ok(tape.value(s).clone())
            },
            &[frames, n_mels],
            n_steps,
            &self.schedule,
            rng,
        )?;
        out.to_matrix()
    }
}
