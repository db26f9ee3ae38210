use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Trial};
use super::model::NoroModel;
use super::train::load_noise_dir;
use crate::augment::mix_at_snr;
use crate::dsp::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::speaker_eval::{compute_eer, cosine_score, silhouette_score, TrialScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvReport {
    pub eer: f64,
    pub threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

/// Scores every trial with the cosine of last-layer speaker embeddings.
pub fn score_trials(model: &NoroModel, trials: &[Trial]) -> Result<Vec<TrialScore>> {
    let mut cache: HashMap<PathBuf, Vec<f64>> = HashMap::new();
    let mut embed = |p: &Path| -> Result<Vec<f64>> {
        if let Some(e) = cache.get(p) {
            return Ok(e.clone());
        }
        let e = model.speaker_embedding(&model.mel(&read_wav(p)?)?)?;
        cache.insert(p.to_path_buf(), e.clone());
        Ok(e)
    };
    trials
        .iter()
        .map(|t| {
            let score = cosine_score(&embed(&t.enroll)?, &embed(&t.test)?)?;
            Ok(TrialScore {
                enroll_id: t.enroll.display().to_string(),
                test_id: t.test.display().to_string(),
                score,
                target: t.target,
            })
        })
        .collect()
}

pub fn sv_report(scores: &[TrialScore]) -> Result<SvReport> {
    let eer = compute_eer(scores)?;
    let n_target = scores.iter().filter(|s| s.target).count();
    Ok(SvReport {
        eer: eer.eer,
        threshold: eer.threshold,
        n_target,
        n_nontarget: scores.len() - n_target,
    })
}

pub fn eval_sv(model: &NoroModel, trials: &[Trial]) -> Result<SvReport> {
    sv_report(&score_trials(model, trials)?)
}

/// Reference SNR range; `None` bounds mean the clean condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrBand {
    pub name: &'static str,
    pub range_db: Option<(f64, f64)>,
}

pub const SNR_BANDS: [SnrBand; 3] = [
    SnrBand {
        name: "clean",
        range_db: None,
    },
    SnrBand {
        name: "0-5dB",
        range_db: Some((0.0, 5.0)),
    },
    SnrBand {
        name: "5-10dB",
        range_db: Some((5.0, 10.0)),
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band: String,
    /// Mean cosine between each utterance's clean and noisy embeddings.
    pub mean_cosine: f64,
    /// Mean over speakers of the clean-to-noisy centroid distance.
    pub centroid_distance: f64,
    /// Silhouette of clean and noisy embeddings pooled, by speaker.
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub clean_silhouette: f64,
    pub bands: Vec<BandReport>,
}

impl RobustnessReport {
    pub fn band(&self, name: &str) -> Option<&BandReport> {
        self.bands.iter().find(|b| b.band == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: RobustnessReport,
    pub b: RobustnessReport,
}

/// Clean and noisy copies of every utterance for one band. The noise draw
/// depends only on `seed`, so two checkpoints see the same audio.
pub fn noisy_copies(
    clean: &[Waveform],
    noises: &[Waveform],
    band: &SnrBand,
    seed: u64,
) -> Result<Vec<Waveform>> {
    let Some((lo, hi)) = band.range_db else {
        return Ok(clean.to_vec());
    };
    if noises.is_empty() {
        return Err(Error::Manifest(
            "robustness evaluation needs a noise_dir with WAV files".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean
        .iter()
        .map(|w| {
            let noise = &noises[rng.random_range(0..noises.len())];
            let snr = rng.random_range(lo..=hi);
            Ok(mix_at_snr(w, noise, snr, &mut rng)?.mixed)
        })
        .collect()
}

fn mean_vec(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

/// Clean/noisy geometry statistics of `embed` over one band.
pub fn band_report(
    band: &str,
    clean: &[Vec<f64>],
    noisy: &[Vec<f64>],
    labels: &[usize],
) -> Result<BandReport> {
    let n = clean.len();
    let mean_cosine = clean
        .iter()
        .zip(noisy)
        .map(|(a, b)| cosine_score(a, b))
        .sum::<Result<f64>>()?
        / n as f64;
    let mut speakers: Vec<usize> = labels.to_vec();
    speakers.sort_unstable();
    speakers.dedup();
    let mut dist = 0.0;
    for &s in &speakers {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == s).collect();
        let c = mean_vec(&idx.iter().map(|&i| &clean[i]).collect::<Vec<_>>());
        let z = mean_vec(&idx.iter().map(|&i| &noisy[i]).collect::<Vec<_>>());
        dist += c
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    let pooled: Vec<Vec<f64>> = clean.iter().chain(noisy).cloned().collect();
    let pooled_labels: Vec<usize> = labels.iter().chain(labels).copied().collect();
    Ok(BandReport {
        band: band.to_string(),
        mean_cosine,
        centroid_distance: dist / speakers.len() as f64,
        silhouette: silhouette_score(&pooled, &pooled_labels)?,
    })
}

/// Loaded evaluation audio: utterances, speaker labels and noise clips.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub waves: Vec<Waveform>,
    pub labels: Vec<usize>,
    pub noises: Vec<Waveform>,
}

impl EvalSet {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let speakers = manifest.speakers();
        let waves = manifest
            .utterances
            .iter()
            .map(|u| read_wav(&u.wav_path))
            .collect::<Result<_>>()?;
        let labels = manifest
            .utterances
            .iter()
            .map(|u| {
                speakers
                    .iter()
                    .position(|s| *s == u.speaker_id)
                    .expect("listed")
            })
            .collect();
        let noises = match &manifest.noise_dir {
            Some(d) => load_noise_dir(d)?,
            None => vec![],
        };
        Ok(Self {
            waves,
            labels,
            noises,
        })
    }
}

/// Per-band report for one model, embedding with pooled `h_ref`.
pub fn robustness_report(model: &NoroModel, set: &EvalSet, seed: u64) -> Result<RobustnessReport> {
    let embed = |w: &Waveform| model.reference_embedding(&model.mel(w)?);
    let clean: Vec<Vec<f64>> = set.waves.iter().map(embed).collect::<Result<_>>()?;
    let clean_silhouette = silhouette_score(&clean, &set.labels)?;
    let mut bands = vec![];
    for (i, band) in SNR_BANDS.iter().enumerate() {
        let noisy = match band.range_db {
            None => clean.clone(),
            Some(_) => noisy_copies(&set.waves, &set.noises, band, seed.wrapping_add(i as u64))?
                .iter()
                .map(embed)
                .collect::<Result<_>>()?,
        };
        bands.push(band_report(band.name, &clean, &noisy, &set.labels)?);
    }
    Ok(RobustnessReport {
        clean_silhouette,
        bands,
    })
}

pub fn eval_robustness(
    a: &NoroModel,
    b: &NoroModel,
    manifest: &Manifest,
    seed: u64,
) -> Result<ComparisonReport> {
    let set = EvalSet::load(manifest)?;
    Ok(ComparisonReport {
        a: robustness_report(a, &set, seed)?,
        b: robustness_report(b, &set, seed)?,
    })
}
