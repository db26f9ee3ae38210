use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{Mode, TrainConfig};
use super::manifest::Manifest;
use super::model::{raw_features, MelNorm, NoroModel, RawFeatures, UtteranceFeatures};
use crate::augment::{mix_at_snr, sample_snr, split_reference};
use crate::diffusion::{diffusion_loss, TimeSampler};
use crate::dsp::{read_wav, FrameSpec, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{Sgd, Tape, Tensor, Var};
use crate::reference::{average_reprs, contrastive_speaker_loss, pool_and_concat};
use crate::semantic::kmeans_fit;

const TIME_CELLS: usize = 256;

/// Decoded utterances with speaker indices and the noise set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DataItem>,
    pub speakers: Vec<String>,
    pub noises: Vec<Waveform>,
}

#[derive(Debug, Clone)]
pub struct DataItem {
    pub utt_id: String,
    pub speaker: usize,
    pub wave: Waveform,
    pub raw: RawFeatures,
}

/// WAV files in a directory, in file-name order.
pub fn load_noise_dir(dir: &Path) -> Result<Vec<Waveform>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
    paths.sort();
    paths.iter().map(read_wav).collect()
}

impl Dataset {
    pub fn load(manifest: &Manifest, semantic_mean_norm: bool) -> Result<Self> {
        let speakers = manifest.speakers();
        let mut items = Vec::with_capacity(manifest.utterances.len());
        for u in &manifest.utterances {
            let wave = read_wav(&u.wav_path)?;
            let raw = raw_features(&wave, semantic_mean_norm)?;
            items.push(DataItem {
                utt_id: u.utt_id.clone(),
                speaker: speakers
                    .iter()
                    .position(|s| *s == u.speaker_id)
                    .expect("listed"),
                wave,
                raw,
            });
        }
        let noises = match &manifest.noise_dir {
            Some(d) => load_noise_dir(d)?,
            None => vec![],
        };
        Ok(Self {
            items,
            speakers,
            noises,
        })
    }
}

/// Per-step values written to the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub l_diff: f64,
    pub l_ref: f64,
    pub l_total: f64,
    /// Weights actually applied this step (`beta` is 0 in baseline mode).
    pub alpha: f64,
    pub beta: f64,
    pub grad_norm: f64,
}

/// Fits the codebook and mel statistics on the training set.
pub fn fit_front_end<R: Rng + ?Sized>(
    data: &Dataset,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(crate::semantic::Codebook, MelNorm)> {
    let mel_norm = MelNorm::fit(data.items.iter().map(|i| &i.raw.mel))?;
    let mut rows: Vec<&[f64]> = data
        .items
        .iter()
        .flat_map(|i| i.raw.semantic.iter_rows())
        .collect();
    if rows.len() > config.kmeans_max_frames {
        rows.shuffle(rng);
        rows.truncate(config.kmeans_max_frames);
    }
    let pts = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())?;
    let codebook = kmeans_fit(&pts, config.k, rng)?;
    Ok((codebook, mel_norm))
}

/// Picks the batch: distinct speakers with two utterances each, topped up
/// with random utterances.
fn sample_batch<R: Rng + ?Sized>(data: &Dataset, n: usize, rng: &mut R) -> Vec<usize> {
    let n_spk = data.speakers.len();
    let mut by_speaker: Vec<Vec<usize>> = vec![vec![]; n_spk];
    for (i, it) in data.items.iter().enumerate() {
        by_speaker[it.speaker].push(i);
    }
    let mut order: Vec<usize> = (0..n_spk).filter(|&s| !by_speaker[s].is_empty()).collect();
    order.shuffle(rng);
    let mut batch = vec![];
    for s in order.into_iter().take(n / 2) {
        batch.extend(by_speaker[s].choose_multiple(rng, 2).copied());
    }
    while batch.len() < n {
        batch.push(rng.random_range(0..data.items.len()));
    }
    batch.truncate(n);
    batch
}

struct Prepared {
    speaker: usize,
    clean_ref: Matrix,
    noisy_ref: Option<Matrix>,
    target: UtteranceFeatures,
}

fn prepare_item<R: Rng + ?Sized>(
    model: &NoroModel,
    data: &Dataset,
    feats: &UtteranceFeatures,
    idx: usize,
    noisy: bool,
    rng: &mut R,
) -> Result<Prepared> {
    let item = &data.items[idx];
    let total = feats.n_frames();
    let split = split_reference(total, rng)?;
    let clean_ref = feats.mel.slice_rows(split.ref_start, split.ref_end());
    let mut target = feats.select(&split.remainder_indices());
    let crop = model.config.crop_frames;
    if target.n_frames() > crop {
        let off = rng.random_range(0..=target.n_frames() - crop);
        target = target.select(&(off..off + crop).collect::<Vec<_>>());
    }
    let noisy_ref = if noisy {
        let noise = data
            .noises
            .choose(rng)
            .ok_or_else(|| Error::Training("noro mode needs a non-empty noise_dir".into()))?;
        let (s0, s1) = FrameSpec::default().sample_span(split.ref_start, split.ref_len);
        let segment = item.wave.slice(s0, s1)?;
        let snr = sample_snr(&model.config.snr_spec(), rng)?;
        let mix = mix_at_snr(&segment, noise, snr, rng)?;
        let mel = model.mel(&mix.mixed)?;
        debug_assert_eq!(mel.rows(), clean_ref.rows());
        Some(mel)
    } else {
        None
    };
    Ok(Prepared {
        speaker: item.speaker,
        clean_ref,
        noisy_ref,
        target,
    })
}

/// Mean of scalar nodes.
fn mean_of(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(tape.scale(acc, 1.0 / xs.len() as f64))
}

fn check_finite(step: u64, name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Training(format!("step {step}: {name} is {v}")));
    }
    Ok(())
}

/// Runs `config.steps` optimizer steps.
///
/// Baseline mode starts from fresh parameters and fits the front end on
/// `data`; noro mode continues from `warm_start`, keeping its front end.
pub fn train(
    config: &TrainConfig,
    data: &Dataset,
    warm_start: Option<&Checkpoint>,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<(NoroModel, u64)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noro = config.mode == Mode::Noro;
    if data.items.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let (mut model, start_step) = match (config.mode, warm_start) {
        (Mode::Noro, None) => {
            return Err(Error::Training(
                "noro mode needs a baseline checkpoint to warm-start from".into(),
            ))
        }
        (_, Some(ckpt)) => {
            let mut m = NoroModel::from_checkpoint(ckpt)?;
            let c = &ckpt.config;
            if (
                c.d,
                c.m,
                c.k,
                c.heads,
                c.layers,
                c.n_blocks,
                c.semantic_mean_norm,
            ) != (
                config.d,
                config.m,
                config.k,
                config.heads,
                config.layers,
                config.n_blocks,
                config.semantic_mean_norm,
            ) {
                return Err(Error::Config(
                    "warm-start checkpoint has a different architecture".into(),
                ));
            }
            m.config = config.clone();
            rng.set_stream(1);
            (m, ckpt.step)
        }
        (Mode::Baseline, None) => {
            let (codebook, mel_norm) = fit_front_end(data, config, &mut rng)?;
            (
                NoroModel::new(config.clone(), codebook, mel_norm, &mut rng)?,
                0,
            )
        }
    };
    if noro {
        if data.speakers.len() < 2 {
            return Err(Error::Training(
                "noro mode needs at least two speakers".into(),
            ));
        }
        if data.noises.is_empty() {
            return Err(Error::Training(
                "noro mode needs a non-empty noise_dir".into(),
            ));
        }
    }

    let feats: Vec<UtteranceFeatures> = data
        .items
        .iter()
        .map(|it| model.features_from_raw(&it.raw))
        .collect::<Result<_>>()?;
    let mut opt = Sgd::new(config.lr, config.momentum).with_clip(config.grad_clip);
    let sampler = TimeSampler::new(&model.schedule, TIME_CELLS)?;
    let (alpha, beta) = (config.alpha, if noro { config.beta } else { 0.0 });

    for s in 0..config.steps as u64 {
        let step = start_step + s + 1;
        let batch = sample_batch(data, config.batch_size, &mut rng);
        let prepared: Vec<Prepared> = batch
            .iter()
            .map(|&i| prepare_item(&model, data, &feats[i], i, noro, &mut rng))
            .collect::<Result<_>>()?;

        let times = sampler.stratified(prepared.len(), &mut rng);
        let mut tape = Tape::new();
        let mut diffs = vec![];
        let mut clean_h = vec![];
        let mut noisy_h = vec![];
        for (p, &(t, weight)) in prepared.iter().zip(&times) {
            let clean = model
                .reference
                .forward(&mut tape, &model.store, &p.clean_ref)?
                .h_ref;
            let cond = match &p.noisy_ref {
                Some(n) => {
                    let noisy = model.reference.forward(&mut tape, &model.store, n)?.h_ref;
                    clean_h.push(clean);
                    noisy_h.push(noisy);
                    average_reprs(&mut tape, clean, noisy)?
                }
                None => clean,
            };
            let h_src = model.source.forward(
                &mut tape,
                &model.store,
                &p.target.content,
                &p.target.pitch,
            )?;
            let z0 = Tensor::from_matrix(&p.target.mel);
            let (score, store, sched) = (&model.score, &model.store, &model.schedule);
            let l = diffusion_loss(&mut tape, &z0, t, sched, &mut rng, |tape, z_t, t| {
                score.forward(tape, store, sched, z_t, t, h_src, cond)
            })?;
            diffs.push(tape.scale(l, weight));
        }
        let l_diff = mean_of(&mut tape, &diffs)?;
        let weighted_diff = tape.scale(l_diff, alpha);
        let (total, l_ref_value) = if noro {
            let labels: Vec<usize> = prepared.iter().map(|p| p.speaker).collect();
            let batch = pool_and_concat(&mut tape, &clean_h, &noisy_h, &labels)?;
            let l_ref =
                contrastive_speaker_loss(&mut tape, batch.h_all, &batch.labels, config.tau)?;
            let weighted_ref = tape.scale(l_ref, beta);
            (
                tape.add(weighted_diff, weighted_ref)?,
                tape.value(l_ref).item(),
            )
        } else {
            (weighted_diff, 0.0)
        };
        let l_diff_value = tape.value(l_diff).item();
        let l_total_value = tape.value(total).item();
        check_finite(step, "diffusion loss", l_diff_value)?;
        check_finite(step, "reference loss", l_ref_value)?;
        if let Some(op) = tape.fault() {
            return Err(Error::Training(format!(
                "step {step}: non-finite value in {op}"
            )));
        }
        let grads = tape.backward(total)?.params();
        let grad_norm = opt
            .step(&mut model.store, &grads)
            .map_err(|e| Error::Training(format!("step {step}: {e}")))?;
        on_step(&StepMetrics {
            step,
            l_diff: l_diff_value,
            l_ref: l_ref_value,
            l_total: l_total_value,
            alpha,
            beta,
            grad_norm,
        })?;
    }
    let final_step = start_step + config.steps as u64;
    Ok((model, final_step))
}
