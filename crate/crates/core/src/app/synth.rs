//! Synthetic multi-speaker corpus and noise set.
//!
//! A speaker is a fixed amplitude profile over harmonic numbers plus an F0
//! range. Utterances are sequences of syllables: an F0 glide inside the
//! speaker's range, the speaker's harmonic profile shaped by one of five
//! speaker-independent vowel resonance patterns, and an attack/release
//! envelope, separated by short pauses.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex, FftPlanner};

use super::manifest::{write_trials, Manifest, Trial, Utterance};
use crate::dsp::{write_wav, Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::Result;

const SR: f64 = DEFAULT_SAMPLE_RATE as f64;
const MAX_HARMONICS: usize = 100;
/// Samples between updates of the per-harmonic gains.
const GAIN_BLOCK: usize = 32;
const MAX_PARTIAL_HZ: f64 = 7500.0;
const PEAK: f64 = 0.5;
const DITHER: f64 = 1e-4;
pub const NOISE_SECONDS: f64 = 5.0;
pub const NOISE_KINDS: [&str; 8] = [
    "white", "pink", "brown", "hum", "babble", "lowband", "highband", "clicks",
];

/// Formant centre frequencies and bandwidths (Hz) for five vowels.
const VOWELS: [[(f64, f64); 3]; 5] = [
    [(730.0, 90.0), (1090.0, 110.0), (2440.0, 160.0)],
    [(270.0, 60.0), (2290.0, 110.0), (3010.0, 160.0)],
    [(300.0, 60.0), (870.0, 100.0), (2240.0, 160.0)],
    [(530.0, 80.0), (1840.0, 110.0), (2480.0, 160.0)],
    [(570.0, 80.0), (840.0, 100.0), (2410.0, 160.0)],
];
const FORMANT_GAINS: [f64; 3] = [1.0, 0.7, 0.4];

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0_range: (f64, f64),
    /// Linear amplitude of harmonic `k + 1`.
    pub harmonics: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub heldout_speakers: usize,
    pub heldout_utts: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            utts_per_speaker: 20,
            heldout_speakers: 6,
            heldout_utts: 12,
            seed: 0,
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Deterministic speaker number `index` for a corpus seed.
pub fn speaker_profile(seed: u64, index: usize) -> SpeakerProfile {
    let mut rng = stream_rng(seed, 1_000 + index as u64);
    let base = (rng.random_range(90f64.ln()..240f64.ln())).exp();
    let tilt_db = rng.random_range(2.0..6.0);
    let bumps: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.random_range(2.0..25.0),
                rng.random_range(1.5..5.0),
                rng.random_range(6.0..15.0),
            )
        })
        .collect();
    let harmonics = (1..=MAX_HARMONICS)
        .map(|k| {
            let kf = k as f64;
            let mut db = -tilt_db * kf.log2();
            for &(c, w, g) in &bumps {
                db += g * (-0.5 * ((kf - c) / w).powi(2)).exp();
            }
            db += rng.random_range(-3.0..3.0);
            10f64.powf(db / 20.0)
        })
        .collect();
    SpeakerProfile {
        id: format!("spk{index:02}"),
        f0_range: (base * 0.85, base * 1.25),
        harmonics,
    }
}

fn vowel_gain(vowel: usize, f: f64) -> f64 {
    0.15 + VOWELS[vowel]
        .iter()
        .zip(FORMANT_GAINS)
        .map(|(&(fc, bw), a)| a / (1.0 + ((f - fc) / bw).powi(2)))
        .sum::<f64>()
}

/// One 2–4 s utterance of the given speaker.
pub fn synth_utterance<R: Rng + ?Sized>(spk: &SpeakerProfile, rng: &mut R) -> Vec<f64> {
    let total = (rng.random_range(2.0..4.0) * SR) as usize;
    let mut out = vec![0.0; total];
    let mut pos = (0.05 * SR) as usize;
    let (lo, hi) = spk.f0_range;
    while pos < total {
        let len = (rng.random_range(0.15..0.35) * SR) as usize;
        let (fa, fb) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        let vowel = rng.random_range(0..VOWELS.len());
        let attack = (0.02 * SR) as usize;
        let release = (0.04 * SR) as usize;
        let mut phases = [0.0f64; MAX_HARMONICS];
        let mut gains = [0.0f64; MAX_HARMONICS];
        for i in 0..len.min(total - pos) {
            let frac = i as f64 / len as f64;
            let f0 = fa * (fb / fa).powf(frac);
            let env = if i < attack {
                0.5 - 0.5 * (PI * i as f64 / attack as f64).cos()
            } else if i + release > len {
                0.5 - 0.5 * (PI * (len - i) as f64 / release as f64).cos()
            } else {
                1.0
            };
            if i % GAIN_BLOCK == 0 {
                for (k, (g, amp)) in gains.iter_mut().zip(&spk.harmonics).enumerate() {
                    let f = f0 * (k + 1) as f64;
                    *g = if f > MAX_PARTIAL_HZ { 0.0 } else { amp * vowel_gain(vowel, f) };
                }
            }
            let mut s = 0.0;
            for (k, (g, ph)) in gains.iter().zip(phases.iter_mut()).enumerate() {
                if *g == 0.0 {
                    break;
                }
                *ph += 2.0 * PI * f0 * (k + 1) as f64 / SR;
                s += g * ph.sin();
            }
            out[pos + i] = env * s;
        }
        pos += len + (rng.random_range(0.03..0.10) * SR) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut out {
        *v = *v * PEAK / peak + DITHER * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// White noise shaped in the frequency domain by `gain(freq_hz)`.
fn shaped_noise<R: Rng + ?Sized>(n: usize, rng: &mut R, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (i, c) in buf.iter_mut().enumerate() {
        let bin = i.min(n - i);
        *c *= gain(bin as f64 * SR / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// One of [`NOISE_KINDS`], scaled to RMS 0.1.
pub fn synth_noise<R: Rng + ?Sized>(kind: usize, rng: &mut R) -> Vec<f64> {
    let n = (NOISE_SECONDS * SR) as usize;
    let mut x: Vec<f64> = match kind {
        0 => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        1 => shaped_noise(n, rng, |f| 1.0 / f.max(20.0).sqrt()),
        2 => {
            let mut acc = 0.0;
            (0..n)
                .map(|_| {
                    acc = 0.995 * acc + rng.sample::<f64, _>(StandardNormal);
                    acc
                })
                .collect()
        }
        3 => {
            let amps: Vec<f64> = (0..8).map(|_| rng.random_range(0.1..1.0)).collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 / SR;
                    amps.iter()
                        .enumerate()
                        .map(|(k, a)| a * (2.0 * PI * 50.0 * (k + 1) as f64 * t).sin())
                        .sum::<f64>()
                        + 0.05 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        }
        4 => {
            let voices: Vec<(f64, f64, f64)> = (0..6)
                .map(|_| {
                    (
                        rng.random_range(90.0..260.0),
                        rng.random_range(2.0..6.0),
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 / SR;
                    voices
                        .iter()
                        .map(|&(f0, rate, ph)| {
                            let am = 0.5 + 0.5 * (2.0 * PI * rate * t + ph).sin();
                            let tone: f64 = (1..=12)
                                .map(|k| (2.0 * PI * f0 * k as f64 * t).sin() / k as f64)
                                .sum();
                            am * tone
                        })
                        .sum::<f64>()
                })
                .collect()
        }
        5 => shaped_noise(n, rng, |f| if f < 1000.0 { 1.0 } else { 0.0 }),
        6 => shaped_noise(n, rng, |f| if f > 3000.0 { 1.0 } else { 0.0 }),
        _ => {
            let mut x = vec![0.0; n];
            for _ in 0..(NOISE_SECONDS * 30.0) as usize {
                let at = rng.random_range(0..n - 200);
                let amp =
                    rng.random_range(0.3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for (j, v) in x[at..at + 200].iter_mut().enumerate() {
                    *v += amp * (-(j as f64) / 30.0).exp();
                }
            }
            for v in &mut x {
                *v += 0.02 * rng.sample::<f64, _>(StandardNormal);
            }
            x
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    for v in &mut x {
        *v *= 0.1 / rms;
    }
    x
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train_manifest: PathBuf,
    pub heldout_manifest: PathBuf,
    pub trials: PathBuf,
    pub noise_dir: PathBuf,
}

fn write_speakers(
    out_dir: &Path,
    spec: &SynthSpec,
    speakers: std::ops::Range<usize>,
    utts: usize,
) -> Result<Vec<Utterance>> {
    let mut list = vec![];
    for s in speakers {
        let profile = speaker_profile(spec.seed, s);
        let dir = out_dir.join("wav").join(&profile.id);
        std::fs::create_dir_all(&dir)?;
        for u in 0..utts {
            let mut rng = stream_rng(spec.seed, ((s as u64) << 16) | u as u64);
            let samples = synth_utterance(&profile, &mut rng);
            let utt_id = format!("{}_{u:03}", profile.id);
            let rel = PathBuf::from("wav")
                .join(&profile.id)
                .join(format!("{utt_id}.wav"));
            write_wav(
                out_dir.join(&rel),
                &Waveform::new(samples, DEFAULT_SAMPLE_RATE)?,
            )?;
            list.push(Utterance {
                utt_id,
                wav_path: rel,
                speaker_id: profile.id.clone(),
            });
        }
    }
    Ok(list)
}

/// Writes training speakers, held-out speakers, their all-pairs trial list and
/// the noise set under `out_dir`.
pub fn synth_dataset(out_dir: &Path, spec: &SynthSpec) -> Result<SynthOutput> {
    std::fs::create_dir_all(out_dir)?;
    let noise_dir = out_dir.join("noise");
    std::fs::create_dir_all(&noise_dir)?;
    for (k, name) in NOISE_KINDS.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, 500 + k as u64);
        let x = synth_noise(k, &mut rng);
        write_wav(
            noise_dir.join(format!("{name}.wav")),
            &Waveform::new(x, DEFAULT_SAMPLE_RATE)?,
        )?;
    }

    let train = write_speakers(out_dir, spec, 0..spec.n_speakers, spec.utts_per_speaker)?;
    let train_manifest = out_dir.join("train.jsonl");
    Manifest {
        utterances: train,
        noise_dir: Some(PathBuf::from("noise")),
    }
    .write(&train_manifest)?;

    let heldout = write_speakers(
        out_dir,
        spec,
        spec.n_speakers..spec.n_speakers + spec.heldout_speakers,
        spec.heldout_utts,
    )?;
    let mut trials = vec![];
    for (i, a) in heldout.iter().enumerate() {
        for b in &heldout[i + 1..] {
            trials.push(Trial {
                target: a.speaker_id == b.speaker_id,
                enroll: a.wav_path.clone(),
                test: b.wav_path.clone(),
            });
        }
    }
    let heldout_manifest = out_dir.join("heldout.jsonl");
    Manifest {
        utterances: heldout,
        noise_dir: Some(PathBuf::from("noise")),
    }
    .write(&heldout_manifest)?;
    let trials_path = out_dir.join("trials.txt");
    write_trials(&trials_path, &trials)?;

    Ok(SynthOutput {
        train_manifest,
        heldout_manifest,
        trials: trials_path,
        noise_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_deterministic_and_distinct() {
        assert_eq!(speaker_profile(3, 1), speaker_profile(3, 1));
        assert_ne!(speaker_profile(3, 1), speaker_profile(3, 2));
        let p = speaker_profile(0, 0);
        assert!(p.f0_range.0 < p.f0_range.1);
        assert_eq!(p.harmonics.len(), MAX_HARMONICS);
    }

    #[test]
    fn utterance_length_and_level() {
        let p = speaker_profile(0, 4);
        let x = synth_utterance(&p, &mut stream_rng(0, 9));
        assert!(x.len() >= 2 * 16000 && x.len() < 4 * 16000);
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= PEAK + 1e-3 && peak > 0.4);
    }

    #[test]
    fn noise_kinds_are_normalized() {
        for k in 0..NOISE_KINDS.len() {
            let x = synth_noise(k, &mut stream_rng(1, k as u64));
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
            assert!((rms - 0.1).abs() < 1e-9, "kind {k}");
        }
    }
}
