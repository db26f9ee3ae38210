//! Tiny model fixtures shared by the integration tests.
#![allow(dead_code)]

use noro::acoustic::{ScoreNet, ScoreNetConfig, SourceEncoder};
use noro::diffusion::{diffusion_loss, NoiseSchedule};
use noro::nn::{ParamStore, Tape, Tensor, Var};
use noro::reference::{
    average_reprs, contrastive_speaker_loss, pool_and_concat, ReferenceConfig, ReferenceEncoder,
};
use noro::{Matrix, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_MELS: usize = 6;
pub const D: usize = 16;
pub const T: usize = 8;
pub const CONTENT: usize = 5;

pub struct Tiny {
    pub store: ParamStore,
    pub reference: ReferenceEncoder,
    pub source: SourceEncoder,
    pub score: ScoreNet,
}

pub fn tiny(seed: u64) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let reference = ReferenceEncoder::init(
        &mut store,
        ReferenceConfig {
            n_mels: N_MELS,
            d: D,
            m: 3,
            heads: 2,
            layers: 2,
        },
        &mut rng,
    )
    .unwrap();
    let source = SourceEncoder::init(&mut store, CONTENT, D, &mut rng).unwrap();
    let score = ScoreNet::init(
        &mut store,
        ScoreNetConfig {
            n_mels: N_MELS,
            d: D,
            heads: 2,
            n_blocks: 6,
        },
        &mut rng,
    )
    .unwrap();
    Tiny {
        store,
        reference,
        source,
        score,
    }
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap()
}

pub struct Item {
    pub ref_clean: Matrix,
    pub ref_noisy: Matrix,
    pub content: Matrix,
    pub pitch: Vec<f64>,
    pub target: Matrix,
}

pub fn items(seed: u64, n: usize) -> Vec<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    (0..n)
        .map(|_| {
            let r = rng.random_range(3..7);
            Item {
                ref_clean: random_matrix(&mut rng, r, N_MELS),
                ref_noisy: random_matrix(&mut rng, r, N_MELS),
                content: random_matrix(&mut rng, T, CONTENT),
                pitch: (0..T).map(|_| rng.random_range(0.0..1.0)).collect(),
                target: random_matrix(&mut rng, T, N_MELS),
            }
        })
        .collect()
}

/// The whole training objective for a two-speaker batch of four items.
pub fn training_loss(m: &Tiny, tape: &mut Tape, store: &ParamStore, batch: &[Item], seed: u64) -> Result<Var> {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut clean, mut noisy, mut diffs) = (vec![], vec![], vec![]);
    for (i, it) in batch.iter().enumerate() {
        let c = m.reference.forward(tape, store, &it.ref_clean)?.h_ref;
        let n = m.reference.forward(tape, store, &it.ref_noisy)?.h_ref;
        clean.push(c);
        noisy.push(n);
        let cond = average_reprs(tape, c, n)?;
        let h_src = m.source.forward(tape, store, &it.content, &it.pitch)?;
        let t = 0.2 + 0.15 * i as f64;
        let z0 = Tensor::from_matrix(&it.target);
        diffs.push(diffusion_loss(tape, &z0, t, &sched, &mut rng, |tape, z, t| {
            m.score.forward(tape, store, &sched, z, t, h_src, cond)
        })?);
    }
    let mut l_diff = diffs[0];
    for &d in &diffs[1..] {
        l_diff = tape.add(l_diff, d)?;
    }
    let l_diff = tape.scale(l_diff, 1.0 / diffs.len() as f64);
    let batch = pool_and_concat(tape, &clean, &noisy, &[0, 1, 0, 1])?;
    let l_ref = contrastive_speaker_loss(tape, batch.h_all, &batch.labels, 0.1)?;
    let l_ref = tape.scale(l_ref, 0.25);
    tape.add(l_diff, l_ref)
}

