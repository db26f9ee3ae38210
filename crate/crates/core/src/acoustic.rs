//! Source encoder and the conditional score network.
//!
//! The score network is a stack of gated dilated convolutions with skip
//! connections. Each block lets its hidden states attend to the reference
//! summary `h_ref`, and the attended context (plus a time projection) sets a
//! per-frame FiLM scale and shift on the block's gated output.

use rand::Rng;

use crate::diffusion::{perturbation_coefficients, NoiseSchedule};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    film, gated_activation, time_embedding, Conv1d, Linear, MultiHeadAttention, ParamStore, Tape,
    Tensor, Var,
};

pub const DILATIONS: [usize; 6] = [1, 2, 4, 1, 2, 4];
pub const KERNEL: usize = 3;

/// Nearest-frame resampling of a per-frame sequence to `len` frames.
pub fn align_frames(values: &[f64], len: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InputTooShort("empty sequence to align".into()));
    }
    let n = values.len();
    Ok((0..len)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * n as f64 / len as f64 - 0.5).round();
            values[(pos.max(0.0) as usize).min(n - 1)]
        })
        .collect())
}

/// Three same-padded convolutions over `[content | pitch]` frames.
#[derive(Debug, Clone)]
pub struct SourceEncoder {
    convs: [Conv1d; 3],
}

impl SourceEncoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        content_dim: usize,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            convs: [
                Conv1d::init(store, "src.conv0", content_dim + 1, d, KERNEL, 1, rng)?,
                Conv1d::init(store, "src.conv1", d, d, KERNEL, 1, rng)?,
                Conv1d::init(store, "src.conv2", d, d, KERNEL, 1, rng)?,
            ],
        })
    }

    /// `content: T × D`, `pitch: T` → `h_src: T × d`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        content: &Matrix,
        pitch: &[f64],
    ) -> Result<Var> {
        if content.rows() != pitch.len() {
            return Err(Error::Shape(format!(
                "{} content frames, {} pitch frames",
                content.rows(),
                pitch.len()
            )));
        }
        let p = Matrix::from_vec(pitch.len(), 1, pitch.to_vec())?;
        let x = tape.constant(Tensor::from_matrix(&content.hcat(&p)?));
        let mut h = self.convs[0].forward(tape, store, x)?;
        h = tape.gelu(h);
        h = self.convs[1].forward(tape, store, h)?;
        h = tape.gelu(h);
        self.convs[2].forward(tape, store, h)
    }
}

/// How block outputs are modulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilmMode {
    #[default]
    Learned,
    /// Scale 1, shift 0: cuts the reference path out of the network.
    Identity,
}

#[derive(Debug, Clone)]
struct Block {
    conv: Conv1d,
    prompt: MultiHeadAttention,
    film_head: Linear,
    film_time: Linear,
    /// Absent on the last block, whose residual stream is never read.
    res: Option<Linear>,
    skip: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreNetConfig {
    pub n_mels: usize,
    pub d: usize,
    pub heads: usize,
    pub n_blocks: usize,
}

#[derive(Debug, Clone)]
pub struct ScoreNet {
    pub config: ScoreNetConfig,
    pub film_mode: FilmMode,
    input: Linear,
    time_in: Linear,
    time_out: Linear,
    blocks: Vec<Block>,
    out: Linear,
}

impl ScoreNet {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: ScoreNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let ScoreNetConfig {
            n_mels,
            d,
            heads,
            n_blocks,
        } = config;
        if n_blocks == 0 {
            return Err(Error::Config("score network needs at least one block".into()));
        }
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let p = format!("score.block{b}");
            blocks.push(Block {
                conv: Conv1d::init(store, &format!("{p}.conv"), d, 2 * d, KERNEL, DILATIONS[b % DILATIONS.len()], rng)?,
                prompt: MultiHeadAttention::init(store, &format!("{p}.prompt"), d, heads, rng)?,
                film_head: Linear::init(store, &format!("{p}.film"), d, 2 * d, rng)?,
                film_time: Linear::init(store, &format!("{p}.film_time"), d, 2 * d, rng)?,
                res: if b + 1 < n_blocks {
                    Some(Linear::init(store, &format!("{p}.res"), d, d, rng)?)
                } else {
                    None
                },
                skip: Linear::init(store, &format!("{p}.skip"), d, d, rng)?,
            });
        }
        Ok(Self {
            config,
            film_mode: FilmMode::Learned,
            input: Linear::init(store, "score.input", n_mels, d, rng)?,
            time_in: Linear::init(store, "score.time_in", d, d, rng)?,
            time_out: Linear::init(store, "score.time_out", d, d, rng)?,
            blocks,
            out: Linear::init(store, "score.out", d, n_mels, rng)?,
        })
    }

    /// Block `b`'s attention from backbone states `T × d` onto `h_ref: m × d`.
    pub fn prompt_attention(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        block: usize,
        hidden: Var,
        h_ref: Var,
    ) -> Result<Var> {
        let (_, dh) = tape.value(hidden).dims2()?;
        let (_, dr) = tape.value(h_ref).dims2()?;
        if dh != self.config.d || dr != self.config.d {
            return Err(Error::Shape(format!(
                "prompt attention widths {dh} and {dr}, model width {}",
                self.config.d
            )));
        }
        let blk = self
            .blocks
            .get(block)
            .ok_or_else(|| Error::InvalidArgument(format!("no block {block}")))?;
        blk.prompt.forward(tape, store, hidden, h_ref)
    }

    /// Raw network output: the standardized noise at `z_t` minus `σ_t z_t`.
    pub fn forward_noise(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_t: Var,
        t: f64,
        h_src: Var,
        h_ref: Var,
    ) -> Result<Var> {
        let (frames, bins) = tape.value(z_t).dims2()?;
        if bins != self.config.n_mels {
            return Err(Error::Shape(format!(
                "z_t has {bins} bins, model expects {}",
                self.config.n_mels
            )));
        }
        let (src_frames, src_dim) = tape.value(h_src).dims2()?;
        if src_frames != frames || src_dim != self.config.d {
            return Err(Error::Shape(format!(
                "h_src is {src_frames} x {src_dim}, expected {frames} x {}",
                self.config.d
            )));
        }
        let d = self.config.d;
        let temb = tape.constant(time_embedding(t, d)?);
        let tv = self.time_in.forward(tape, store, temb)?;
        let tv = tape.gelu(tv);
        let tv = self.time_out.forward(tape, store, tv)?;

        let x = self.input.forward(tape, store, z_t)?;
        let x = tape.add(x, h_src)?;
        let mut h = tape.add(x, tv)?;
        let mut skip_sum: Option<Var> = None;
        for (b, blk) in self.blocks.iter().enumerate() {
            let c = blk.conv.forward(tape, store, h)?;
            let g = gated_activation(tape, c)?;
            let y = match self.film_mode {
                FilmMode::Learned => {
                    let ctx = self.prompt_attention(tape, store, b, g, h_ref)?;
                    let head = blk.film_head.forward(tape, store, ctx)?;
                    let tproj = blk.film_time.forward(tape, store, tv)?;
                    let head = tape.add(head, tproj)?;
                    let scale = tape.slice_cols(head, 0, d)?;
                    let scale = tape.add_scalar(scale, 1.0);
                    let shift = tape.slice_cols(head, d, d)?;
                    film(tape, g, scale, shift)?
                }
                FilmMode::Identity => g,
            };
            let s = blk.skip.forward(tape, store, y)?;
            if let Some(res) = &blk.res {
                let r = res.forward(tape, store, y)?;
                let sum = tape.add(h, r)?;
                h = tape.scale(sum, std::f64::consts::FRAC_1_SQRT_2);
            }
            skip_sum = Some(match skip_sum {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let skip = skip_sum.expect("at least one block");
        let skip = tape.scale(skip, 1.0 / (self.blocks.len() as f64).sqrt());
        self.out.forward(tape, store, skip)
    }

    /// Score estimate `−(σ_t z_t + net) / σ_t`, shaped like `z_t`.
    ///
    /// `σ_t z_t` is the posterior mean of the noise when the data is standard
    /// normal, so the network only models how standardized mels depart from
    /// that prior and an untrained network already gives a stable sampler.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sched: &NoiseSchedule,
        z_t: Var,
        t: f64,
        h_src: Var,
        h_ref: Var,
    ) -> Result<Var> {
        let (_, var) = perturbation_coefficients(t, sched)?;
        if var <= 0.0 {
            return Err(Error::ZeroVariance(t));
        }
        let sigma = var.sqrt();
        let net = self.forward_noise(tape, store, z_t, t, h_src, h_ref)?;
        let prior = tape.scale(z_t, sigma);
        let eps = tape.add(prior, net)?;
        Ok(tape.scale(eps, -1.0 / sigma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_examples() {
        assert_eq!(align_frames(&[1.0, 2.0, 3.0], 3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(align_frames(&[1.0, 2.0], 4).unwrap(), vec![1.0, 1.0, 2.0, 2.0]);
        assert_eq!(align_frames(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![2.0, 4.0]);
        assert!(align_frames(&[], 2).is_err());
    }
}
