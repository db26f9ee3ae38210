use rand::Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `x · W + b` with `W: [in, out]`, weights and bias uniform in ±1/√in.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        store.init_uniform(&format!("{name}.w"), &[in_dim, out_dim], bound, rng)?;
        store.init_uniform(&format!("{name}.b"), &[out_dim], bound, rng)?;
        Ok(Self {
            name: name.to_string(),
            in_dim,
            out_dim,
        })
    }

    /// Same layer with zero weights and bias.
    pub fn init_zero(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        store.init_const(&format!("{name}.w"), &[in_dim, out_dim], 0.0)?;
        store.init_const(&format!("{name}.b"), &[out_dim], 0.0)?;
        Ok(Self {
            name: name.to_string(),
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &format!("{}.w", self.name))?;
        let b = tape.param(store, &format!("{}.b", self.name))?;
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        store.init_const(&format!("{name}.gain"), &[dim], 1.0)?;
        store.init_const(&format!("{name}.bias"), &[dim], 0.0)?;
        Ok(Self {
            name: name.to_string(),
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, &format!("{}.gain", self.name))?;
        let b = tape.param(store, &format!("{}.bias", self.name))?;
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

/// `softmax(q kᵀ / √d) v` for `q: [n_q, d]`, `k: [n_k, d]`, `v: [n_k, d_v]`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (_, dq) = tape.value(q).dims2()?;
    let (nk, dk) = tape.value(k).dims2()?;
    let (nv, _) = tape.value(v).dims2()?;
    if dq != dk || nk != nv {
        return Err(Error::Shape(format!(
            "attention: q {:?}, k {:?}, v {:?}",
            tape.shape(q),
            tape.shape(k),
            tape.shape(v)
        )));
    }
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / (dq as f64).sqrt());
    let weights = tape.softmax_rows(scores)?;
    tape.matmul(weights, v)
}

/// `scale ⊙ h + shift`; scale and shift either match `h` or are single rows.
pub fn film(tape: &mut Tape, h: Var, scale: Var, shift: Var) -> Result<Var> {
    let y = tape.mul(h, scale)?;
    tape.add(y, shift)
}

/// Multi-head attention with input and output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl MultiHeadAttention {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "width {dim} not divisible into {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            q: Linear::init(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::init(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::init(store, &format!("{name}.v"), dim, dim, rng)?,
            o: Linear::init(store, &format!("{name}.o"), dim, dim, rng)?,
        })
    }

    /// Queries from `x_q: [n_q, d]`, keys and values from `x_kv: [n_k, d]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x_q: Var, x_kv: Var) -> Result<Var> {
        let q = self.q.forward(tape, store, x_q)?;
        let k = self.k.forward(tape, store, x_kv)?;
        let v = self.v.forward(tape, store, x_kv)?;
        let dh = self.q.out_dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            outs.push(attention(tape, qh, kh, vh)?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        self.o.forward(tape, store, joined)
    }
}

/// Same-padded dilated 1-D convolution over `[T, C_in]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: usize,
    pub dilation: usize,
    proj: Linear,
}

impl Conv1d {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            kernel,
            dilation,
            proj: Linear::init(store, name, in_ch * kernel, out_ch, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = tape.im2col(x, self.kernel, self.dilation)?;
        self.proj.forward(tape, store, cols)
    }
}

/// `tanh(a) ⊙ σ(b)` where `x = [a | b]` split evenly along columns.
pub fn gated_activation(tape: &mut Tape, x: Var) -> Result<Var> {
    let (_, c) = tape.value(x).dims2()?;
    if c % 2 != 0 {
        return Err(Error::Shape(format!("gate needs an even width, got {c}")));
    }
    let a = tape.slice_cols(x, 0, c / 2)?;
    let b = tape.slice_cols(x, c / 2, c / 2)?;
    let a = tape.tanh(a);
    let b = tape.sigmoid(b);
    tape.mul(a, b)
}

/// Sinusoidal embedding of a diffusion time `t ∈ [0, 1]` as a `[1, dim]` row:
/// sines in the first half, cosines in the second, at arguments
/// `1000 t ω_i` with `ω_i` geometric from 1 down to 1e-4.
pub fn time_embedding(t: f64, dim: usize) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "embedding width {dim} must be even and >= 2"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let rate = if half == 1 {
            1.0
        } else {
            (-(10000f64).ln() * i as f64 / (half - 1) as f64).exp()
        };
        let arg = 1000.0 * t * rate;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Tensor::matrix(1, dim, out)
}

/// Fixed sinusoidal position table `[n, dim]`.
pub fn positional_encoding(n: usize, dim: usize) -> Tensor {
    let mut out = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let arg = pos as f64 * rate;
            out[pos * dim + i] = if i % 2 == 0 { arg.sin() } else { arg.cos() };
        }
    }
    Tensor::matrix(n, dim, out).expect("sized above")
}
