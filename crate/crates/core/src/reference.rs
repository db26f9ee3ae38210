//! Reference encoder and the noise-agnostic contrastive speaker loss.
//!
//! The encoder runs a small pre-norm transformer over (normalized) mel frames
//! and then lets `m` learned query vectors attend to the hidden sequence,
//! giving a fixed `m × d` summary of the reference speaker regardless of the
//! reference length.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{
    positional_encoding, LayerNorm, Linear, MultiHeadAttention, ParamStore, Tape, Tensor, Var,
};

pub const QUERY_INIT_STD: f64 = 0.02;
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConfig {
    pub n_mels: usize,
    pub d: usize,
    pub m: usize,
    pub heads: usize,
    pub layers: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            d: 128,
            m: 32,
            heads: 4,
            layers: 2,
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    pub config: ReferenceConfig,
    input: Linear,
    layers: Vec<EncoderLayer>,
    final_ln: LayerNorm,
    query_attn: MultiHeadAttention,
}

/// Nodes produced by one encoder pass.
#[derive(Debug, Clone)]
pub struct ReferenceOutput {
    /// `m × d` summary.
    pub h_ref: Var,
    /// Residual stream after each transformer layer, `T × d` each.
    pub layer_states: Vec<Var>,
    /// Final layer-normed hidden sequence, `T × d`.
    pub last_hidden: Var,
}

const QUERIES: &str = "ref.queries";

impl ReferenceEncoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: ReferenceConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let ReferenceConfig {
            n_mels,
            d,
            m,
            heads,
            layers,
        } = config;
        if m == 0 || layers == 0 {
            return Err(Error::Config(
                "reference encoder needs m >= 1 and layers >= 1".into(),
            ));
        }
        let input = Linear::init(store, "ref.input", n_mels, d, rng)?;
        let mut blocks = Vec::with_capacity(layers);
        for l in 0..layers {
            let p = format!("ref.layer{l}");
            blocks.push(EncoderLayer {
                ln_attn: LayerNorm::init(store, &format!("{p}.ln_attn"), d)?,
                attn: MultiHeadAttention::init(store, &format!("{p}.attn"), d, heads, rng)?,
                ln_ff: LayerNorm::init(store, &format!("{p}.ln_ff"), d)?,
                ff_in: Linear::init(store, &format!("{p}.ff_in"), d, 2 * d, rng)?,
                ff_out: Linear::init(store, &format!("{p}.ff_out"), 2 * d, d, rng)?,
            });
        }
        let final_ln = LayerNorm::init(store, "ref.final_ln", d)?;
        store.init_normal(QUERIES, &[m, d], QUERY_INIT_STD, rng)?;
        let query_attn = MultiHeadAttention::init(store, "ref.query_attn", d, heads, rng)?;
        Ok(Self {
            config,
            input,
            layers: blocks,
            final_ln,
            query_attn,
        })
    }

    /// Encodes `mel: T × n_mels` on the tape.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mel: &Matrix,
    ) -> Result<ReferenceOutput> {
        if mel.rows() == 0 {
            return Err(Error::InputTooShort("empty reference mel".into()));
        }
        if mel.cols() != self.config.n_mels {
            return Err(Error::Shape(format!(
                "reference mel has {} bins, encoder expects {}",
                mel.cols(),
                self.config.n_mels
            )));
        }
        let x = tape.constant(Tensor::from_matrix(mel));
        let h = self.input.forward(tape, store, x)?;
        let pos = tape.constant(positional_encoding(mel.rows(), self.config.d));
        let mut h = tape.add(h, pos)?;
        let mut layer_states = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let a = layer.ln_attn.forward(tape, store, h)?;
            let a = layer.attn.forward(tape, store, a, a)?;
            h = tape.add(h, a)?;
            let f = layer.ln_ff.forward(tape, store, h)?;
            let f = layer.ff_in.forward(tape, store, f)?;
            let f = tape.gelu(f);
            let f = layer.ff_out.forward(tape, store, f)?;
            h = tape.add(h, f)?;
            layer_states.push(h);
        }
        let last_hidden = self.final_ln.forward(tape, store, h)?;
        let queries = tape.param(store, QUERIES)?;
        let h_ref = self.query_attn.forward(tape, store, queries, last_hidden)?;
        Ok(ReferenceOutput {
            h_ref,
            layer_states,
            last_hidden,
        })
    }

    /// Inference-only `h_ref` as a plain matrix.
    pub fn encode(&self, store: &ParamStore, mel: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, mel)?;
        tape.value(out.h_ref).to_matrix()
    }
}

/// Encodes a clean and a noisy reference with one parameter set.
pub fn dual_branch_encode(
    encoder: &ReferenceEncoder,
    tape: &mut Tape,
    store: &ParamStore,
    clean: &Matrix,
    noisy: &Matrix,
) -> Result<(ReferenceOutput, ReferenceOutput)> {
    let a = encoder.forward(tape, store, clean)?;
    let b = encoder.forward(tape, store, noisy)?;
    Ok((a, b))
}

/// Elementwise mean of two representations.
pub fn average_reprs(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape(format!(
            "cannot average {:?} and {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    let s = tape.add(a, b)?;
    Ok(tape.scale(s, 0.5))
}

/// Pooled clean rows followed by pooled noisy rows, with duplicated labels.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub h_all: Var,
    pub labels: Vec<usize>,
}

/// Mean-pools each `m × d` representation over `m` and stacks the clean block
/// above the noisy block.
pub fn pool_and_concat(
    tape: &mut Tape,
    clean: &[Var],
    noisy: &[Var],
    labels: &[usize],
) -> Result<ContrastiveBatch> {
    let n = clean.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if noisy.len() != n || labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} clean, {} noisy representations and {} labels",
            noisy.len(),
            labels.len()
        )));
    }
    let mut rows = Vec::with_capacity(2 * n);
    for &h in clean.iter().chain(noisy) {
        rows.push(tape.mean_rows(h)?);
    }
    let h_all = tape.concat_rows(&rows)?;
    let mut all = labels.to_vec();
    all.extend_from_slice(labels);
    Ok(ContrastiveBatch { h_all, labels: all })
}

/// `M[i][j] = 1` iff rows `i` and `j` carry the same speaker label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    n: usize,
    same: Vec<bool>,
}

impl MaskMatrix {
    pub fn from_labels(labels: &[usize]) -> Self {
        let n = labels.len();
        let same = (0..n * n).map(|k| labels[k / n] == labels[k % n]).collect();
        Self { n, same }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.same[i * self.n + j]
    }
}

/// Supervised contrastive loss over L2-normalized rows of `h_all`.
///
/// For anchor `i`, logits are `ĥ_i·ĥ_j / τ` over `j ≠ i`; the anchor loss is
/// the negative mean log-probability of its positives (same label, `j ≠ i`).
/// The result is the mean over all anchors.
pub fn contrastive_speaker_loss(
    tape: &mut Tape,
    h_all: Var,
    labels: &[usize],
    tau: f64,
) -> Result<Var> {
    let (rows, _) = tape.value(h_all).dims2()?;
    if rows != labels.len() {
        return Err(Error::Shape(format!(
            "{rows} embeddings, {} labels",
            labels.len()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if rows < 2 {
        return Err(Error::BatchTooSmall(rows));
    }
    let mask = MaskMatrix::from_labels(labels);
    let mut weights = vec![0.0; rows * rows];
    for i in 0..rows {
        let positives: Vec<usize> = (0..rows).filter(|&j| j != i && mask.get(i, j)).collect();
        if positives.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "anchor {i} (label {}) has no positive",
                labels[i]
            )));
        }
        let w = -1.0 / (positives.len() * rows) as f64;
        for j in positives {
            weights[i * rows + j] = w;
        }
    }
    let include: Vec<bool> = (0..rows * rows).map(|k| k / rows != k % rows).collect();
    let unit = tape.l2_normalize_rows(h_all)?;
    let sim = tape.matmul_nt(unit, unit)?;
    let logits = tape.scale(sim, 1.0 / tau);
    let logp = tape.log_softmax_masked(logits, &include)?;
    tape.weighted_sum(logp, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ReferenceConfig {
        ReferenceConfig {
            n_mels: 6,
            d: 8,
            m: 3,
            heads: 2,
            layers: 2,
        }
    }

    fn mel(t: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(
            t,
            6,
            (0..t * 6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn output_shape_is_fixed() {
        let mut store = ParamStore::new();
        let enc =
            ReferenceEncoder::init(&mut store, tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in [1, 5, 17] {
            let h = enc.encode(&store, &mel(t, t as u64)).unwrap();
            assert_eq!((h.rows(), h.cols()), (3, 8));
        }
        assert!(enc.encode(&store, &Matrix::zeros(0, 6)).is_err());
        assert_eq!(
            enc.encode(&store, &mel(9, 1)).unwrap(),
            enc.encode(&store, &mel(9, 1)).unwrap()
        );
    }

    #[test]
    fn branches_share_weights() {
        let mut store = ParamStore::new();
        let enc =
            ReferenceEncoder::init(&mut store, tiny(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = mel(7, 3);
        let mut tape = Tape::new();
        let (a, b) = dual_branch_encode(&enc, &mut tape, &store, &x, &x).unwrap();
        assert_eq!(tape.value(a.h_ref), tape.value(b.h_ref));
        let n_params = tape.len();

        // a loss on the noisy branch alone reaches the same parameter tensors
        let loss = tape.sum(b.h_ref);
        let g = tape.backward(loss).unwrap();
        let grads = g.params();
        assert_eq!(grads.len(), store.len());
        assert!(grads["ref.queries"].l2_norm() > 0.0);
        assert!(n_params > 0);
    }

    #[test]
    fn average_examples() {
        let mut tape = Tape::new();
        let x = Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap();
        let h = tape.constant(x.clone());
        let avg = average_reprs(&mut tape, h, h).unwrap();
        assert_eq!(tape.value(avg), &x);
        let zero = tape.constant(Tensor::zeros(&[1, 2]));
        let twice = tape.constant(Tensor::matrix(1, 2, vec![3.0, -4.0]).unwrap());
        let avg = average_reprs(&mut tape, zero, twice).unwrap();
        assert_eq!(tape.value(avg), &x);
        let swapped = average_reprs(&mut tape, twice, zero).unwrap();
        assert_eq!(tape.value(swapped), &x);
        let bad = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(average_reprs(&mut tape, h, bad).is_err());
    }

    #[test]
    fn pooling_contract() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
        let c = tape.constant(Tensor::matrix(2, 2, vec![5.0, 5.0, 5.0, 5.0]).unwrap());
        let batch = pool_and_concat(&mut tape, &[a, c], &[b, a], &[7, 9]).unwrap();
        assert_eq!(batch.labels, vec![7, 9, 7, 9]);
        assert_eq!(
            tape.value(batch.h_all).data(),
            &[1.0, 2.0, 5.0, 5.0, 3.0, 4.0, 1.0, 2.0]
        );
        assert!(matches!(
            pool_and_concat(&mut tape, &[a], &[b], &[0]),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn mask_structure() {
        let labels = [0, 1, 2, 1, 0, 1, 2, 1];
        let m = MaskMatrix::from_labels(&labels);
        for i in 0..8 {
            assert!(m.get(i, i));
            for j in 0..8 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        for i in 0..4 {
            assert!(m.get(i, i + 4));
        }
    }

    #[test]
    fn anchor_without_positive_is_rejected() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        assert!(contrastive_speaker_loss(&mut tape, h, &[0, 1], 0.1).is_err());
    }
}
