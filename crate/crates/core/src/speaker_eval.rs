//! Speaker verification scoring with reference-encoder embeddings.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{ParamStore, Tape};
use crate::reference::ReferenceEncoder;

/// Mean over frames, then unit L2 norm.
pub fn pooled_embedding(hidden: &Matrix) -> Result<Vec<f64>> {
    if hidden.rows() == 0 {
        return Err(Error::InputTooShort("no frames to pool".into()));
    }
    normalize(hidden.mean_row())
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidArgument(
            "cannot normalize a zero vector".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Unit-norm utterance embedding from the encoder's last transformer layer.
pub fn speaker_embedding(
    encoder: &ReferenceEncoder,
    store: &ParamStore,
    mel: &Matrix,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let out = encoder.forward(&mut tape, store, mel)?;
    pooled_embedding(&tape.value(out.last_hidden).to_matrix()?)
}

/// Nonnegative per-layer weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights(Vec<f64>);

impl LayerWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "invalid layer weights {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "layer weights sum to {sum}"
            )));
        }
        Ok(Self(w))
    }

    pub fn uniform(layers: usize) -> Result<Self> {
        Self::new(vec![1.0 / layers as f64; layers])
    }

    /// Softmax of unconstrained logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut w: Vec<f64> = e.iter().map(|x| x / s).collect();
        // push the rounding residue into the largest weight
        let resid = 1.0 - w.iter().sum::<f64>();
        if let Some(top) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *top += resid;
        }
        Self::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `Σ_l w_l · hidden_l`.
pub fn weighted_layer_sum(hidden: &[Matrix], w: &LayerWeights) -> Result<Matrix> {
    if hidden.len() != w.0.len() {
        return Err(Error::Shape(format!(
            "{} layers, {} weights",
            hidden.len(),
            w.0.len()
        )));
    }
    let first = &hidden[0];
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for (h, &wl) in hidden.iter().zip(&w.0) {
        if (h.rows(), h.cols()) != (first.rows(), first.cols()) {
            return Err(Error::Shape("layers differ in shape".into()));
        }
        for (o, x) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *o += wl * x;
        }
    }
    Ok(out)
}

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
    pub target: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

/// One operating point of the threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Fraction of nontarget scores at or above the threshold.
    pub far: f64,
    /// Fraction of target scores below the threshold.
    pub frr: f64,
}

/// Operating points at every distinct score, then at `+∞`.
pub fn det_sweep(targets: &[f64], nontargets: &[f64]) -> Result<Vec<OperatingPoint>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one target and one nontarget trial".into(),
        ));
    }
    if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("trial score".into()));
    }
    let mut tgt = targets.to_vec();
    let mut non = nontargets.to_vec();
    tgt.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = tgt.iter().chain(&non).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (nt, nn) = (tgt.len() as f64, non.len() as f64);
    let (mut ti, mut ni) = (0, 0);
    Ok(thresholds
        .into_iter()
        .map(|th| {
            while ti < tgt.len() && tgt[ti] < th {
                ti += 1;
            }
            while ni < non.len() && non[ni] < th {
                ni += 1;
            }
            OperatingPoint {
                threshold: th,
                far: (non.len() - ni) as f64 / nn,
                frr: ti as f64 / nt,
            }
        })
        .collect())
}

/// Equal error rate, linearly interpolated between the two operating points
/// where `FRR − FAR` changes sign.
pub fn eer_from_scores(targets: &[f64], nontargets: &[f64]) -> Result<EerResult> {
    let pts = det_sweep(targets, nontargets)?;
    let i = pts
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("FRR = 1 and FAR = 0 at the final threshold");
    if i == 0 {
        return Ok(EerResult {
            eer: pts[0].far,
            threshold: pts[0].threshold,
        });
    }
    let (lo, hi) = (pts[i - 1], pts[i]);
    let (d0, d1) = (lo.frr - lo.far, hi.frr - hi.far);
    let a = d0 / (d0 - d1);
    let eer = lo.far + a * (hi.far - lo.far);
    let threshold = if hi.threshold.is_finite() {
        lo.threshold + a * (hi.threshold - lo.threshold)
    } else {
        lo.threshold
    };
    Ok(EerResult { eer, threshold })
}

pub fn compute_eer(trials: &[TrialScore]) -> Result<EerResult> {
    let (tgt, non): (Vec<&TrialScore>, Vec<&TrialScore>) = trials.iter().partition(|t| t.target);
    let tgt: Vec<f64> = tgt.iter().map(|t| t.score).collect();
    let non: Vec<f64> = non.iter().map(|t| t.score).collect();
    eer_from_scores(&tgt, &non)
}

/// Mean silhouette coefficient under Euclidean distance. Points in singleton
/// clusters contribute 0.
pub fn silhouette_score(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} points, {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sums = vec![0.0; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let c = classes.binary_search(&labels[j]).expect("label listed");
            sums[c] += dist(p, q);
            counts[c] += 1;
        }
        let own = classes.binary_search(&labels[i]).expect("label listed");
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}
