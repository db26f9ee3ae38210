//! Tensor-level reverse-mode differentiation.
//!
//! Every op appends a node holding its value, its parents and a backward rule.
//! Parents always precede children, so a reverse sweep over node indices is a
//! valid topological order and visits each node once.

use std::collections::BTreeMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Maps the output gradient to one gradient per parent.
type BackwardFn = Box<dyn Fn(&[f64], &[&Tensor], &Tensor) -> Vec<Vec<f64>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    fault: Option<String>,
}

/// Gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient with respect to any node; zeros if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Gradient per parameter used on the tape, keyed by parameter name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &v)| (name.clone(), self.wrt(v)))
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.params.get(name).map(|&v| self.wrt(v))
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// `c = op(a) * op(b)` for row-major matrices, optionally transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
) -> Vec<f64> {
    let (m, k) = if trans_a {
        (a_cols, a_rows)
    } else {
        (a_rows, a_cols)
    };
    let n = if trans_b { b_rows } else { b_cols };
    let (rsa, csa) = if trans_a {
        (1, a_cols as isize)
    } else {
        (a_cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b_cols as isize)
    } else {
        (b_cols as isize, 1)
    };
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: the strides describe in-bounds views of `a` (a_rows x a_cols),
    // `b` (b_rows x b_cols) and `c` (m x n), all row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First non-finite op output seen on this tape, if any.
    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    fn push(
        &mut self,
        op: &str,
        value: Tensor,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.to_string());
        }
        let requires_grad =
            backward.is_some() && parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            parents,
            backward: if requires_grad { backward } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some("leaf".into());
        }
        self.nodes.push(Node {
            value,
            parents: vec![],
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A differentiable input that is not a named parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// The named parameter as a leaf; repeated requests return the same node,
    /// so every use accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.push_leaf(store.get(name)?.clone(), true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if let Some(op) = &self.fault {
            return Err(Error::NonFinite(op.clone()));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Shape(format!(
                "loss must be scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(back) = &node.backward else { continue };
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = &rest[0] else { continue };
            let parents: Vec<&Tensor> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let pgrads = back(g, &parents, &node.value);
            for (&p, pg) in node.parents.iter().zip(pgrads) {
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut before[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        let reached = self
            .params
            .values()
            .any(|v| v.0 <= loss.0 && grads[v.0].is_some());
        if !reached && !self.params.is_empty() {
            log::warn!("loss does not depend on any parameter; gradients are zero");
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            params: self.params.clone(),
        })
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        // rhs either matches exactly or is a row vector broadcast over rows
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if bv.len() == av.last_dim()
            && (bv.shape().len() == 1 || bv.shape().iter().rev().skip(1).all(|&d| d == 1))
        {
            true
        } else {
            return Err(shape_err(name, av.shape(), bv.shape()));
        };
        let width = bv.len();
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bv.data()[if broadcast { i % width } else { i }];
                match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let back: BackwardFn = Box::new(move |g, p, _| {
            let (a, b) = (p[0].data(), p[1].data());
            let ga: Vec<f64> = match kind {
                Binary::Add | Binary::Sub => g.to_vec(),
                Binary::Mul => g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * b[if broadcast { i % width } else { i }])
                    .collect(),
            };
            let mut gb = vec![0.0; b.len()];
            for (i, gi) in g.iter().enumerate() {
                let j = if broadcast { i % width } else { i };
                gb[j] += match kind {
                    Binary::Add => *gi,
                    Binary::Sub => -gi,
                    Binary::Mul => gi * a[i],
                };
            }
            vec![ga, gb]
        });
        Ok(self.push(name, value, vec![a.0, b.0], Some(back)))
    }

    /// Elementwise `a + b`; `b` may be a row vector broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    fn unary(
        &mut self,
        op: &str,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let av = &self.nodes[a.0].value;
        let data = av.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let back: BackwardFn = Box::new(move |g, p, out| {
            vec![g
                .iter()
                .zip(p[0].data())
                .zip(out.data())
                .map(|((gi, &x), &y)| gi * df(x, y))
                .collect()]
        });
        self.push(op, value, vec![a.0], Some(back))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary("scale", a, move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary("add_scalar", a, move |x| x + c, |_, _| 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary("tanh", a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            "sigmoid",
            a,
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const K: f64 = 0.044_715;
        self.unary(
            "gelu",
            a,
            |x| 0.5 * x * (1.0 + (C * (x + K * x * x * x)).tanh()),
            |x, _| {
                let th = (C * (x + K * x * x * x)).tanh();
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * C * (1.0 + 3.0 * K * x * x)
            },
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary("square", a, |x| x * x, |x, _| 2.0 * x)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ar, ac) = self.nodes[a.0].value.dims2()?;
        let (br, bc) = self.nodes[b.0].value.dims2()?;
        let (inner, n) = if trans_b { (bc, br) } else { (br, bc) };
        if ac != inner {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let data = gemm(
            self.nodes[a.0].value.data(),
            ar,
            ac,
            false,
            self.nodes[b.0].value.data(),
            br,
            bc,
            trans_b,
        );
        let value = Tensor::matrix(ar, n, data)?;
        let back: BackwardFn = Box::new(move |g, p, _| {
            let (a, b) = (p[0].data(), p[1].data());
            // C = A B:   dA = G B^T,  dB = A^T G
            // C = A B^T: dA = G B,    dB = G^T A
            let ga = gemm(g, ar, n, false, b, br, bc, !trans_b);
            let gb = if trans_b {
                gemm(g, ar, n, true, a, ar, ac, false)
            } else {
                gemm(a, ar, ac, true, g, ar, n, false)
            };
            vec![ga, gb]
        });
        Ok(self.push("matmul", value, vec![a.0, b.0], Some(back)))
    }

    /// `a · b` for matrices.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for matrices.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.dims2()?;
        let src = self.nodes[a.0].value.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[i * c + j] = g[j * r + i];
                }
            }
            vec![out]
        });
        Ok(self.push(
            "transpose",
            Tensor::matrix(c, r, data)?,
            vec![a.0],
            Some(back),
        ))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let width = av.last_dim();
        if width == 0 {
            return Err(Error::Shape("softmax over empty rows".into()));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(width) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let back: BackwardFn = Box::new(move |g, _, out| {
            let mut dx = vec![0.0; g.len()];
            for ((dxr, gr), yr) in dx
                .chunks_mut(width)
                .zip(g.chunks(width))
                .zip(out.data().chunks(width))
            {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, gi), yi) in dxr.iter_mut().zip(gr).zip(yr) {
                    *d = yi * (gi - dot);
                }
            }
            vec![dx]
        });
        Ok(self.push("softmax", value, vec![a.0], Some(back)))
    }

    /// Row-wise log-softmax over the entries where `include` is true.
    /// Excluded entries output 0 and pass no gradient.
    pub fn log_softmax_masked(&mut self, a: Var, include: &[bool]) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if include.len() != av.len() {
            return Err(Error::Shape(format!(
                "mask of {} entries for tensor of {}",
                include.len(),
                av.len()
            )));
        }
        let width = av.last_dim();
        let mask = include.to_vec();
        let mut data = vec![0.0; av.len()];
        let mut probs = vec![0.0; av.len()];
        for (r, x) in av.data().chunks(width).enumerate() {
            let m = &mask[r * width..(r + 1) * width];
            let max = x
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "row {r} has no included entry"
                )));
            }
            let lse = max
                + x.iter()
                    .zip(m)
                    .filter(|(_, &keep)| keep)
                    .map(|(v, _)| (v - max).exp())
                    .sum::<f64>()
                    .ln();
            for j in 0..width {
                if m[j] {
                    data[r * width + j] = x[j] - lse;
                    probs[r * width + j] = (x[j] - lse).exp();
                }
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut dx = vec![0.0; g.len()];
            for r in 0..g.len() / width {
                let span = r * width..(r + 1) * width;
                let gsum: f64 = g[span.clone()]
                    .iter()
                    .zip(&mask[span.clone()])
                    .filter(|(_, &keep)| keep)
                    .map(|(v, _)| v)
                    .sum();
                for j in span {
                    if mask[j] {
                        dx[j] = g[j] - probs[j] * gsum;
                    }
                }
            }
            vec![dx]
        });
        Ok(self.push("log_softmax", value, vec![a.0], Some(back)))
    }

    /// Per-row normalization over the last dimension, then `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let width = xv.last_dim();
        if self.nodes[gain.0].value.len() != width || self.nodes[bias.0].value.len() != width {
            return Err(shape_err("layer_norm", xv.shape(), self.shape(gain)));
        }
        let gv = self.nodes[gain.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let rows = xv.len() / width.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for (r, row) in xv.data().chunks(width).enumerate() {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..width {
                let h = (row[j] - mean) * inv;
                xhat[r * width + j] = h;
                out[r * width + j] = gv[j] * h + bv[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let back: BackwardFn = Box::new(move |g, p, _| {
            let gain = p[1].data();
            let mut dx = vec![0.0; g.len()];
            let mut dgain = vec![0.0; width];
            let mut dbias = vec![0.0; width];
            for r in 0..rows {
                let span = r * width..(r + 1) * width;
                let (gr, hr) = (&g[span.clone()], &xhat[span.clone()]);
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for j in 0..width {
                    dgain[j] += gr[j] * hr[j];
                    dbias[j] += gr[j];
                    let dh = gr[j] * gain[j];
                    sum_dh += dh;
                    sum_dh_h += dh * hr[j];
                }
                let n = width as f64;
                for j in 0..width {
                    let dh = gr[j] * gain[j];
                    dx[r * width + j] = inv_std[r] / n * (n * dh - sum_dh - hr[j] * sum_dh_h);
                }
            }
            vec![dx, dgain, dbias]
        });
        Ok(self.push("layer_norm", value, vec![x.0, gain.0, bias.0], Some(back)))
    }

    /// Rows scaled to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        let width = av.last_dim();
        let mut out = av.data().to_vec();
        let mut norms = vec![];
        for row in out.chunks_mut(width) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            row.iter_mut().for_each(|v| *v /= n);
        }
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let back: BackwardFn = Box::new(move |g, _, y| {
            let mut dx = vec![0.0; g.len()];
            for (r, n) in norms.iter().enumerate() {
                let span = r * width..(r + 1) * width;
                let yr = &y.data()[span.clone()];
                let gr = &g[span.clone()];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..width {
                    dx[r * width + j] = (gr[j] - yr[j] * dot) / n;
                }
            }
            vec![dx]
        });
        Ok(self.push("l2_normalize", value, vec![a.0], Some(back)))
    }

    /// Same-padded dilated 1-D patches: `[T, C]` to `[T, kernel * C]`, where
    /// column block `j` holds input row `t + (j - (kernel - 1) / 2) * dilation`.
    pub fn im2col(&mut self, x: Var, kernel: usize, dilation: usize) -> Result<Var> {
        let (t_len, ch) = self.nodes[x.0].value.dims2()?;
        if kernel == 0 || dilation == 0 {
            return Err(Error::InvalidArgument(
                "kernel and dilation must be positive".into(),
            ));
        }
        let half = (kernel - 1) / 2;
        let src = self.nodes[x.0].value.data();
        let width = kernel * ch;
        let mut out = vec![0.0; t_len * width];
        let offset = move |t: usize, j: usize| -> Option<usize> {
            let pos = t as isize + (j as isize - half as isize) * dilation as isize;
            (0..t_len as isize).contains(&pos).then_some(pos as usize)
        };
        for t in 0..t_len {
            for j in 0..kernel {
                if let Some(s) = offset(t, j) {
                    out[t * width + j * ch..t * width + (j + 1) * ch]
                        .copy_from_slice(&src[s * ch..(s + 1) * ch]);
                }
            }
        }
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut dx = vec![0.0; t_len * ch];
            for t in 0..t_len {
                for j in 0..kernel {
                    if let Some(s) = offset(t, j) {
                        for c in 0..ch {
                            dx[s * ch + c] += g[t * width + j * ch + c];
                        }
                    }
                }
            }
            vec![dx]
        });
        Ok(self.push(
            "im2col",
            Tensor::matrix(t_len, width, out)?,
            vec![x.0],
            Some(back),
        ))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.dims2()?;
        if start + len > c {
            return Err(Error::Shape(format!(
                "columns {start}..{} of {c}",
                start + len
            )));
        }
        let src = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                dx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
            }
            vec![dx]
        });
        Ok(self.push(
            "slice_cols",
            Tensor::matrix(r, len, out)?,
            vec![a.0],
            Some(back),
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|v| self.nodes[v.0].value.dims2())
            .collect::<Result<_>>()?;
        let rows = dims.first().map_or(0, |d| d.0);
        if dims.iter().any(|d| d.0 != rows) {
            return Err(Error::Shape(format!("concat_cols over {dims:?}")));
        }
        let widths: Vec<usize> = dims.iter().map(|d| d.1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (v, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[v.0].value.data()[i * w..(i + 1) * w]);
            }
        }
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut grads: Vec<Vec<f64>> = widths
                .iter()
                .map(|w| Vec::with_capacity(rows * w))
                .collect();
            for i in 0..rows {
                let mut off = i * total;
                for (gp, &w) in grads.iter_mut().zip(&widths) {
                    gp.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            grads
        });
        let parents = parts.iter().map(|v| v.0).collect();
        Ok(self.push(
            "concat_cols",
            Tensor::matrix(rows, total, out)?,
            parents,
            Some(back),
        ))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|v| self.nodes[v.0].value.dims2())
            .collect::<Result<_>>()?;
        let cols = dims.first().map_or(0, |d| d.1);
        if dims.iter().any(|d| d.1 != cols) {
            return Err(Error::Shape(format!("concat_rows over {dims:?}")));
        }
        let sizes: Vec<usize> = dims.iter().map(|d| d.0 * d.1).collect();
        let mut out = Vec::with_capacity(sizes.iter().sum());
        for v in parts {
            out.extend_from_slice(self.nodes[v.0].value.data());
        }
        let rows = dims.iter().map(|d| d.0).sum();
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&s| {
                    let part = g[off..off + s].to_vec();
                    off += s;
                    part
                })
                .collect()
        });
        let parents = parts.iter().map(|v| v.0).collect();
        Ok(self.push(
            "concat_rows",
            Tensor::matrix(rows, cols, out)?,
            parents,
            Some(back),
        ))
    }

    /// Rows `[start, end)` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.dims2()?;
        if start > end || end > r {
            return Err(Error::Shape(format!("rows {start}..{end} of {r}")));
        }
        let out = self.nodes[a.0].value.data()[start * c..end * c].to_vec();
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut dx = vec![0.0; r * c];
            dx[start * c..end * c].copy_from_slice(g);
            vec![dx]
        });
        Ok(self.push(
            "slice_rows",
            Tensor::matrix(end - start, c, out)?,
            vec![a.0],
            Some(back),
        ))
    }

    /// Column means as a `[1, C]` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.dims2()?;
        if r == 0 {
            return Err(Error::Shape("mean over zero rows".into()));
        }
        let mut out = vec![0.0; c];
        for row in self.nodes[a.0].value.data().chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let back: BackwardFn = Box::new(move |g, _, _| {
            let mut dx = vec![0.0; r * c];
            for row in dx.chunks_mut(c) {
                row.iter_mut().zip(g).for_each(|(d, gi)| *d = gi / r as f64);
            }
            vec![dx]
        });
        Ok(self.push(
            "mean_rows",
            Tensor::matrix(1, c, out)?,
            vec![a.0],
            Some(back),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let n = av.len();
        let value = Tensor::scalar(av.data().iter().sum());
        let back: BackwardFn = Box::new(move |g, _, _| vec![vec![g[0]; n]]);
        self.push("sum", value, vec![a.0], Some(back))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean absolute value; the subgradient at 0 is 0.
    pub fn mean_abs(&mut self, a: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let n = av.len();
        let value = Tensor::scalar(av.data().iter().map(|v| v.abs()).sum::<f64>() / n as f64);
        let back: BackwardFn = Box::new(move |g, p, _| {
            vec![p[0]
                .data()
                .iter()
                .map(|v| {
                    g[0] * if *v > 0.0 {
                        1.0
                    } else if *v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    } / n as f64
                })
                .collect()]
        });
        self.push("mean_abs", value, vec![a.0], Some(back))
    }

    /// `Σ weights ⊙ a` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let av = &self.nodes[a.0].value;
        if weights.len() != av.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} values",
                weights.len(),
                av.len()
            )));
        }
        let value = Tensor::scalar(av.data().iter().zip(&weights).map(|(a, w)| a * w).sum());
        let back: BackwardFn =
            Box::new(move |g, _, _| vec![weights.iter().map(|w| g[0] * w).collect()]);
        Ok(self.push("weighted_sum", value, vec![a.0], Some(back)))
    }
}
