//! Variance-preserving SDE: schedule, closed-form perturbation, score target,
//! L1 score-matching loss and an Euler–Maruyama reverse sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Tape, Tensor, Var};

/// Smallest time used for training draws and as the sampler's end point.
pub const T_MIN: f64 = 1e-4;

/// Linear schedule `β(t) = β₀ + t (β₁ − β₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta0: 0.05,
            beta1: 20.0,
        }
    }
}

impl NoiseSchedule {
    pub fn beta(&self, t: f64) -> f64 {
        self.beta0 + t * (self.beta1 - self.beta0)
    }

    /// `∫₀ᵗ β(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        self.beta0 * t + (self.beta1 - self.beta0) * t * t / 2.0
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// `(exp(−B(t)/2), 1 − exp(−B(t)))`: mean scale and variance of `z_t | z_0`.
pub fn perturbation_coefficients(t: f64, sched: &NoiseSchedule) -> Result<(f64, f64)> {
    check_time(t)?;
    let b = sched.integral(t);
    Ok(((-b / 2.0).exp(), -(-b).exp_m1()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub t: f64,
    pub z: Tensor,
}

fn gaussian_like<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .expect("sized from shape")
}

/// Draws `z_t = mean_coef · z0 + sqrt(variance) · ε`.
pub fn forward_perturb<R: Rng + ?Sized>(
    z0: &Tensor,
    t: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<DiffusionState> {
    let (mean_coef, var) = perturbation_coefficients(t, sched)?;
    let std = var.sqrt();
    let z = z0
        .data()
        .iter()
        .map(|&x| mean_coef * x + std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(DiffusionState {
        t,
        z: Tensor::new(z0.shape().to_vec(), z)?,
    })
}

/// Score of the Gaussian kernel `p(z_t | z0)` at `z_t`.
pub fn true_score(z_t: &Tensor, z0: &Tensor, t: f64, sched: &NoiseSchedule) -> Result<Tensor> {
    let (mean_coef, var) = perturbation_coefficients(t, sched)?;
    if var <= 0.0 {
        return Err(Error::ZeroVariance(t));
    }
    if z_t.shape() != z0.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            z_t.shape(),
            z0.shape()
        )));
    }
    let s = z_t
        .data()
        .iter()
        .zip(z0.data())
        .map(|(zt, x)| -(zt - mean_coef * x) / var)
        .collect();
    Tensor::new(z_t.shape().to_vec(), s)
}

/// Uniform training time in `[T_MIN, 1]`.
pub fn sample_time<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(T_MIN..=1.0)
}

/// Draws training times from a piecewise-constant density close to
/// `1/σ(t)` and returns importance weights against the uniform density on
/// `[T_MIN, 1]`.
///
/// `weight · diffusion_loss(t)` is an unbiased estimate of the uniform-time
/// loss. Since the unweighted loss grows like `1/σ(t)`, the weighted terms are
/// of similar size at every `t`, which keeps small-`t` draws from swamping the
/// batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSampler {
    edges: Vec<f64>,
    cdf: Vec<f64>,
}

impl TimeSampler {
    pub fn new(sched: &NoiseSchedule, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidArgument(
                "time sampler needs at least one cell".into(),
            ));
        }
        let (lo, hi) = (T_MIN.ln(), 0.0f64);
        let edges: Vec<f64> = (0..=cells)
            .map(|i| (lo + (hi - lo) * i as f64 / cells as f64).exp())
            .collect();
        let mut cdf = vec![0.0];
        for w in edges.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let (_, var) = perturbation_coefficients(mid, sched)?;
            cdf.push(cdf.last().unwrap() + (w[1] - w[0]) / var.sqrt());
        }
        let total = *cdf.last().unwrap();
        cdf.iter_mut().for_each(|c| *c /= total);
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { edges, cdf })
    }

    /// Maps `u ∈ [0, 1)` to `(t, weight)`.
    pub fn draw(&self, u: f64) -> (f64, f64) {
        let j = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1)
            - 1;
        let mass = self.cdf[j + 1] - self.cdf[j];
        let (a, b) = (self.edges[j], self.edges[j + 1]);
        let t = (a + (b - a) * (u - self.cdf[j]) / mass).clamp(a, b);
        let density = mass / (b - a);
        (t, 1.0 / ((1.0 - T_MIN) * density))
    }

    /// `n` draws with `u` stratified over `[0, 1)`.
    pub fn stratified<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| self.draw((i as f64 + rng.random::<f64>()) / n as f64))
            .collect()
    }
}

/// Perturbs `z0` to time `t`, runs `score_fn` on the tape and returns the mean
/// absolute error against the kernel score.
pub fn diffusion_loss<R, F>(
    tape: &mut Tape,
    z0: &Tensor,
    t: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
    score_fn: F,
) -> Result<Var>
where
    R: Rng + ?Sized,
    F: FnOnce(&mut Tape, Var, f64) -> Result<Var>,
{
    if !(T_MIN..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "training time {t} outside [{T_MIN}, 1]"
        )));
    }
    let state = forward_perturb(z0, t, sched, rng)?;
    let target = true_score(&state.z, z0, t, sched)?;
    let z_t = tape.constant(state.z);
    let predicted = score_fn(tape, z_t, t)?;
    if tape.shape(predicted) != target.shape() {
        return Err(Error::Shape(format!(
            "score has shape {:?}, expected {:?}",
            tape.shape(predicted),
            target.shape()
        )));
    }
    let target = tape.constant(target);
    let diff = tape.sub(predicted, target)?;
    Ok(tape.mean_abs(diff))
}

/// One Euler–Maruyama step from `t` to `t − dt` of the reverse-time SDE.
pub fn reverse_step<R: Rng + ?Sized>(
    state: &DiffusionState,
    score: &Tensor,
    dt: f64,
    sched: &NoiseSchedule,
    rng: &mut R,
    add_noise: bool,
) -> Result<DiffusionState> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step {dt} must be positive"
        )));
    }
    if state.t - dt < -1e-12 {
        return Err(Error::InvalidArgument(format!(
            "stepping from t = {} by {dt} passes t = 0",
            state.t
        )));
    }
    if score.shape() != state.z.shape() {
        return Err(Error::Shape(format!(
            "{:?} vs {:?}",
            score.shape(),
            state.z.shape()
        )));
    }
    let beta = sched.beta(state.t);
    let noise_scale = (beta * dt).sqrt();
    let z = state
        .z
        .data()
        .iter()
        .zip(score.data())
        .map(|(&z, &s)| {
            let mut next = z + beta * (0.5 * z + s) * dt;
            if add_noise {
                next += noise_scale * rng.sample::<f64, _>(StandardNormal);
            }
            next
        })
        .collect();
    Ok(DiffusionState {
        t: (state.t - dt).max(0.0),
        z: Tensor::new(state.z.shape().to_vec(), z)?,
    })
}

/// Starts from `N(0, I)` at `t = 1` and takes `n_steps` uniform reverse steps
/// down to [`T_MIN`]; the last step adds no noise.
pub fn sample<R, F>(
    mut score_fn: F,
    shape: &[usize],
    n_steps: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor>
where
    R: Rng + ?Sized,
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument(
            "sampling needs at least one step".into(),
        ));
    }
    let dt = (1.0 - T_MIN) / n_steps as f64;
    let mut state = DiffusionState {
        t: 1.0,
        z: gaussian_like(shape, rng),
    };
    for i in 0..n_steps {
        let score = score_fn(&state.z, state.t)?;
        state = reverse_step(&state, &score, dt, sched, rng, i + 1 < n_steps)?;
        if i + 1 == n_steps {
            state.t = T_MIN;
        }
    }
    if !state.z.is_finite() {
        return Err(Error::NonFinite("reverse sampling".into()));
    }
    Ok(state.z)
}
