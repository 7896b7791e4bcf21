//! Amortized Stein variational gradient for the behavior policy.
//!
//! For each state `s_i` the network produces `K` particles
//! `a_il = f(s_i, ξ_il)`. Each particle is pushed along
//!
//! ```text
//! Δ_il = Σ_j [ k(a_il, a_ij) ∇_a Q(s_i, a_ij) + β ∇_{a_ij} k(a_il, a_ij) ]
//! ```
//!
//! and the parameter update is `(1 / MK) Σ_i Σ_l Δ_il ∂f(s_i, ξ_il)/∂φ`.
//! The kernel is a Gaussian with bandwidth `h = d / K`, normalized by
//! `1 / (√(2π) h)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor};
use crate::nn::{Adam, CriticNet, Module, NnError, PolicyNet};

#[derive(Debug, Error)]
pub enum SvgdError {
    #[error("need at least 2 particles per state, got {0}")]
    TooFewParticles(usize),
    #[error("kernel needs positive dimension and particle count")]
    BadKernel,
    #[error("{0} rows of noise for {1} states x {2} particles")]
    NoiseShape(usize, usize, usize),
    #[error("non-finite value at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, SvgdError>;

/// Gaussian kernel with bandwidth `d / K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub h: f64,
}

impl KernelSpec {
    pub fn new(action_dim: usize, particles: usize) -> Result<Self> {
        if action_dim == 0 || particles == 0 {
            return Err(SvgdError::BadKernel);
        }
        Ok(Self {
            h: action_dim as f64 / particles as f64,
        })
    }

    pub fn norm(&self) -> f64 {
        1.0 / ((2.0 * PI).sqrt() * self.h)
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.norm() * (-d2 / (2.0 * self.h * self.h)).exp()
    }

    /// Gradient of `kernel(a, b)` with respect to `b`.
    pub fn kernel_grad(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let k = self.kernel(a, b);
        let h2 = self.h * self.h;
        a.iter().zip(b).map(|(x, y)| (x - y) / h2 * k).collect()
    }
}

/// Linear anneal of the entropy weight over a step horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            start: 2.0,
            end: 1.0,
            horizon: 1,
        }
    }
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self {
            start: beta,
            end: beta,
            horizon: 1,
        }
    }

    pub fn value(&self, step: u64) -> f64 {
        let frac = (step as f64 / self.horizon.max(1) as f64).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Anything that can report `∇_a Q(s, a)` row by row.
pub trait ActionValue {
    /// `s: [N, state_dim]`, `a: [N, action_dim]`, returns `[N, action_dim]`.
    fn action_gradient(&self, s: &Tensor, a: &Tensor) -> std::result::Result<Tensor, NnError>;
}

impl ActionValue for CriticNet {
    fn action_gradient(&self, s: &Tensor, a: &Tensor) -> std::result::Result<Tensor, NnError> {
        self.action_grad(s, a)
    }
}

/// Summary of one Stein update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvgdStats {
    /// Mean squared norm of the per-particle drive term.
    pub drive: f64,
    /// Mean squared norm of the repulsion term.
    pub repulsion: f64,
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Repeats each row of `s` `k` times.
pub fn repeat_rows(s: &Tensor, k: usize) -> Tensor {
    let (rows, cols) = s.dims2().expect("state batch is 2-D");
    let mut data = Vec::with_capacity(rows * k * cols);
    for i in 0..rows {
        for _ in 0..k {
            data.extend_from_slice(s.row(i));
        }
    }
    Tensor::matrix(rows * k, cols, data).expect("shape matches data")
}

/// Per-particle Stein directions for one state's particle set.
/// `particles` and `grads` are `K` rows of length `d`.
pub fn stein_directions(
    particles: &[&[f64]],
    grads: &[&[f64]],
    spec: &KernelSpec,
    beta: f64,
) -> (Vec<Vec<f64>>, SvgdStats) {
    let k = particles.len();
    let d = particles.first().map_or(0, |p| p.len());
    let h2 = spec.h * spec.h;
    let mut out = vec![vec![0.0; d]; k];
    let (mut drive, mut rep) = (0.0, 0.0);
    for l in 0..k {
        let mut t1 = vec![0.0; d];
        let mut t2 = vec![0.0; d];
        for j in 0..k {
            let w = spec.kernel(particles[l], particles[j]);
            for c in 0..d {
                t1[c] += w * grads[j][c];
                t2[c] += (particles[l][c] - particles[j][c]) / h2 * w;
            }
        }
        for c in 0..d {
            out[l][c] = t1[c] + beta * t2[c];
        }
        drive += t1.iter().map(|v| v * v).sum::<f64>();
        rep += t2.iter().map(|v| v * v).sum::<f64>();
    }
    let n = k.max(1) as f64;
    (
        out,
        SvgdStats {
            drive: drive / n,
            repulsion: rep / n,
        },
    )
}

/// Accumulates into `policy`'s gradients the gradient of the surrogate
/// loss `-(1/MK) Σ Δ_il · f(s_i, ξ_il)` with `Δ` held fixed, so a
/// minimizing optimizer step moves along the Stein direction.
///
/// `xi` holds `M·K` rows; rows `i·K .. (i+1)·K` belong to state `i`.
pub fn svgd_policy_gradient_with_noise<Q: ActionValue + ?Sized>(
    policy: &mut PolicyNet,
    critic: &Q,
    states: &Tensor,
    xi: &Tensor,
    particles: usize,
    beta: f64,
) -> Result<SvgdStats> {
    if particles < 2 {
        return Err(SvgdError::TooFewParticles(particles));
    }
    let m = states.dims2().map_or(0, |d| d.0);
    let rows = xi.dims2().map_or(0, |d| d.0);
    if rows != m * particles {
        return Err(SvgdError::NoiseShape(rows, m, particles));
    }
    let spec = KernelSpec::new(policy.action_dim(), particles)?;
    let d = policy.action_dim();
    let s_rep = repeat_rows(states, particles);

    let mut g = Graph::new();
    let sv = g.constant(s_rep.clone());
    let xv = g.constant(xi.clone());
    let (a, bound) = policy.forward(&mut g, sv, xv)?;
    let actions = g.value(a).clone();
    let qgrad = critic.action_gradient(&s_rep, &actions)?;

    let mut delta = vec![0.0; m * particles * d];
    let (mut drive, mut rep) = (0.0, 0.0);
    for i in 0..m {
        let idx = i * particles..(i + 1) * particles;
        let ps: Vec<&[f64]> = idx.clone().map(|r| actions.row(r)).collect();
        let gs: Vec<&[f64]> = idx.map(|r| qgrad.row(r)).collect();
        let (dirs, stats) = stein_directions(&ps, &gs, &spec, beta);
        for (l, dir) in dirs.iter().enumerate() {
            let r = i * particles + l;
            delta[r * d..(r + 1) * d].copy_from_slice(dir);
        }
        drive += stats.drive;
        rep += stats.repulsion;
    }

    let scale = -1.0 / (m * particles) as f64;
    let dv = g.constant(Tensor::matrix(m * particles, d, delta).expect("shape matches"));
    let prod = g.mul(dv, a).map_err(NnError::from)?;
    let total = g.sum(prod);
    let loss = g.scale(total, scale);
    let grads = g.backward(loss).map_err(NnError::from)?;
    bound.accumulate(&grads, policy)?;
    let mf = m.max(1) as f64;
    Ok(SvgdStats {
        drive: drive / mf,
        repulsion: rep / mf,
    })
}

/// [`svgd_policy_gradient_with_noise`] with fresh `ξ ~ N(0, I)`.
pub fn svgd_policy_gradient<Q: ActionValue + ?Sized, R: Rng + ?Sized>(
    policy: &mut PolicyNet,
    critic: &Q,
    states: &Tensor,
    particles: usize,
    beta: f64,
    rng: &mut R,
) -> Result<SvgdStats> {
    let m = states.dims2().map_or(0, |d| d.0);
    let xi = standard_normal(m * particles, policy.noise_dim(), rng);
    svgd_policy_gradient_with_noise(policy, critic, states, &xi, particles, beta)
}

/// Accumulates the gradient of `-mean_i Q(s_i, f(s_i, 0))`, the negated
/// deterministic policy gradient of the target policy.
pub fn deterministic_policy_gradient<Q: ActionValue + ?Sized>(
    policy: &mut PolicyNet,
    critic: &Q,
    states: &Tensor,
) -> Result<()> {
    let m = states.dims2().map_or(0, |d| d.0);
    let mut g = Graph::new();
    let sv = g.constant(states.clone());
    let xv = g.constant(Tensor::zeros(&[m, policy.noise_dim()]));
    let (a, bound) = policy.forward(&mut g, sv, xv)?;
    let qgrad = critic.action_gradient(states, g.value(a))?;
    let dv = g.constant(qgrad);
    let prod = g.mul(dv, a).map_err(NnError::from)?;
    let total = g.sum(prod);
    let loss = g.scale(total, -1.0 / m.max(1) as f64);
    let grads = g.backward(loss).map_err(NnError::from)?;
    bound.accumulate(&grads, policy)?;
    Ok(())
}

/// Behavior action: `clip(f(s, ξ) + ε)` with `ξ ~ N(0, I)` and
/// `ε ~ N(0, h² I)`, the kernel centered on the network output.
pub fn sample_behavior_action<R: Rng + ?Sized>(
    policy: &PolicyNet,
    s: &[f64],
    spec: &KernelSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let xi: Vec<f64> = (0..policy.noise_dim()).map(|_| StandardNormal.sample(rng)).collect();
    let eps: Vec<f64> = (0..policy.action_dim())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            spec.h * z
        })
        .collect();
    behavior_action_from(policy, s, &xi, &eps)
}

/// The deterministic part of [`sample_behavior_action`] for given draws.
pub fn behavior_action_from(
    policy: &PolicyNet,
    s: &[f64],
    xi: &[f64],
    eps: &[f64],
) -> Result<Vec<f64>> {
    let center = policy.act(s, xi)?;
    Ok(center
        .iter()
        .zip(eps)
        .zip(policy.low().iter().zip(policy.high()))
        .map(|((c, e), (lo, hi))| (c + e).clamp(*lo, *hi))
        .collect())
}

/// One-dimensional targets for the standalone sampler demo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyTarget {
    /// `N(0, 1)`.
    Unimodal,
    /// Equal mixture of `N(-m, s²)` and `N(m, s²)`.
    Bimodal { m: f64, s: f64 },
}

impl ToyTarget {
    pub fn bimodal() -> Self {
        ToyTarget::Bimodal { m: 0.9, s: 0.5 }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "unimodal" => Some(ToyTarget::Unimodal),
            "bimodal" => Some(Self::bimodal()),
            _ => None,
        }
    }

    /// Unnormalized log-density.
    pub fn log_density(&self, a: f64) -> f64 {
        match *self {
            ToyTarget::Unimodal => -0.5 * a * a,
            ToyTarget::Bimodal { m, s } => {
                let l = -0.5 * ((a - m) / s).powi(2);
                let r = -0.5 * ((a + m) / s).powi(2);
                let hi = l.max(r);
                hi + ((l - hi).exp() + (r - hi).exp()).ln()
            }
        }
    }

    /// Normalized density.
    pub fn density(&self, a: f64) -> f64 {
        let phi = |x: f64, mu: f64, s: f64| {
            (-0.5 * ((x - mu) / s).powi(2)).exp() / ((2.0 * PI).sqrt() * s)
        };
        match *self {
            ToyTarget::Unimodal => phi(a, 0.0, 1.0),
            ToyTarget::Bimodal { m, s } => 0.5 * (phi(a, -m, s) + phi(a, m, s)),
        }
    }
}

/// A log-density used as the critic, differentiated by central differences.
struct LogDensityCritic<'a> {
    f: &'a dyn Fn(f64) -> f64,
}

impl ActionValue for LogDensityCritic<'_> {
    fn action_gradient(&self, _s: &Tensor, a: &Tensor) -> std::result::Result<Tensor, NnError> {
        let h = 1e-5;
        let data = a
            .data()
            .iter()
            .map(|&x| ((self.f)(x + h) - (self.f)(x - h)) / (2.0 * h))
            .collect();
        Ok(Tensor::new(a.shape().to_vec(), data).map_err(NnError::from)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub particles: usize,
    /// Independent particle sets per update.
    pub groups: usize,
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Output range of the sampler.
    pub bound: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            particles: 32,
            groups: 16,
            noise_dim: 16,
            hidden: vec![64, 64],
            lr: 1e-3,
            bound: 5.0,
        }
    }
}

/// A trained noise-to-sample network.
#[derive(Debug, Clone)]
pub struct ToySampler {
    pub net: PolicyNet,
}

impl ToySampler {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let chunk = 4096;
        let mut left = n;
        while left > 0 {
            let b = left.min(chunk);
            let xi = standard_normal(b, self.net.noise_dim(), rng);
            let s = Tensor::zeros(&[b, 0]);
            let a = self.net.infer(&s, &xi).expect("toy sampler shapes are fixed");
            out.extend_from_slice(a.data());
            left -= b;
        }
        out
    }
}

/// Trains a state-free sampler `f(ξ)` by the Stein update with the target
/// log-density standing in for the critic.
pub fn toy_fit<R: Rng + ?Sized>(
    log_density: &dyn Fn(f64) -> f64,
    beta: f64,
    steps: usize,
    cfg: &ToyConfig,
    rng: &mut R,
) -> Result<ToySampler> {
    let mut net = PolicyNet::new(
        0,
        cfg.noise_dim,
        &cfg.hidden,
        vec![-cfg.bound],
        vec![cfg.bound],
        rng,
    );
    let mut opt = Adam::new(&net, cfg.lr);
    let critic = LogDensityCritic { f: log_density };
    let states = Tensor::zeros(&[cfg.groups, 0]);
    for step in 0..steps {
        net.zero_grad();
        svgd_policy_gradient(&mut net, &critic, &states, cfg.particles, beta, rng)?;
        if net.params().iter().any(|p| !p.grad.all_finite()) {
            return Err(SvgdError::Diverged(step));
        }
        opt.step(&mut net)?;
        if net.params().iter().any(|p| !p.value.all_finite()) {
            return Err(SvgdError::Diverged(step));
        }
    }
    Ok(ToySampler { net })
}
