//! Replay, intrinsic rewards, and the DDPG / TD3 / ADAC agents.
//!
//! ADAC keeps two critic families. The target critics regress on the
//! environment reward, the behavior critics on the reward plus the intrinsic
//! bonus, and both bootstrap through the target policy `π'(s') = f'(s', 0)`.
//! The shared network receives a deterministic policy gradient from the
//! target critic at `ξ = 0` and an amortized Stein gradient from the
//! behavior critic at `ξ ~ N(0, I)`, each through its own Adam.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor};
use crate::envs::{self, EnvError, Environment};
use crate::nn::{soft_update, Adam, CriticNet, Module, NnError, PolicyNet};
use crate::svgd::{
    deterministic_policy_gradient, repeat_rows, sample_behavior_action, standard_normal,
    svgd_policy_gradient, ActionValue, BetaSchedule, KernelSpec, SvgdError, SvgdStats,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Svgd(#[from] SvgdError),
    #[error("non-finite {what} at update {update}")]
    NonFinite { update: u64, what: String },
}

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub r_in: f64,
    pub s_next: Vec<f64>,
    /// True only on failure termination; time-limit ends still bootstrap.
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(AgentError::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `m` slot indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..m).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<&Transition> {
        self.sample_indices(m, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// A non-negative exploration bonus.
pub trait IntrinsicReward {
    fn update(&mut self, t: &Transition);
    fn score(&self, t: &Transition) -> f64;
}

/// `κ / √(N + 1)` over a fixed grid on the next observation.
#[derive(Debug, Clone)]
pub struct CountIntrinsic {
    pub kappa: f64,
    bins: usize,
    low: Vec<f64>,
    high: Vec<f64>,
    counts: HashMap<Vec<usize>, u64>,
}

impl CountIntrinsic {
    pub fn new(kappa: f64, bins: usize, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if !(kappa >= 0.0) || bins == 0 || low.len() != high.len() {
            return Err(AgentError::Config(
                "count bonus needs κ ≥ 0, bins > 0 and matching bounds".into(),
            ));
        }
        Ok(Self {
            kappa,
            bins,
            low,
            high,
            counts: HashMap::new(),
        })
    }

    /// Ten bins per dimension over the environment's nominal bounds.
    pub fn for_env(env: &dyn Environment, kappa: f64) -> Result<Self> {
        let (low, high) = env.observation_bounds();
        Self::new(kappa, 10, low, high)
    }

    pub fn cell(&self, obs: &[f64]) -> Vec<usize> {
        obs.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&x, (&lo, &hi))| {
                let u = ((x - lo) / (hi - lo) * self.bins as f64).floor();
                u.clamp(0.0, (self.bins - 1) as f64) as usize
            })
            .collect()
    }

    pub fn visits(&self, obs: &[f64]) -> u64 {
        self.counts.get(&self.cell(obs)).copied().unwrap_or(0)
    }
}

impl IntrinsicReward for CountIntrinsic {
    fn update(&mut self, t: &Transition) {
        *self.counts.entry(self.cell(&t.s_next)).or_insert(0) += 1;
    }

    fn score(&self, t: &Transition) -> f64 {
        self.kappa / ((self.visits(&t.s_next) + 1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "ddpg")]
    Ddpg,
    #[serde(rename = "td3")]
    Td3,
    #[serde(rename = "adac-ddpg")]
    AdacDdpg,
    #[serde(rename = "adac-td3")]
    AdacTd3,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [Self::Ddpg, Self::Td3, Self::AdacDdpg, Self::AdacTd3];

    pub fn id(self) -> &'static str {
        match self {
            Self::Ddpg => "ddpg",
            Self::Td3 => "td3",
            Self::AdacDdpg => "adac-ddpg",
            Self::AdacTd3 => "adac-td3",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn is_adac(self) -> bool {
        matches!(self, Self::AdacDdpg | Self::AdacTd3)
    }

    pub fn is_td3(self) -> bool {
        matches!(self, Self::Td3 | Self::AdacTd3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub lr_target_policy: f64,
    pub lr_behavior_policy: f64,
    pub lr_critic: f64,
    /// Particles `K` per state in the Stein update.
    pub particles: usize,
    /// States of each minibatch that enter the Stein update.
    pub svgd_states: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub policy_delay: usize,
    pub target_noise: f64,
    pub noise_clip: f64,
    /// Gaussian exploration scale of the non-ADAC baselines, in units of
    /// the action half-width.
    pub exploration_noise: f64,
    /// Steps collected by the behavior policy before the first update.
    pub warmup_steps: u64,
    /// Separate networks for π and μ instead of one shared network.
    pub split_networks: bool,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub bias_states: usize,
    pub bias_samples: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            lr_target_policy: 1e-4,
            lr_behavior_policy: 1e-4,
            lr_critic: 1e-3,
            particles: 32,
            svgd_states: 64,
            beta_start: 2.0,
            beta_end: 1.0,
            noise_dim: 16,
            hidden: vec![256, 256],
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            exploration_noise: 0.2,
            warmup_steps: 1000,
            split_networks: false,
            eval_every: 1000,
            eval_episodes: 5,
            bias_states: 32,
            bias_samples: 100,
        }
    }
}

impl AgentConfig {
    pub fn for_kind(kind: AgentKind) -> Self {
        let mut cfg = Self::default();
        if kind.is_td3() {
            cfg.lr_target_policy = 1e-3;
            cfg.lr_behavior_policy = 3e-4;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch size and buffer capacity must be positive");
        }
        if self.particles < 2 {
            return bad("at least two particles are needed");
        }
        if self.svgd_states == 0 || self.policy_delay == 0 || self.eval_episodes == 0 {
            return bad("svgd_states, policy_delay and eval_episodes must be positive");
        }
        if self.bias_samples < 100 {
            return bad("bias_samples must be at least 100");
        }
        let rates = [self.lr_target_policy, self.lr_behavior_policy, self.lr_critic];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        Ok(())
    }

    pub fn beta_schedule(&self, horizon: u64) -> BetaSchedule {
        BetaSchedule {
            start: self.beta_start,
            end: self.beta_end,
            horizon,
        }
    }
}

/// Losses and bootstrap actions of one update, for logging and for
/// checking that both critic families bootstrap through `π'`.
#[derive(Debug, Clone)]
pub struct UpdateReport {
    pub critic_loss_tar: f64,
    pub critic_loss_beh: Option<f64>,
    pub bootstrap_tar: Tensor,
    pub bootstrap_beh: Option<Tensor>,
    pub actor_updated: bool,
    pub svgd: Option<SvgdStats>,
}

/// Sizes of one policy co-training step.
#[derive(Debug, Clone, Copy)]
pub struct ActorStep {
    pub particles: usize,
    pub svgd_states: usize,
    pub beta: f64,
}

/// Deterministic policy gradient of `q_tar` into `target`, then the Stein
/// gradient of `q_beh` into `behavior` (the same network unless split).
#[allow(clippy::too_many_arguments)]
pub fn actor_update<Q1, Q2, R>(
    target: &mut PolicyNet,
    behavior: Option<&mut PolicyNet>,
    opt_pi: &mut Adam,
    opt_mu: &mut Adam,
    q_tar: &Q1,
    q_beh: &Q2,
    states: &Tensor,
    step: ActorStep,
    rng: &mut R,
) -> Result<SvgdStats>
where
    Q1: ActionValue + ?Sized,
    Q2: ActionValue + ?Sized,
    R: Rng + ?Sized,
{
    target.zero_grad();
    deterministic_policy_gradient(target, q_tar, states)?;
    opt_pi.step(target)?;

    let (rows, cols) = states.dims2().ok_or_else(|| AgentError::Config("states must be 2-D".into()))?;
    let n = step.svgd_states.min(rows);
    let sub = Tensor::matrix(n, cols, states.data()[..n * cols].to_vec()).map_err(NnError::from)?;
    let mu = match behavior {
        Some(b) => b,
        None => target,
    };
    mu.zero_grad();
    let stats = svgd_policy_gradient(mu, q_beh, &sub, step.particles, step.beta, rng)?;
    opt_mu.step(mu)?;
    Ok(stats)
}

/// Critic pair with its slowly tracking copy and optimizer.
#[derive(Debug, Clone)]
struct Critic {
    online: CriticNet,
    target: CriticNet,
    opt: Adam,
}

impl Critic {
    fn new(net: CriticNet, lr: f64) -> Self {
        Self {
            opt: Adam::new(&net, lr),
            target: net.clone(),
            online: net,
        }
    }

    /// One Adam step on the mean squared error to `y`. Returns the loss.
    fn regress(&mut self, s: &Tensor, a: &Tensor, y: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let sv = g.constant(s.clone());
        let av = g.constant(a.clone());
        let yv = g.constant(y.clone());
        let (q, bound) = self.online.forward(&mut g, sv, av)?;
        let diff = g.squared_diff(q, yv).map_err(NnError::from)?;
        let loss = g.mean(diff);
        let value = g.value(loss).item().unwrap_or(f64::NAN);
        let grads = g.backward(loss).map_err(NnError::from)?;
        self.online.zero_grad();
        bound.accumulate(&grads, &mut self.online)?;
        self.opt.step(&mut self.online)?;
        Ok(value)
    }
}

struct Batch {
    s: Tensor,
    a: Tensor,
    r: Vec<f64>,
    r_in: Vec<f64>,
    s_next: Tensor,
    not_done: Vec<f64>,
}

fn stack(rows: &[&[f64]]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, |r| r.len());
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::matrix(rows.len(), cols, data).map_err(NnError::from)?)
}

impl Batch {
    fn new(ts: &[&Transition]) -> Result<Self> {
        let s: Vec<&[f64]> = ts.iter().map(|t| t.s.as_slice()).collect();
        let a: Vec<&[f64]> = ts.iter().map(|t| t.a.as_slice()).collect();
        let s2: Vec<&[f64]> = ts.iter().map(|t| t.s_next.as_slice()).collect();
        Ok(Self {
            s: stack(&s)?,
            a: stack(&a)?,
            r: ts.iter().map(|t| t.r).collect(),
            r_in: ts.iter().map(|t| t.r_in).collect(),
            s_next: stack(&s2)?,
            not_done: ts.iter().map(|t| if t.done { 0.0 } else { 1.0 }).collect(),
        })
    }
}

fn all_finite<M: Module + ?Sized>(m: &M) -> bool {
    m.params().iter().all(|p| p.value.all_finite())
}

pub struct Agent {
    kind: AgentKind,
    cfg: AgentConfig,
    /// `f_φ`; `π(s) = f_φ(s, 0)`, and also `μ` unless split.
    pub policy: PolicyNet,
    /// The separate `μ` network of the split ablation.
    pub behavior: Option<PolicyNet>,
    policy_target: PolicyNet,
    opt_pi: Adam,
    opt_mu: Adam,
    q_tar: Vec<Critic>,
    q_beh: Vec<Critic>,
    kernel: KernelSpec,
    updates: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        kind: AgentKind,
        cfg: AgentConfig,
        state_dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let noise_dim = if kind.is_adac() { cfg.noise_dim } else { 0 };
        let policy = PolicyNet::new(state_dim, noise_dim, &cfg.hidden, low.clone(), high, rng);
        let behavior = (kind.is_adac() && cfg.split_networks).then(|| policy.clone());
        let twins = if kind.is_td3() { 2 } else { 1 };
        let q_tar: Vec<Critic> = (0..twins)
            .map(|_| Critic::new(CriticNet::new(state_dim, low.len(), &cfg.hidden, rng), cfg.lr_critic))
            .collect();
        let q_beh = if kind.is_adac() { q_tar.clone() } else { Vec::new() };
        let opt_pi = Adam::new(&policy, cfg.lr_target_policy);
        let opt_mu = Adam::new(behavior.as_ref().unwrap_or(&policy), cfg.lr_behavior_policy);
        let kernel = KernelSpec::new(low.len(), cfg.particles)?;
        Ok(Self {
            kind,
            policy_target: policy.clone(),
            policy,
            behavior,
            opt_pi,
            opt_mu,
            q_tar,
            q_beh,
            kernel,
            updates: 0,
            cfg,
        })
    }

    pub fn for_env<R: Rng + ?Sized>(
        kind: AgentKind,
        cfg: AgentConfig,
        env: &dyn Environment,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(kind, cfg, env.observation_dim(), env.action_low(), env.action_high(), rng)
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn policy_target(&self) -> &PolicyNet {
        &self.policy_target
    }

    /// Online target-reward critics (one, or two for TD3 kinds).
    pub fn target_critics(&self) -> Vec<&CriticNet> {
        self.q_tar.iter().map(|c| &c.online).collect()
    }

    /// Online augmented-reward critics; empty for the baselines.
    pub fn behavior_critics(&self) -> Vec<&CriticNet> {
        self.q_beh.iter().map(|c| &c.online).collect()
    }

    fn behavior_net(&self) -> &PolicyNet {
        self.behavior.as_ref().unwrap_or(&self.policy)
    }

    /// `π(s) = f(s, 0)`.
    pub fn act_target(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.policy.act(s, &vec![0.0; self.policy.noise_dim()])?)
    }

    /// Exploration action: the Stein sampler plus kernel noise for ADAC,
    /// `π(s)` plus clipped-box Gaussian noise for the baselines.
    pub fn act_behavior<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if self.kind.is_adac() {
            return Ok(sample_behavior_action(self.behavior_net(), s, &self.kernel, rng)?);
        }
        let a = self.act_target(s)?;
        let p = &self.policy;
        Ok(a.iter()
            .zip(p.low().iter().zip(p.high()))
            .map(|(x, (lo, hi))| {
                let z: f64 = StandardNormal.sample(rng);
                (x + self.cfg.exploration_noise * 0.5 * (hi - lo) * z).clamp(*lo, *hi)
            })
            .collect())
    }

    /// Mean ‖E_ξ μ(s, ξ) − π(s)‖ over `states`.
    pub fn policy_bias<R: Rng + ?Sized>(&self, states: &Tensor, n_samples: usize, rng: &mut R) -> Result<f64> {
        if !self.kind.is_adac() {
            return Ok(0.0);
        }
        policy_bias_between(&self.policy, self.behavior_net(), states, n_samples, rng)
    }

    /// `π'(s')`, plus clipped smoothing noise for TD3 kinds.
    fn bootstrap_actions<R: Rng + ?Sized>(&self, s_next: &Tensor, rng: &mut R) -> Result<Tensor> {
        let mut a = self.policy_target.target_action(s_next)?;
        if self.kind.is_td3() {
            let p = &self.policy_target;
            let d = p.action_dim();
            for (k, v) in a.data_mut().iter_mut().enumerate() {
                let (lo, hi) = (p.low()[k % d], p.high()[k % d]);
                let half = 0.5 * (hi - lo);
                let z: f64 = StandardNormal.sample(rng);
                let eps = (self.cfg.target_noise * half * z)
                    .clamp(-self.cfg.noise_clip * half, self.cfg.noise_clip * half);
                *v = (*v + eps).clamp(lo, hi);
            }
        }
        Ok(a)
    }

    fn targets(critics: &[Critic], s_next: &Tensor, a_next: &Tensor, reward: &[f64], not_done: &[f64], gamma: f64) -> Result<Tensor> {
        let mut next = critics[0].target.infer(s_next, a_next)?;
        for c in &critics[1..] {
            for (m, v) in next.iter_mut().zip(c.target.infer(s_next, a_next)?) {
                *m = m.min(v);
            }
        }
        let y: Vec<f64> = (0..reward.len())
            .map(|i| reward[i] + gamma * not_done[i] * next[i])
            .collect();
        Ok(Tensor::matrix(y.len(), 1, y).map_err(NnError::from)?)
    }

    /// One training call on a minibatch: critic regression, then (every
    /// update for DDPG kinds, every `policy_delay` for TD3 kinds) the actor
    /// step and the soft target updates.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[&Transition], beta: f64, rng: &mut R) -> Result<UpdateReport> {
        let b = Batch::new(batch)?;
        let gamma = self.cfg.gamma;
        let a_next = self.bootstrap_actions(&b.s_next, rng)?;

        let augmented: Vec<f64> = b.r.iter().zip(&b.r_in).map(|(r, ri)| r + ri).collect();
        let base = if self.kind.is_adac() { &b.r } else { &augmented };
        let y = Self::targets(&self.q_tar, &b.s_next, &a_next, base, &b.not_done, gamma)?;
        let mut loss_tar = 0.0;
        for c in &mut self.q_tar {
            loss_tar += c.regress(&b.s, &b.a, &y)?;
        }
        loss_tar /= self.q_tar.len() as f64;

        let mut loss_beh = None;
        if self.kind.is_adac() {
            let y2 = Self::targets(&self.q_beh, &b.s_next, &a_next, &augmented, &b.not_done, gamma)?;
            let mut l = 0.0;
            for c in &mut self.q_beh {
                l += c.regress(&b.s, &b.a, &y2)?;
            }
            loss_beh = Some(l / self.q_beh.len() as f64);
        }
        self.updates += 1;
        let update = self.updates;
        if !loss_tar.is_finite() || loss_beh.is_some_and(|l| !l.is_finite()) {
            return Err(AgentError::NonFinite {
                update,
                what: "critic loss".into(),
            });
        }

        let due = !self.kind.is_td3() || update % self.cfg.policy_delay as u64 == 0;
        let mut svgd = None;
        if due {
            if self.kind.is_adac() {
                let step = ActorStep {
                    particles: self.cfg.particles,
                    svgd_states: self.cfg.svgd_states,
                    beta,
                };
                svgd = Some(actor_update(
                    &mut self.policy,
                    self.behavior.as_mut(),
                    &mut self.opt_pi,
                    &mut self.opt_mu,
                    &self.q_tar[0].online,
                    &self.q_beh[0].online,
                    &b.s,
                    step,
                    rng,
                )?);
            } else {
                self.policy.zero_grad();
                deterministic_policy_gradient(&mut self.policy, &self.q_tar[0].online, &b.s)?;
                self.opt_pi.step(&mut self.policy)?;
            }
            let tau = self.cfg.tau;
            soft_update(&mut self.policy_target, &self.policy, tau)?;
            for c in self.q_tar.iter_mut().chain(self.q_beh.iter_mut()) {
                soft_update(&mut c.target, &c.online, tau)?;
            }
            let finite = all_finite(&self.policy) && self.behavior.as_ref().is_none_or(all_finite);
            if !finite {
                return Err(AgentError::NonFinite {
                    update,
                    what: "policy parameters".into(),
                });
            }
        }
        Ok(UpdateReport {
            critic_loss_tar: loss_tar,
            critic_loss_beh: loss_beh,
            bootstrap_beh: self.kind.is_adac().then(|| a_next.clone()),
            bootstrap_tar: a_next,
            actor_updated: due,
            svgd,
        })
    }
}

/// Mean over `states` of ‖(1/n) Σ_ξ μ(s, ξ) − π(s, 0)‖.
pub fn policy_bias_between<R: Rng + ?Sized>(
    target: &PolicyNet,
    behavior: &PolicyNet,
    states: &Tensor,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let (m, _) = states.dims2().ok_or_else(|| AgentError::Config("states must be 2-D".into()))?;
    if m == 0 || n_samples == 0 {
        return Ok(0.0);
    }
    let d = target.action_dim();
    let pi = target.target_action(states)?;
    let xi = standard_normal(m * n_samples, behavior.noise_dim(), rng);
    let mu = behavior.infer(&repeat_rows(states, n_samples), &xi)?;
    let mut total = 0.0;
    for i in 0..m {
        let mut norm2 = 0.0;
        for c in 0..d {
            let mean: f64 = (0..n_samples).map(|l| mu.row(i * n_samples + l)[c]).sum::<f64>() / n_samples as f64;
            norm2 += (mean - pi.row(i)[c]).powi(2);
        }
        total += norm2.sqrt();
    }
    Ok(total / m as f64)
}

/// Same as [`policy_bias_between`] with one network in both roles.
pub fn policy_bias<R: Rng + ?Sized>(policy: &PolicyNet, states: &Tensor, n_samples: usize, rng: &mut R) -> Result<f64> {
    policy_bias_between(policy, policy, states, n_samples, rng)
}

/// One CSV row. Episode rows carry `behavior_return`; evaluation rows carry
/// `eval_return` and `policy_bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub episode: u64,
    pub behavior_return: Option<f64>,
    pub eval_return: Option<f64>,
    pub policy_bias: Option<f64>,
    pub critic_loss_tar: Option<f64>,
    pub critic_loss_beh: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

pub const RUNLOG_HEADER: &str =
    "step,episode,behavior_return,eval_return,policy_bias,critic_loss_tar,critic_loss_beh,beta";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUNLOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.step,
                r.episode,
                cell(r.behavior_return),
                cell(r.eval_return),
                cell(r.policy_bias),
                cell(r.critic_loss_tar),
                cell(r.critic_loss_beh),
                cell(r.beta)
            );
        }
        out
    }

    /// `(step, eval_return)` pairs in order.
    pub fn evaluations(&self) -> Vec<(u64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.eval_return.map(|e| (r.step, e)))
            .collect()
    }

    pub fn final_eval(&self) -> Option<f64> {
        self.evaluations().last().map(|e| e.1)
    }

    /// Mean of the last `n` evaluation returns.
    pub fn tail_eval(&self, n: usize) -> Option<f64> {
        let evals = self.evaluations();
        let tail = &evals[evals.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|e| e.1).sum::<f64>() / tail.len() as f64)
    }

    /// Mean policy bias over evaluation rows after `from_step`.
    pub fn mean_policy_bias(&self, from_step: u64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.step >= from_step)
            .filter_map(|r| r.policy_bias)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Mean undiscounted return of `π` over `episodes` fresh episodes.
pub fn evaluate<R: Rng + ?Sized>(agent: &Agent, env: &mut dyn Environment, episodes: usize, rng: &mut R) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = env.reset(rng.random());
        loop {
            let step = env.step(&agent.act_target(&s)?)?;
            total += step.reward;
            if step.done {
                break;
            }
            s = step.observation;
        }
    }
    Ok(total / episodes as f64)
}

/// Independent streams derived from one seed.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;

/// The collection/update loop. Evaluates `π` at step 0 and every
/// `eval_every` steps; logs each finished behavior episode.
pub fn train(
    env: &mut dyn Environment,
    agent: &mut Agent,
    intrinsic: Option<&mut dyn IntrinsicReward>,
    total_steps: u64,
    seed: u64,
) -> Result<RunLog> {
    train_until(env, agent, intrinsic, total_steps, seed, &|_| false)
}

/// [`train`], ending early after the first evaluation row for which `stop`
/// holds. The rows up to that point match those of the full run.
pub fn train_until(
    env: &mut dyn Environment,
    agent: &mut Agent,
    mut intrinsic: Option<&mut dyn IntrinsicReward>,
    total_steps: u64,
    seed: u64,
    stop: &dyn Fn(&LogRow) -> bool,
) -> Result<RunLog> {
    let cfg = agent.config().clone();
    let schedule = cfg.beta_schedule(total_steps);
    let mut rng = stream(seed, STREAM_TRAIN);
    let mut eval_rng = stream(seed, STREAM_EVAL);
    let mut eval_env = envs::make(env.id())?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut log = RunLog::default();

    let mut losses: (Option<f64>, Option<f64>) = (None, None);
    let mut episode = 0u64;
    let mut ep_return = 0.0;
    let mut s = env.reset(rng.random());

    let mut evaluate_now = |agent: &Agent, buffer: &ReplayBuffer, step: u64, episode: u64, losses: (Option<f64>, Option<f64>), s: &[f64]| -> Result<LogRow> {
        let ret = evaluate(agent, eval_env.as_mut(), cfg.eval_episodes, &mut eval_rng)?;
        let states = if buffer.is_empty() {
            stack(&[s])?
        } else {
            let picks = buffer.sample(cfg.bias_states, &mut eval_rng);
            stack(&picks.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>())?
        };
        let bias = agent.kind().is_adac().then(|| agent.policy_bias(&states, cfg.bias_samples, &mut eval_rng)).transpose()?;
        Ok(LogRow {
            step,
            episode,
            behavior_return: None,
            eval_return: Some(ret),
            policy_bias: bias,
            critic_loss_tar: losses.0,
            critic_loss_beh: losses.1,
            beta: Some(schedule.value(step)),
        })
    };

    log.rows.push(evaluate_now(agent, &buffer, 0, 0, losses, &s)?);
    if stop(&log.rows[0]) {
        return Ok(log);
    }
    for t in 0..total_steps {
        let beta = schedule.value(t);
        let a = agent.act_behavior(&s, &mut rng)?;
        let step = env.step(&a)?;
        let mut tr = Transition {
            s: s.clone(),
            a,
            r: step.reward,
            r_in: 0.0,
            s_next: step.observation.clone(),
            done: step.terminal,
        };
        if let Some(ir) = intrinsic.as_deref_mut() {
            ir.update(&tr);
            tr.r_in = ir.score(&tr);
        }
        buffer.push(tr);
        ep_return += step.reward;

        if t >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, &mut rng);
            let report = agent.update(&batch, beta, &mut rng)?;
            losses = (Some(report.critic_loss_tar), report.critic_loss_beh);
        }

        if step.done {
            episode += 1;
            log.rows.push(LogRow {
                step: t + 1,
                episode,
                behavior_return: Some(ep_return),
                eval_return: None,
                policy_bias: None,
                critic_loss_tar: losses.0,
                critic_loss_beh: losses.1,
                beta: Some(beta),
            });
            ep_return = 0.0;
            s = env.reset(rng.random());
        } else {
            s = step.observation;
        }
        if (t + 1) % cfg.eval_every == 0 {
            let row = evaluate_now(agent, &buffer, t + 1, episode, losses, &s)?;
            let done = stop(&row);
            log.rows.push(row);
            if done {
                break;
            }
        }
    }
    Ok(log)
}

/// Everything that determines a run besides its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub env: String,
    pub agent: AgentKind,
    pub config: AgentConfig,
    pub steps: u64,
    /// `κ` of the count bonus, or `None` for no intrinsic reward.
    pub intrinsic_kappa: Option<f64>,
}

impl Experiment {
    pub fn run(&self, seed: u64) -> Result<RunLog> {
        self.run_until(seed, &|_| false)
    }

    /// [`Experiment::run`] stopped by [`train_until`].
    pub fn run_until(&self, seed: u64, stop: &dyn Fn(&LogRow) -> bool) -> Result<RunLog> {
        let mut env = envs::make(&self.env)?;
        let mut init = stream(seed, 0);
        let mut agent = Agent::for_env(self.agent, self.config.clone(), env.as_ref(), &mut init)?;
        let mut bonus = self
            .intrinsic_kappa
            .map(|k| CountIntrinsic::for_env(env.as_ref(), k))
            .transpose()?;
        let ir = bonus.as_mut().map(|b| b as &mut dyn IntrinsicReward);
        train_until(env.as_mut(), &mut agent, ir, self.steps, seed, stop)
    }
}
