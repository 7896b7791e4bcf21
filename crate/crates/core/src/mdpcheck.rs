//! Exact tabular checks of the critic-bounding bounds.
//!
//! Q-tables are flattened to `S·A` vectors indexed `s·A + a`. For a policy
//! `π`, `P^π` is the `S·A × S·A` matrix taking `(s, a)` to
//! `(s', a')` with probability `P(s' | s, a) π(a' | s')`, so every resolvent
//! `(I − γP^π)^{-1}` is a literal matrix inverse, applied by LU solves.
//!
//! Occupancies are normalized, `ρ_π = (1 − γ)(I − γ P^πᵀ)^{-1} β₀`, so
//! expectations `E_ρ[x] = ρ · x` are over probability distributions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("array {what} has length {got}, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("row {row} of {what} is not a probability distribution (sum {sum})")]
    NotStochastic {
        what: &'static str,
        row: usize,
        sum: f64,
    },
    #[error("discount {0} outside [0, 1)")]
    Discount(f64),
    #[error("augmented reward is below the base reward at state {state}, action {action}")]
    RewardOrder { state: usize, action: usize },
    #[error("linear system is singular")]
    Singular,
}

pub type Result<T> = std::result::Result<T, MdpError>;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Tabular MDP with a base reward `R`, an augmented reward `R'`, and an
/// initial state-action distribution `β₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[(s·A + a)·S + s'] = P(s' | s, a)`
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub r_prime: Vec<f64>,
    pub gamma: f64,
    pub beta0: Vec<f64>,
}

fn check_distribution(what: &'static str, row: usize, xs: &[f64]) -> Result<()> {
    let sum: f64 = xs.iter().sum();
    if xs.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(MdpError::NotStochastic { what, row, sum });
    }
    Ok(())
}

fn check_len(what: &'static str, xs: &[f64], expected: usize) -> Result<()> {
    if xs.len() != expected {
        return Err(MdpError::Shape {
            what,
            expected,
            got: xs.len(),
        });
    }
    Ok(())
}

impl FiniteMdp {
    /// Validates shapes, stochasticity and the discount. The reward order
    /// `R' ≥ R` is a precondition of the bound checks, not of the MDP.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        r_prime: Vec<f64>,
        gamma: f64,
        beta0: Vec<f64>,
    ) -> Result<Self> {
        let sa = n_states * n_actions;
        check_len("P", &p, sa * n_states)?;
        check_len("R", &r, sa)?;
        check_len("R'", &r_prime, sa)?;
        check_len("beta0", &beta0, sa)?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::Discount(gamma));
        }
        for row in 0..sa {
            check_distribution("P", row, &p[row * n_states..(row + 1) * n_states])?;
        }
        check_distribution("beta0", 0, &beta0)?;
        Ok(Self {
            n_states,
            n_actions,
            p,
            r,
            r_prime,
            gamma,
            beta0,
        })
    }

    pub fn sa(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let row = s * self.n_actions + a;
        &self.p[row * self.n_states..(row + 1) * self.n_states]
    }

    pub fn check_reward_order(&self) -> Result<()> {
        for (i, (r, rp)) in self.r.iter().zip(&self.r_prime).enumerate() {
            if rp < r {
                return Err(MdpError::RewardOrder {
                    state: i / self.n_actions,
                    action: i % self.n_actions,
                });
            }
        }
        Ok(())
    }

    /// `P^π` as a dense `S·A × S·A` matrix.
    pub fn policy_matrix(&self, pi: &Policy) -> Result<DMatrix<f64>> {
        pi.check(self)?;
        let (na, ns) = (self.n_actions, self.n_states);
        let sa = self.sa();
        let mut m = DMatrix::zeros(sa, sa);
        for row in 0..sa {
            let probs = &self.p[row * ns..(row + 1) * ns];
            for (s2, &p) in probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    m[(row, s2 * na + a2)] += p * pi.prob(s2, a2);
                }
            }
        }
        Ok(m)
    }

    /// `I − γ P^π`.
    fn resolvent_system(&self, pi: &Policy) -> Result<DMatrix<f64>> {
        let p = self.policy_matrix(pi)?;
        Ok(DMatrix::identity(self.sa(), self.sa()) - p * self.gamma)
    }

    /// `(I − γP^π)^{-1} x`.
    pub fn resolvent_apply(&self, pi: &Policy, x: &[f64]) -> Result<Vec<f64>> {
        solve(self.resolvent_system(pi)?, x)
    }
}

fn solve(a: DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    a.lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or(MdpError::Singular)
}

/// A state-to-action-distribution table, `S·A` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_len("policy", &probs, n_states * n_actions)?;
        for s in 0..n_states {
            check_distribution("policy", s, &probs[s * n_actions..(s + 1) * n_actions])?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        Self {
            n_states: actions.len(),
            n_actions,
            probs,
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// The action of a deterministic policy, or `None` for mixed rows.
    pub fn action(&self, s: usize) -> Option<usize> {
        let row = &self.probs[s * self.n_actions..(s + 1) * self.n_actions];
        row.iter().position(|&p| p == 1.0)
    }

    fn check(&self, mdp: &FiniteMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(MdpError::Shape {
                what: "policy",
                expected: mdp.sa(),
                got: self.probs.len(),
            });
        }
        Ok(())
    }
}

/// `(T^π_R Q)(s,a) = R(s,a) + γ Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') Q(s',a')`.
pub fn bellman_policy(q: &[f64], pi: &Policy, r: &[f64], mdp: &FiniteMdp) -> Result<Vec<f64>> {
    pi.check(mdp)?;
    check_len("Q", q, mdp.sa())?;
    check_len("R", r, mdp.sa())?;
    for s in 0..pi.n_states {
        check_distribution(
            "policy",
            s,
            &pi.probs[s * pi.n_actions..(s + 1) * pi.n_actions],
        )?;
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let v: Vec<f64> = (0..ns)
        .map(|s| (0..na).map(|a| pi.prob(s, a) * q[s * na + a]).sum())
        .collect();
    Ok(backup(mdp, r, &v))
}

/// `(T^max_R Q)(s,a) = R(s,a) + γ Σ_{s'} P(s'|s,a) max_{a'} Q(s',a')`.
pub fn bellman_max(q: &[f64], r: &[f64], mdp: &FiniteMdp) -> Result<Vec<f64>> {
    check_len("Q", q, mdp.sa())?;
    check_len("R", r, mdp.sa())?;
    let na = mdp.n_actions;
    let v: Vec<f64> = (0..mdp.n_states)
        .map(|s| q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(backup(mdp, r, &v))
}

fn backup(mdp: &FiniteMdp, r: &[f64], v: &[f64]) -> Vec<f64> {
    (0..mdp.sa())
        .map(|row| {
            let p = &mdp.p[row * mdp.n_states..(row + 1) * mdp.n_states];
            r[row] + mdp.gamma * p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Exact `Q` with `Q = R + γ P^π Q`, by LU solve.
pub fn fixed_point(pi: &Policy, r: &[f64], mdp: &FiniteMdp) -> Result<Vec<f64>> {
    check_len("R", r, mdp.sa())?;
    mdp.resolvent_apply(pi, r)
}

/// Normalized discounted state-action occupancy from `β₀`.
pub fn occupancy(pi: &Policy, beta0: &[f64], mdp: &FiniteMdp) -> Result<Vec<f64>> {
    check_len("beta0", beta0, mdp.sa())?;
    let sys = mdp.resolvent_system(pi)?.transpose();
    let x = solve(sys, beta0)?;
    Ok(x.iter().map(|v| (1.0 - mdp.gamma) * v).collect())
}

/// Per-state argmax; ties go to the lowest action index.
pub fn greedy(q: &[f64], n_actions: usize) -> Policy {
    let actions: Vec<usize> = q
        .chunks_exact(n_actions)
        .map(|row| {
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::deterministic(n_actions, &actions)
}

/// Policy iteration to the optimal `Q` of reward `r`.
pub fn optimal_q(r: &[f64], mdp: &FiniteMdp) -> Result<Vec<f64>> {
    let na = mdp.n_actions;
    let mut actions = vec![0usize; mdp.n_states];
    for _ in 0..10_000 {
        let q = fixed_point(&Policy::deterministic(na, &actions), r, mdp)?;
        let mut changed = false;
        for (s, cur) in actions.iter_mut().enumerate() {
            let row = &q[s * na..(s + 1) * na];
            let best = greedy(row, na).action(0).unwrap_or(0);
            let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            if row[best] > row[*cur] + 1e-12 * scale {
                *cur = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(q);
        }
    }
    fixed_point(&Policy::deterministic(na, &actions), r, mdp)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How the table playing `Q^π_R` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedConstruction {
    /// The fixed point of `T^π_R` for a `π` greedy with respect to it,
    /// found by policy iteration.
    FixedPoint,
    /// An arbitrary table, uniform on `[0, max R / (1 − γ)]`.
    Arbitrary,
}

pub fn seed_q<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    construction: SeedConstruction,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match construction {
        SeedConstruction::FixedPoint => optimal_q(&mdp.r, mdp),
        SeedConstruction::Arbitrary => {
            let hi = mdp.r.iter().copied().fold(0.0_f64, f64::max) / (1.0 - mdp.gamma);
            Ok((0..mdp.sa()).map(|_| rng.random_range(0.0..=hi.max(1e-9))).collect())
        }
    }
}

/// Both sides of the two lower bounds for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub target_policy: Vec<usize>,
    pub behavior_policy: Vec<usize>,
    /// `E_ρπ[T^max_R Q − Q]`
    pub gap_pi: f64,
    /// `E_ρμ[T^max_R Q − Q]`
    pub gap_mu: f64,
    /// `E_ρπ[R]`
    pub reward_pi: f64,
    /// `E_ρμ[R]`
    pub reward_mu: f64,
    /// `E_ρπ[R − R']`
    pub reward_gap_pi: f64,
    /// `gap_pi − (gap_mu + reward_pi − reward_mu)`
    pub stability_margin: f64,
    /// `gap_mu − (gap_pi + reward_gap_pi)`
    pub effectiveness_margin: f64,
    /// Stability margin with the reward difference reversed:
    /// `gap_pi − (gap_mu + reward_mu − reward_pi)`.
    pub stability_margin_reversed: f64,
    pub stability_holds: bool,
    pub effectiveness_holds: bool,
}

impl BoundsReport {
    pub fn holds(&self) -> bool {
        self.stability_holds && self.effectiveness_holds
    }
}

/// Evaluates both bounds with `Q := q_seed`, `π = greedy(q_seed)`,
/// `μ = greedy(Q^π_{R'})` and `Q^π_{R'}` the fixed point of `T^π_{R'}`.
pub fn verify_theorem1(mdp: &FiniteMdp, q_seed: &[f64], tol: f64) -> Result<BoundsReport> {
    mdp.check_reward_order()?;
    check_len("Q", q_seed, mdp.sa())?;
    let na = mdp.n_actions;
    let pi = greedy(q_seed, na);
    let q_pi_rp = fixed_point(&pi, &mdp.r_prime, mdp)?;
    let mu = greedy(&q_pi_rp, na);
    let rho_pi = occupancy(&pi, &mdp.beta0, mdp)?;
    let rho_mu = occupancy(&mu, &mdp.beta0, mdp)?;

    let tq = bellman_max(q_seed, &mdp.r, mdp)?;
    let gap: Vec<f64> = tq.iter().zip(q_seed).map(|(t, q)| t - q).collect();
    let dr: Vec<f64> = mdp.r.iter().zip(&mdp.r_prime).map(|(r, rp)| r - rp).collect();

    let gap_pi = dot(&rho_pi, &gap);
    let gap_mu = dot(&rho_mu, &gap);
    let reward_pi = dot(&rho_pi, &mdp.r);
    let reward_mu = dot(&rho_mu, &mdp.r);
    let reward_gap_pi = dot(&rho_pi, &dr);
    let stability_margin = gap_pi - (gap_mu + reward_pi - reward_mu);
    let effectiveness_margin = gap_mu - (gap_pi + reward_gap_pi);
    let actions = |p: &Policy| (0..mdp.n_states).map(|s| p.action(s).unwrap_or(0)).collect();
    Ok(BoundsReport {
        target_policy: actions(&pi),
        behavior_policy: actions(&mu),
        gap_pi,
        gap_mu,
        reward_pi,
        reward_mu,
        reward_gap_pi,
        stability_margin,
        effectiveness_margin,
        stability_margin_reversed: gap_pi - (gap_mu + reward_mu - reward_pi),
        stability_holds: stability_margin >= -tol,
        effectiveness_holds: effectiveness_margin >= -tol,
    })
}

/// Which table plays the primed critic in the decomposition identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompositionReading {
    /// Fixed point of `T^μ_{R'}`.
    BehaviorFixedPoint,
    /// Fixed point of `T^π_{R'}`.
    TargetFixedPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub max_discrepancy: f64,
}

/// Evaluates both sides of
/// `Q' − Q^π_* = [(I−γP^μ)^{-1} − (I−γP^π)^{-1}](T^max_R Q − Q)
///              − (I−γP^μ)^{-1}(T^max_R Q − T^μ_{R'} Q)`
/// with `Q := q_seed` and `Q^π_*` the fixed point of `T^π_R`.
pub fn verify_lemma1(mdp: &FiniteMdp, q_seed: &[f64], reading: DecompositionReading) -> Result<DecompositionReport> {
    check_len("Q", q_seed, mdp.sa())?;
    let na = mdp.n_actions;
    let pi = greedy(q_seed, na);
    let q_pi_rp = fixed_point(&pi, &mdp.r_prime, mdp)?;
    let mu = greedy(&q_pi_rp, na);
    let q_prime = match reading {
        DecompositionReading::BehaviorFixedPoint => fixed_point(&mu, &mdp.r_prime, mdp)?,
        DecompositionReading::TargetFixedPoint => q_pi_rp,
    };
    let q_star = fixed_point(&pi, &mdp.r, mdp)?;
    let lhs: Vec<f64> = q_prime.iter().zip(&q_star).map(|(a, b)| a - b).collect();

    let tmax = bellman_max(q_seed, &mdp.r, mdp)?;
    let gap: Vec<f64> = tmax.iter().zip(q_seed).map(|(t, q)| t - q).collect();
    let tmu = bellman_policy(q_seed, &mu, &mdp.r_prime, mdp)?;
    let cross: Vec<f64> = tmax.iter().zip(&tmu).map(|(a, b)| a - b).collect();
    let a = mdp.resolvent_apply(&mu, &gap)?;
    let b = mdp.resolvent_apply(&pi, &gap)?;
    let c = mdp.resolvent_apply(&mu, &cross)?;
    let rhs: Vec<f64> = (0..mdp.sa()).map(|i| a[i] - b[i] - c[i]).collect();
    let max_discrepancy = lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r).abs())
        .fold(0.0, f64::max);
    Ok(DecompositionReport {
        lhs,
        rhs,
        max_discrepancy,
    })
}

fn dirichlet1<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let xs: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = xs.iter().sum();
    let mut out: Vec<f64> = xs.iter().map(|x| x / sum).collect();
    // absorb rounding so the row sums to one within the validation tolerance
    let drift: f64 = 1.0 - out.iter().sum::<f64>();
    out[0] += drift;
    out
}

/// Random instance: `S ∈ [2, max_states]`, `A ∈ [2, max_actions]`,
/// `γ ~ U[0.5, 0.95]`, Dirichlet(1) transition rows and `β₀`,
/// `R ~ U[0, 1]`, `R' = R + U[0, 0.5]`.
pub fn random_mdp<R: Rng + ?Sized>(max_states: usize, max_actions: usize, rng: &mut R) -> FiniteMdp {
    let ns = rng.random_range(2..=max_states.max(2));
    let na = rng.random_range(2..=max_actions.max(2));
    let gamma = rng.random_range(0.5..=0.95);
    let sa = ns * na;
    let mut p = Vec::with_capacity(sa * ns);
    for _ in 0..sa {
        p.extend(dirichlet1(ns, rng));
    }
    let r: Vec<f64> = (0..sa).map(|_| rng.random_range(0.0..1.0)).collect();
    let r_prime = r.iter().map(|x| x + rng.random_range(0.0..0.5)).collect();
    let beta0 = dirichlet1(sa, rng);
    FiniteMdp::new(ns, na, p, r, r_prime, gamma, beta0).expect("generator emits valid MDPs")
}
