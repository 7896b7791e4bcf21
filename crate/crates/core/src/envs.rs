//! Seeded classic-control tasks with continuous actions and sparse or
//! effort-penalized rewards.
//!
//! Dynamics follow the published Gym classic-control code; reward
//! functions are exposed separately so they can be tested in isolation.
//!
//! | id | observation | action | T_max |
//! |----|-------------|--------|-------|
//! | `cartpole-mod` | x, ẋ, θ, θ̇ | push in [-1, 1] | 200 |
//! | `pendulum-sparse` | cos θ, sin θ, θ̇ | torque in [-2, 2] | 200 |
//! | `acrobot-cont` | cos/sin of both links, both velocities | [-1, 1] | 500 |
//! | `mountaincar-cont` | position, velocity | force in [-1, 1] | 999 |
//! | `cartpole-swingup-sparse` | x, ẋ, cos θ, sin θ, θ̇ | force in [-1, 1] | 200 |

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment id {0:?}")]
    Unknown(String),
    #[error("step called on a finished episode; call reset first")]
    EpisodeOver,
    #[error("expected a {expected}-dimensional action, got {got}")]
    ActionDim { expected: usize, got: usize },
    #[error("non-finite action {0}")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, EnvError>;

pub const ENV_IDS: [&str; 5] = [
    "cartpole-mod",
    "pendulum-sparse",
    "acrobot-cont",
    "mountaincar-cont",
    "cartpole-swingup-sparse",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The episode is over, by termination or by the step limit.
    pub done: bool,
    /// The episode reached a terminal state; a time-limit cut is not terminal.
    pub terminal: bool,
}

pub trait Environment {
    fn id(&self) -> &'static str;
    fn observation_dim(&self) -> usize;
    fn action_low(&self) -> Vec<f64>;
    fn action_high(&self) -> Vec<f64>;
    /// Nominal observation box, used to discretize states.
    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn max_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    fn steps(&self) -> usize;
    /// Number of actions clipped into the action box so far.
    fn clipped_actions(&self) -> u64;

    fn action_dim(&self) -> usize {
        self.action_low().len()
    }
}

pub fn make(id: &str) -> Result<Box<dyn Environment>> {
    Ok(match id {
        "cartpole-mod" => Box::new(CartPoleMod::new()),
        "pendulum-sparse" => Box::new(PendulumSparse::new()),
        "acrobot-cont" => Box::new(AcrobotCont::new()),
        "mountaincar-cont" => Box::new(MountainCarCont::new()),
        "cartpole-swingup-sparse" => Box::new(CartPoleSwingUpSparse::new()),
        other => return Err(EnvError::Unknown(other.to_string())),
    })
}

/// Shared episode bookkeeping.
#[derive(Debug, Clone)]
struct Episode {
    rng: ChaCha8Rng,
    t: usize,
    done: bool,
    clipped: u64,
}

impl Episode {
    fn new() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            done: true,
            clipped: 0,
        }
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.done = false;
    }

    fn begin_step(&mut self, action: &[f64], low: f64, high: f64) -> Result<f64> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action.len() != 1 {
            return Err(EnvError::ActionDim {
                expected: 1,
                got: action.len(),
            });
        }
        let a = action[0];
        if !a.is_finite() {
            return Err(EnvError::NonFinite(a));
        }
        let c = a.clamp(low, high);
        if c != a {
            self.clipped += 1;
        }
        self.t += 1;
        Ok(c)
    }

    fn finish(&mut self, terminal: bool, max: usize) -> (bool, bool) {
        let done = terminal || self.t >= max;
        self.done = done;
        (done, terminal)
    }
}

macro_rules! episode_accessors {
    () => {
        fn steps(&self) -> usize {
            self.ep.t
        }
        fn clipped_actions(&self) -> u64 {
            self.ep.clipped
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Push {
    Left,
    Right,
    /// Direction decided by a fair coin.
    Random,
}

/// Discretization of the continuous cart-pole action.
pub fn cartpole_push(a: f64) -> Push {
    if a < -0.5 {
        Push::Left
    } else if a > 0.5 {
        Push::Right
    } else {
        Push::Random
    }
}

/// Effort-penalized cart-pole reward. `ended` is a pole or cart failure.
pub fn cartpole_mod_reward(a: f64, ended: bool) -> f64 {
    -0.1 * a.abs() - 0.05 * a * a + if ended { -1.0 } else { 0.1 }
}

/// Cart-pole balancing with a single continuous action.
#[derive(Debug, Clone)]
pub struct CartPoleMod {
    state: [f64; 4],
    ep: Episode,
}

impl CartPoleMod {
    const GRAVITY: f64 = 9.8;
    const MASS_CART: f64 = 1.0;
    const MASS_POLE: f64 = 0.1;
    const HALF_LENGTH: f64 = 0.5;
    const FORCE: f64 = 10.0;
    const TAU: f64 = 0.02;
    const X_LIMIT: f64 = 2.4;
    const THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;

    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            ep: Episode::new(),
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// One Euler step of the frictionless cart-pole under `force`.
    pub fn dynamics(s: [f64; 4], force: f64) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = s;
        let total = Self::MASS_CART + Self::MASS_POLE;
        let pml = Self::MASS_POLE * Self::HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pml * theta_dot * theta_dot * sin) / total;
        let theta_acc = (Self::GRAVITY * sin - cos * temp)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::MASS_POLE * cos * cos / total));
        let x_acc = temp - pml * theta_acc * cos / total;
        [
            x + Self::TAU * x_dot,
            x_dot + Self::TAU * x_acc,
            theta + Self::TAU * theta_dot,
            theta_dot + Self::TAU * theta_acc,
        ]
    }
}

impl Default for CartPoleMod {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPoleMod {
    fn id(&self) -> &'static str {
        "cartpole-mod"
    }
    fn observation_dim(&self) -> usize {
        4
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-Self::X_LIMIT, -3.0, -Self::THETA_LIMIT, -3.5],
            vec![Self::X_LIMIT, 3.0, Self::THETA_LIMIT, 3.5],
        )
    }
    fn max_steps(&self) -> usize {
        200
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.ep.reset(seed);
        for v in &mut self.state {
            *v = self.ep.rng.random_range(-0.05..0.05);
        }
        self.state.to_vec()
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = self.ep.begin_step(action, -1.0, 1.0)?;
        let right = match cartpole_push(a) {
            Push::Left => false,
            Push::Right => true,
            Push::Random => self.ep.rng.random_bool(0.5),
        };
        let force = if right { Self::FORCE } else { -Self::FORCE };
        self.state = Self::dynamics(self.state, force);
        let [x, _, theta, _] = self.state;
        let failed = x.abs() > Self::X_LIMIT || theta.abs() > Self::THETA_LIMIT;
        let (done, terminal) = self.ep.finish(failed, self.max_steps());
        Ok(StepResult {
            observation: self.state.to_vec(),
            reward: cartpole_mod_reward(a, failed),
            done,
            terminal,
        })
    }
    episode_accessors!();
}

/// Sparse pendulum reward on the pre-step angle.
pub fn pendulum_sparse_reward(cos_theta: f64) -> f64 {
    if cos_theta > 0.95 {
        10.0
    } else {
        0.0
    }
}

/// Torque-limited pendulum swing-up with a sparse upright bonus.
#[derive(Debug, Clone)]
pub struct PendulumSparse {
    theta: f64,
    theta_dot: f64,
    ep: Episode,
}

impl PendulumSparse {
    const MAX_SPEED: f64 = 8.0;
    const MAX_TORQUE: f64 = 2.0;
    const DT: f64 = 0.05;
    const G: f64 = 10.0;
    const M: f64 = 1.0;
    const L: f64 = 1.0;

    pub fn new() -> Self {
        Self {
            theta: 0.0,
            theta_dot: 0.0,
            ep: Episode::new(),
        }
    }

    /// `(θ, θ̇)`, with θ = 0 upright.
    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Default for PendulumSparse {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PendulumSparse {
    fn id(&self) -> &'static str {
        "pendulum-sparse"
    }
    fn observation_dim(&self) -> usize {
        3
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-Self::MAX_TORQUE]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![Self::MAX_TORQUE]
    }
    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-1.0, -1.0, -Self::MAX_SPEED],
            vec![1.0, 1.0, Self::MAX_SPEED],
        )
    }
    fn max_steps(&self) -> usize {
        200
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.ep.reset(seed);
        self.theta = self.ep.rng.random_range(-PI..PI);
        self.theta_dot = self.ep.rng.random_range(-1.0..1.0);
        self.observe()
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let u = self.ep.begin_step(action, -Self::MAX_TORQUE, Self::MAX_TORQUE)?;
        let reward = pendulum_sparse_reward(self.theta.cos());
        let (g, m, l, dt) = (Self::G, Self::M, Self::L, Self::DT);
        let new_dot = self.theta_dot
            + (-3.0 * g / (2.0 * l) * (self.theta + PI).sin() + 3.0 / (m * l * l) * u) * dt;
        self.theta += new_dot * dt;
        self.theta_dot = new_dot.clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let (done, terminal) = self.ep.finish(false, self.max_steps());
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done,
            terminal,
        })
    }
    episode_accessors!();
}

/// Maps a continuous action in [-1, 1] to the three discrete acrobot torques.
pub fn acrobot_discrete_action(a: f64) -> usize {
    if a < -1.0 / 3.0 {
        0
    } else if a < 1.0 / 3.0 {
        1
    } else {
        2
    }
}

/// Sparse acrobot reward: 1 when the tip clears the goal height, else 0.
pub fn acrobot_reward(goal: bool) -> f64 {
    if goal {
        1.0
    } else {
        0.0
    }
}

/// Two-link acrobot with the discrete torques behind a continuous action.
#[derive(Debug, Clone)]
pub struct AcrobotCont {
    state: [f64; 4],
    ep: Episode,
}

impl AcrobotCont {
    const DT: f64 = 0.2;
    const L1: f64 = 1.0;
    const M1: f64 = 1.0;
    const M2: f64 = 1.0;
    const LC1: f64 = 0.5;
    const LC2: f64 = 0.5;
    const I1: f64 = 1.0;
    const I2: f64 = 1.0;
    const MAX_VEL_1: f64 = 4.0 * PI;
    const MAX_VEL_2: f64 = 9.0 * PI;
    const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            ep: Episode::new(),
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn dsdt(s: [f64; 4], a: f64) -> [f64; 4] {
        let (m1, m2, l1, lc1, lc2, i1, i2) =
            (Self::M1, Self::M2, Self::L1, Self::LC1, Self::LC2, Self::I1, Self::I2);
        let g = 9.8;
        let [t1, t2, dt1, dt2] = s;
        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * t2.cos()) + i1 + i2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * t2.cos()) + i2;
        let phi2 = m2 * lc2 * g * (t1 + t2 - PI / 2.0).cos();
        let phi1 = -m2 * l1 * lc2 * dt2 * dt2 * t2.sin()
            - 2.0 * m2 * l1 * lc2 * dt2 * dt1 * t2.sin()
            + (m1 * lc1 + m2 * l1) * g * (t1 - PI / 2.0).cos()
            + phi2;
        let ddt2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dt1 * dt1 * t2.sin() - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let ddt1 = -(d2 * ddt2 + phi1) / d1;
        [dt1, dt2, ddt1, ddt2]
    }

    fn rk4(s: [f64; 4], a: f64, dt: f64) -> [f64; 4] {
        let add = |x: [f64; 4], k: [f64; 4], h: f64| {
            [x[0] + h * k[0], x[1] + h * k[1], x[2] + h * k[2], x[3] + h * k[3]]
        };
        let k1 = Self::dsdt(s, a);
        let k2 = Self::dsdt(add(s, k1, dt / 2.0), a);
        let k3 = Self::dsdt(add(s, k2, dt / 2.0), a);
        let k4 = Self::dsdt(add(s, k3, dt), a);
        let mut out = s;
        for i in 0..4 {
            out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out
    }

    fn wrap(x: f64) -> f64 {
        let mut x = x;
        while x > PI {
            x -= 2.0 * PI;
        }
        while x < -PI {
            x += 2.0 * PI;
        }
        x
    }

    fn observe(&self) -> Vec<f64> {
        let [t1, t2, d1, d2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
    }
}

impl Default for AcrobotCont {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for AcrobotCont {
    fn id(&self) -> &'static str {
        "acrobot-cont"
    }
    fn observation_dim(&self) -> usize {
        6
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-1.0, -1.0, -1.0, -1.0, -Self::MAX_VEL_1, -Self::MAX_VEL_2],
            vec![1.0, 1.0, 1.0, 1.0, Self::MAX_VEL_1, Self::MAX_VEL_2],
        )
    }
    fn max_steps(&self) -> usize {
        500
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.ep.reset(seed);
        for v in &mut self.state {
            *v = self.ep.rng.random_range(-0.1..0.1);
        }
        self.observe()
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = self.ep.begin_step(action, -1.0, 1.0)?;
        let torque = Self::TORQUES[acrobot_discrete_action(a)];
        let mut ns = Self::rk4(self.state, torque, Self::DT);
        ns[0] = Self::wrap(ns[0]);
        ns[1] = Self::wrap(ns[1]);
        ns[2] = ns[2].clamp(-Self::MAX_VEL_1, Self::MAX_VEL_1);
        ns[3] = ns[3].clamp(-Self::MAX_VEL_2, Self::MAX_VEL_2);
        self.state = ns;
        let goal = -ns[0].cos() - (ns[1] + ns[0]).cos() > 1.0;
        let (done, terminal) = self.ep.finish(goal, self.max_steps());
        Ok(StepResult {
            observation: self.observe(),
            reward: acrobot_reward(goal),
            done,
            terminal,
        })
    }
    episode_accessors!();
}

/// Goal bonus minus the action magnitude.
pub fn mountaincar_reward(goal: bool, a: f64) -> f64 {
    (if goal { 100.0 } else { 0.0 }) - a.abs()
}

/// Under-powered car in a valley with a continuous throttle.
#[derive(Debug, Clone)]
pub struct MountainCarCont {
    position: f64,
    velocity: f64,
    ep: Episode,
}

impl MountainCarCont {
    const MIN_POS: f64 = -1.2;
    const MAX_POS: f64 = 0.6;
    const MAX_SPEED: f64 = 0.07;
    const GOAL_POS: f64 = 0.45;
    const POWER: f64 = 0.0015;

    pub fn new() -> Self {
        Self {
            position: 0.0,
            velocity: 0.0,
            ep: Episode::new(),
        }
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
    }
}

impl Default for MountainCarCont {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MountainCarCont {
    fn id(&self) -> &'static str {
        "mountaincar-cont"
    }
    fn observation_dim(&self) -> usize {
        2
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![Self::MIN_POS, -Self::MAX_SPEED],
            vec![Self::MAX_POS, Self::MAX_SPEED],
        )
    }
    fn max_steps(&self) -> usize {
        999
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.ep.reset(seed);
        self.position = self.ep.rng.random_range(-0.6..-0.4);
        self.velocity = 0.0;
        vec![self.position, self.velocity]
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = self.ep.begin_step(action, -1.0, 1.0)?;
        self.velocity += a * Self::POWER - 0.0025 * (3.0 * self.position).cos();
        self.velocity = self.velocity.clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.position = (self.position + self.velocity).clamp(Self::MIN_POS, Self::MAX_POS);
        if self.position == Self::MIN_POS && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        let goal = self.position >= Self::GOAL_POS && self.velocity >= 0.0;
        let (done, terminal) = self.ep.finish(goal, self.max_steps());
        Ok(StepResult {
            observation: vec![self.position, self.velocity],
            reward: mountaincar_reward(goal, a),
            done,
            terminal,
        })
    }
    episode_accessors!();
}

/// Swing-up reward kept only near upright, with an effort penalty.
/// The base reward is `cos θ`.
pub fn swingup_sparse_reward(cos_theta: f64, a: f64) -> f64 {
    let penalty = -0.1 * a.abs();
    if cos_theta > 0.8 {
        cos_theta + penalty
    } else {
        penalty
    }
}

/// Cart-pole starting hanging down, with cart friction.
#[derive(Debug, Clone)]
pub struct CartPoleSwingUpSparse {
    state: [f64; 4],
    ep: Episode,
}

impl CartPoleSwingUpSparse {
    const G: f64 = 9.82;
    const M_CART: f64 = 0.5;
    const M_POLE: f64 = 0.5;
    const L: f64 = 0.6;
    const FORCE: f64 = 10.0;
    const DT: f64 = 0.01;
    const FRICTION: f64 = 0.1;
    const X_LIMIT: f64 = 2.4;

    pub fn new() -> Self {
        Self {
            state: [0.0; 4],
            ep: Episode::new(),
        }
    }

    /// `[x, ẋ, θ, θ̇]`, with θ = 0 upright.
    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn observe(&self) -> Vec<f64> {
        let [x, x_dot, theta, theta_dot] = self.state;
        vec![x, x_dot, theta.cos(), theta.sin(), theta_dot]
    }
}

impl Default for CartPoleSwingUpSparse {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPoleSwingUpSparse {
    fn id(&self) -> &'static str {
        "cartpole-swingup-sparse"
    }
    fn observation_dim(&self) -> usize {
        5
    }
    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }
    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn observation_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![-Self::X_LIMIT, -5.0, -1.0, -1.0, -10.0],
            vec![Self::X_LIMIT, 5.0, 1.0, 1.0, 10.0],
        )
    }
    fn max_steps(&self) -> usize {
        200
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.ep.reset(seed);
        let n = Normal::new(0.0, 0.2).expect("valid normal");
        let mean = [0.0, 0.0, PI, 0.0];
        for (v, m) in self.state.iter_mut().zip(mean) {
            *v = m + n.sample(&mut self.ep.rng);
        }
        self.observe()
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let a = self.ep.begin_step(action, -1.0, 1.0)?;
        let force = a * Self::FORCE;
        let [x, x_dot, theta, theta_dot] = self.state;
        let (s, c) = theta.sin_cos();
        let total = Self::M_CART + Self::M_POLE;
        let mpl = Self::M_POLE * Self::L;
        let x_acc = (-2.0 * mpl * theta_dot * theta_dot * s + 3.0 * Self::M_POLE * Self::G * s * c
            + 4.0 * force
            - 4.0 * Self::FRICTION * x_dot)
            / (4.0 * total - 3.0 * Self::M_POLE * c * c);
        let theta_acc = (-3.0 * mpl * theta_dot * theta_dot * s * c
            + 6.0 * total * Self::G * s
            + 6.0 * (force - Self::FRICTION * x_dot) * c)
            / (4.0 * Self::L * total - 3.0 * mpl * c * c);
        self.state = [
            x + x_dot * Self::DT,
            x_dot + x_acc * Self::DT,
            theta + theta_dot * Self::DT,
            theta_dot + theta_acc * Self::DT,
        ];
        let out = self.state[0].abs() > Self::X_LIMIT;
        let (done, terminal) = self.ep.finish(out, self.max_steps());
        Ok(StepResult {
            observation: self.observe(),
            reward: swingup_sparse_reward(self.state[2].cos(), a),
            done,
            terminal,
        })
    }
    episode_accessors!();
}
