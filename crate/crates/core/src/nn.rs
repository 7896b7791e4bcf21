//! Multilayer perceptrons for the shared policy network and the critics,
//! Polyak averaging, Adam, and a plain-text parameter checkpoint format.
//!
//! # Checkpoint format
//!
//! ```text
//! adac-checkpoint v1
//! tensor <name> <rank> <dim_0> ... <dim_{rank-1}>
//! <value> <value> ...
//! ```
//!
//! One `tensor` header per parameter, in module order, followed by a single
//! line holding the row-major values. Values are written with Rust's
//! shortest round-trip formatting, so a save/load cycle is bit-exact.

use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{
    add_bias_rows, gemm_nn, AutodiffError, Gradients, Graph, Param, Tensor, Var,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected {expected} columns, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("batch sizes differ: {0} vs {1}")]
    Batch(usize, usize),
    #[error("parameter lists are not congruent: {0}")]
    Incongruent(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Anything that owns trainable parameters in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

/// Graph handles of a module's parameters for one forward pass, in
/// [`Module::params`] order.
#[derive(Debug, Clone, Default)]
pub struct Bound(pub Vec<Var>);

impl Bound {
    pub fn accumulate<M: Module + ?Sized>(&self, grads: &Gradients, module: &mut M) -> Result<()> {
        let params = module.params_mut();
        if params.len() != self.0.len() {
            return Err(NnError::Incongruent(format!(
                "{} bound vars for {} params",
                self.0.len(),
                params.len()
            )));
        }
        for (v, p) in self.0.iter().zip(params) {
            grads.accumulate(*v, p)?;
        }
        Ok(())
    }
}

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-limit..=limit);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
}

impl Linear {
    /// Fan-in uniform initialization, or `±limit` when `limit` is given.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        limit: Option<f64>,
        rng: &mut R,
    ) -> Self {
        let lim = limit.unwrap_or(1.0 / (input.max(1) as f64).sqrt());
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                uniform_tensor(&[input, output], lim, rng),
            ),
            bias: Param::new(format!("{name}.bias"), uniform_tensor(&[output], lim, rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

/// Linear layers with relu between them and no activation on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`. The last layer uses
    /// `final_limit` when given.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        sizes: &[usize],
        final_limit: Option<f64>,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lim = if i + 1 == n { final_limit } else { None };
                Linear::new(&format!("{name}.l{i}"), sizes[i], sizes[i + 1], lim, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Bound)> {
        self.forward_with(g, x, true)
    }

    /// Forward pass with the weights as constants; the returned [`Bound`]
    /// handles receive no gradient.
    pub fn forward_frozen(&self, g: &mut Graph, x: Var) -> Result<(Var, Bound)> {
        self.forward_with(g, x, false)
    }

    fn forward_with(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<(Var, Bound)> {
        let mut h = x;
        let mut bound = Vec::with_capacity(2 * self.layers.len());
        let bind = |g: &mut Graph, p: &Param| {
            if trainable {
                g.param(p)
            } else {
                g.constant(p.value.clone())
            }
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let w = bind(g, &layer.weight);
            let b = bind(g, &layer.bias);
            bound.push(w);
            bound.push(b);
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok((h, Bound(bound)))
    }

    /// Graph-free forward pass on a `[rows, input]` buffer.
    pub fn infer(&self, rows: usize, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let (k, n) = (layer.input_dim(), layer.output_dim());
            let mut out = vec![0.0; rows * n];
            gemm_nn(rows, k, n, &h, layer.weight.value.data(), &mut out);
            add_bias_rows(&mut out, layer.bias.value.data());
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn columns(what: &'static str, t: &Tensor, expected: usize) -> Result<usize> {
    match t.shape() {
        [r, c] if *c == expected => Ok(*r),
        [_, c] => Err(NnError::Dimension {
            what,
            expected,
            got: *c,
        }),
        other => Err(NnError::Dimension {
            what,
            expected,
            got: other.iter().product(),
        }),
    }
}

/// The shared network `f(s, ξ)`: `[s, ξ]` through an MLP, then tanh scaled
/// to the action box. `ξ = 0` gives the deterministic target policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mlp: Mlp,
    state_dim: usize,
    action_dim: usize,
    noise_dim: usize,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        noise_dim: usize,
        hidden: &[usize],
        low: Vec<f64>,
        high: Vec<f64>,
        rng: &mut R,
    ) -> Self {
        assert_eq!(low.len(), high.len(), "action bounds differ in length");
        assert!(
            low.iter().zip(&high).all(|(l, h)| l < h),
            "action bounds must satisfy low < high"
        );
        let action_dim = low.len();
        let mut sizes = vec![state_dim + noise_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self {
            mlp: Mlp::new("policy", &sizes, Some(3e-3), rng),
            state_dim,
            action_dim,
            noise_dim,
            low,
            high,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    fn center_and_halfwidth(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect();
        let w = self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (h - l)).collect();
        (c, w)
    }

    fn check(&self, s: &Tensor, xi: &Tensor) -> Result<usize> {
        let rs = columns("policy state", s, self.state_dim)?;
        let rx = columns("policy noise", xi, self.noise_dim)?;
        if rs != rx {
            return Err(NnError::Batch(rs, rx));
        }
        Ok(rs)
    }

    pub fn forward(&self, g: &mut Graph, s: Var, xi: Var) -> Result<(Var, Bound)> {
        let rows = self.check(g.value(s), g.value(xi))?;
        let x = g.concat(&[s, xi])?;
        let (z, bound) = self.mlp.forward(g, x)?;
        let t = g.tanh(z);
        let (c, w) = self.center_and_halfwidth();
        let wv = g.constant(Tensor::matrix(rows, self.action_dim, w.repeat(rows))?);
        let cv = g.constant(Tensor::vector(c));
        let scaled = g.mul(t, wv)?;
        Ok((g.add_bias(scaled, cv)?, bound))
    }

    /// Graph-free `f(s, ξ)` on batches `s: [M, state_dim]`, `ξ: [M, noise_dim]`.
    pub fn infer(&self, s: &Tensor, xi: &Tensor) -> Result<Tensor> {
        let rows = self.check(s, xi)?;
        let width = self.state_dim + self.noise_dim;
        let mut x = Vec::with_capacity(rows * width);
        for i in 0..rows {
            x.extend_from_slice(&s.data()[i * self.state_dim..(i + 1) * self.state_dim]);
            x.extend_from_slice(&xi.data()[i * self.noise_dim..(i + 1) * self.noise_dim]);
        }
        let z = self.mlp.infer(rows, &x);
        let (c, w) = self.center_and_halfwidth();
        let d = self.action_dim;
        let out = z
            .iter()
            .enumerate()
            .map(|(k, v)| c[k % d] + w[k % d] * v.tanh())
            .collect();
        Ok(Tensor::matrix(rows, d, out)?)
    }

    /// Single-state convenience wrapper around [`PolicyNet::infer`].
    pub fn act(&self, s: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let st = Tensor::matrix(1, s.len(), s.to_vec())?;
        let xt = Tensor::matrix(1, xi.len(), xi.to_vec())?;
        Ok(self.infer(&st, &xt)?.into_data())
    }

    /// The target policy `π(s) = f(s, 0)` on a batch.
    pub fn target_action(&self, s: &Tensor) -> Result<Tensor> {
        let rows = columns("policy state", s, self.state_dim)?;
        self.infer(s, &Tensor::zeros(&[rows, self.noise_dim]))
    }
}

impl Module for PolicyNet {
    fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }
}

/// `Q(s, a)`: `[s, a]` through an MLP with a scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub mlp: Mlp,
    state_dim: usize,
    action_dim: usize,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            mlp: Mlp::new("critic", &sizes, Some(3e-3), rng),
            state_dim,
            action_dim,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn check(&self, s: &Tensor, a: &Tensor) -> Result<usize> {
        let rs = columns("critic state", s, self.state_dim)?;
        let ra = columns("critic action", a, self.action_dim)?;
        if rs != ra {
            return Err(NnError::Batch(rs, ra));
        }
        Ok(rs)
    }

    /// Returns a `[M, 1]` value node.
    pub fn forward(&self, g: &mut Graph, s: Var, a: Var) -> Result<(Var, Bound)> {
        self.check(g.value(s), g.value(a))?;
        let x = g.concat(&[s, a])?;
        self.mlp.forward(g, x)
    }

    /// Graph-free values, one per row.
    pub fn infer(&self, s: &Tensor, a: &Tensor) -> Result<Vec<f64>> {
        let rows = self.check(s, a)?;
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut x = Vec::with_capacity(rows * (ds + da));
        for i in 0..rows {
            x.extend_from_slice(&s.data()[i * ds..(i + 1) * ds]);
            x.extend_from_slice(&a.data()[i * da..(i + 1) * da]);
        }
        Ok(self.mlp.infer(rows, &x))
    }

    /// `∇_a Q(s, a)` for every row, leaving parameter gradients untouched.
    pub fn action_grad(&self, s: &Tensor, a: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let sv = g.constant(s.clone());
        let av = g.variable(a.clone());
        self.check(g.value(sv), g.value(av))?;
        let x = g.concat(&[sv, av])?;
        let (q, _) = self.mlp.forward_frozen(&mut g, x)?;
        Ok(g.grad_wrt_input(q, av)?)
    }
}

impl Module for CriticNet {
    fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }
}

fn congruent(target: &[&mut Param], online: &[&Param]) -> Result<()> {
    if target.len() != online.len() {
        return Err(NnError::Incongruent(format!(
            "{} vs {} tensors",
            target.len(),
            online.len()
        )));
    }
    for (t, o) in target.iter().zip(online) {
        if t.value.shape() != o.value.shape() {
            return Err(NnError::Incongruent(format!(
                "{} has shape {:?}, {} has {:?}",
                t.name,
                t.value.shape(),
                o.name,
                o.value.shape()
            )));
        }
    }
    Ok(())
}

/// `target := τ·online + (1 − τ)·target`, parameter by parameter.
pub fn soft_update<T: Module + ?Sized, O: Module + ?Sized>(
    target: &mut T,
    online: &O,
    tau: f64,
) -> Result<()> {
    let online = online.params();
    let mut target = target.params_mut();
    congruent(&target, &online)?;
    for (t, o) in target.iter_mut().zip(online) {
        if tau == 1.0 {
            t.value.data_mut().copy_from_slice(o.value.data());
            continue;
        }
        for (tv, ov) in t.value.data_mut().iter_mut().zip(o.value.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

/// Adam with fixed β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<M: Module + ?Sized>(module: &M, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = module.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the accumulated gradients. Gradients are left as is.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        let params = module.params_mut();
        if params.len() != self.m.len() {
            return Err(NnError::Incongruent(format!(
                "optimizer tracks {} tensors, module has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(&grad).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                if g == 0.0 && m[i] == 0.0 {
                    continue;
                }
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

const MAGIC: &str = "adac-checkpoint v1";

pub fn save_checkpoint<M: Module + ?Sized, W: Write>(module: &M, mut out: W) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    for p in module.params() {
        let shape = p.value.shape();
        write!(out, "tensor {} {}", p.name, shape.len())?;
        for d in shape {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        let vals: Vec<String> = p.value.data().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", vals.join(" "))?;
    }
    Ok(())
}

/// Loads values into an already-constructed module of the same architecture.
pub fn load_checkpoint<M: Module + ?Sized, B: BufRead>(module: &mut M, input: B) -> Result<()> {
    let bad = |m: String| NnError::Checkpoint(m);
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(l)) if l.trim() == MAGIC => {}
        _ => return Err(bad("missing header".into())),
    }
    for p in module.params_mut() {
        let header = lines
            .next()
            .ok_or_else(|| bad(format!("missing tensor {}", p.name)))??;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(bad(format!("expected tensor header, got {header:?}")));
        }
        let name = parts.next().unwrap_or_default();
        if name != p.name {
            return Err(bad(format!("expected {}, found {name}", p.name)));
        }
        let dims: Vec<usize> = parts
            .skip(1)
            .map(|d| d.parse().map_err(|_| bad(format!("bad dim {d:?}"))))
            .collect::<Result<_>>()?;
        if dims != p.value.shape() {
            return Err(bad(format!(
                "{name}: shape {dims:?} does not match {:?}",
                p.value.shape()
            )));
        }
        let body = lines
            .next()
            .ok_or_else(|| bad(format!("missing values for {name}")))??;
        let vals: Vec<f64> = body
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(format!("bad value {v:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != p.value.len() {
            return Err(bad(format!("{name}: {} values, expected {}", vals.len(), p.value.len())));
        }
        p.value.data_mut().copy_from_slice(&vals);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn policy_is_deterministic_at_zero_noise_and_bounded() {
        let mut r = rng();
        let net = PolicyNet::new(3, 4, &[16, 16], vec![-2.0, 0.0], vec![2.0, 1.0], &mut r);
        let s = [0.3, -1.2, 2.0];
        let a1 = net.act(&s, &[0.0; 4]).unwrap();
        let a2 = net.act(&s, &[0.0; 4]).unwrap();
        assert_eq!(a1, a2);
        for _ in 0..200 {
            let s: Vec<f64> = (0..3).map(|_| r.random_range(-50.0..50.0)).collect();
            let xi: Vec<f64> = (0..4).map(|_| r.random_range(-50.0..50.0)).collect();
            let a = net.act(&s, &xi).unwrap();
            assert!((-2.0..=2.0).contains(&a[0]));
            assert!((0.0..=1.0).contains(&a[1]));
        }
        let a0 = net.act(&[0.0; 3], &[0.0; 4]).unwrap();
        assert!(a0.iter().all(|v| v.is_finite()));
        assert!(a0[0].abs() < 2.0);
    }

    #[test]
    fn graph_and_infer_paths_agree() {
        let mut r = rng();
        let net = PolicyNet::new(2, 3, &[8], vec![-1.0], vec![1.0], &mut r);
        let s = Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let xi = Tensor::matrix(2, 3, vec![1.0, -1.0, 0.5, 0.0, 0.2, 0.3]).unwrap();
        let mut g = Graph::new();
        let sv = g.constant(s.clone());
        let xv = g.constant(xi.clone());
        let (a, _) = net.forward(&mut g, sv, xv).unwrap();
        let direct = net.infer(&s, &xi).unwrap();
        for (x, y) in g.value(a).data().iter().zip(direct.data()) {
            assert!((x - y).abs() < 1e-15);
        }

        let critic = CriticNet::new(2, 1, &[8, 8], &mut r);
        let mut g = Graph::new();
        let sv = g.constant(s.clone());
        let av = g.constant(direct.clone());
        let (q, _) = critic.forward(&mut g, sv, av).unwrap();
        assert_eq!(g.value(q).shape(), &[2, 1]);
        let qi = critic.infer(&s, &direct).unwrap();
        for (x, y) in g.value(q).data().iter().zip(&qi) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut r = rng();
        let net = PolicyNet::new(2, 3, &[4], vec![-1.0], vec![1.0], &mut r);
        let s = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            net.infer(&s, &Tensor::zeros(&[2, 2])),
            Err(NnError::Dimension { .. })
        ));
        assert!(matches!(
            net.infer(&s, &Tensor::zeros(&[3, 3])),
            Err(NnError::Batch(2, 3))
        ));
        let critic = CriticNet::new(2, 1, &[4], &mut r);
        assert!(critic.infer(&s, &Tensor::zeros(&[1, 1])).is_err());
    }

    #[test]
    fn critic_identical_rows_identical_values() {
        let mut r = rng();
        let critic = CriticNet::new(2, 1, &[8], &mut r);
        let s = Tensor::matrix(3, 2, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let a = Tensor::matrix(3, 1, vec![0.1; 3]).unwrap();
        let q = critic.infer(&s, &a).unwrap();
        assert_eq!(q[0], q[1]);
        assert_eq!(q[1], q[2]);
    }

    #[test]
    fn soft_update_examples() {
        let mut r = rng();
        let online = CriticNet::new(2, 1, &[4], &mut r);
        let mut target = CriticNet::new(2, 1, &[4], &mut r);
        let before = target.clone();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, before);
        soft_update(&mut target, &online, 1.0).unwrap();
        for (t, o) in target.params().iter().zip(online.params()) {
            assert_eq!(t.value, o.value);
        }

        let mut t = Mlp::new("m", &[1, 1], None, &mut r);
        let mut o = t.clone();
        for p in t.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        for p in o.params_mut() {
            p.value.data_mut().fill(2.0);
        }
        soft_update(&mut t, &o, 0.5).unwrap();
        assert!(t.params().iter().all(|p| p.value.data() == [1.0]));

        let wide = Mlp::new("m", &[1, 2], None, &mut r);
        assert!(soft_update(&mut t, &wide, 0.5).is_err());
    }

    #[test]
    fn adam_first_step_and_zero_grad() {
        let mut r = rng();
        let mut m = Mlp::new("m", &[1, 1], None, &mut r);
        let before = m.clone();
        let mut opt = Adam::new(&m, 0.1);
        opt.step(&mut m).unwrap();
        assert_eq!(m, before);

        let w0 = m.layers[0].weight.value.data()[0];
        m.layers[0].weight.grad.data_mut()[0] = 1.0;
        let mut opt = Adam::new(&m, 0.1);
        opt.step(&mut m).unwrap();
        let step = w0 - m.layers[0].weight.value.data()[0];
        assert!((step - 0.1).abs() < 1e-6, "step {step}");
        assert_eq!(m.layers[0].weight.grad.data()[0], 1.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut r = rng();
        let net = PolicyNet::new(3, 2, &[5, 4], vec![-1.0], vec![1.0], &mut r);
        let mut buf = Vec::new();
        save_checkpoint(&net, &mut buf).unwrap();
        let mut other = PolicyNet::new(3, 2, &[5, 4], vec![-1.0], vec![1.0], &mut r);
        assert_ne!(net, other);
        load_checkpoint(&mut other, buf.as_slice()).unwrap();
        assert_eq!(net, other);

        let mut wrong = PolicyNet::new(3, 2, &[6, 4], vec![-1.0], vec![1.0], &mut r);
        assert!(load_checkpoint(&mut wrong, buf.as_slice()).is_err());
        assert!(load_checkpoint(&mut other, &b"nope\n"[..]).is_err());
    }

    #[test]
    fn action_grad_leaves_params_alone() {
        let mut r = rng();
        let critic = CriticNet::new(2, 1, &[8], &mut r);
        let s = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let a = Tensor::matrix(2, 1, vec![0.5, -0.5]).unwrap();
        let g = critic.action_grad(&s, &a).unwrap();
        assert_eq!(g.shape(), &[2, 1]);
        assert!(critic.params().iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }
}
