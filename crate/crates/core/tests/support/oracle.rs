//! Hand-written forward passes and Jacobians, independent of the tape.

#![allow(dead_code)]

use adac_core::nn::{CriticNet, Mlp, PolicyNet};

/// Forward through an MLP keeping every layer's pre-activation.
fn forward_trace(mlp: &Mlp, x: &[f64]) -> Vec<Vec<f64>> {
    let mut pre = Vec::new();
    let mut h = x.to_vec();
    for (li, layer) in mlp.layers.iter().enumerate() {
        let (nin, nout) = (layer.input_dim(), layer.output_dim());
        let w = layer.weight.value.data();
        let b = layer.bias.value.data();
        let mut z = vec![0.0; nout];
        for o in 0..nout {
            let mut acc = b[o];
            for i in 0..nin {
                acc += h[i] * w[i * nout + o];
            }
            z[o] = acc;
        }
        pre.push(z.clone());
        h = if li + 1 < mlp.layers.len() {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z
        };
    }
    pre
}

/// `d(v · mlp(x))/dparams` and `d(v · mlp(x))/dx`, params flattened in
/// weight-then-bias order per layer.
fn vjp(mlp: &Mlp, x: &[f64], pre: &[Vec<f64>], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = mlp.layers.len();
    let mut per_layer: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(n);
    let mut upstream = v.to_vec();
    for li in (0..n).rev() {
        let layer = &mlp.layers[li];
        let (nin, nout) = (layer.input_dim(), layer.output_dim());
        let input: Vec<f64> = if li == 0 {
            x.to_vec()
        } else {
            pre[li - 1].iter().map(|z| z.max(0.0)).collect()
        };
        let w = layer.weight.value.data();
        let mut gw = vec![0.0; nin * nout];
        for i in 0..nin {
            for o in 0..nout {
                gw[i * nout + o] = input[i] * upstream[o];
            }
        }
        let gb = upstream.clone();
        let mut down = vec![0.0; nin];
        for i in 0..nin {
            let mut acc = 0.0;
            for o in 0..nout {
                acc += w[i * nout + o] * upstream[o];
            }
            down[i] = acc;
        }
        if li > 0 {
            for (d, z) in down.iter_mut().zip(&pre[li - 1]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        per_layer.push((gw, gb));
        upstream = down;
    }
    per_layer.reverse();
    let flat = per_layer.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
    (flat, upstream)
}

/// `f(s, ξ)` and `Σ_c v_c ∂f_c/∂φ` for one row.
pub fn policy_vjp(net: &PolicyNet, s: &[f64], xi: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = s.iter().chain(xi).copied().collect();
    let pre = forward_trace(&net.mlp, &x);
    let z = pre.last().unwrap();
    let mut a = Vec::new();
    let mut dz = Vec::new();
    for c in 0..net.action_dim() {
        let half = 0.5 * (net.high()[c] - net.low()[c]);
        let mid = 0.5 * (net.high()[c] + net.low()[c]);
        let t = z[c].tanh();
        a.push(mid + half * t);
        dz.push(v[c] * half * (1.0 - t * t));
    }
    let (g, _) = vjp(&net.mlp, &x, &pre, &dz);
    (a, g)
}

pub fn policy_action(net: &PolicyNet, s: &[f64], xi: &[f64]) -> Vec<f64> {
    policy_vjp(net, s, xi, &vec![0.0; net.action_dim()]).0
}

/// `∇_a Q(s, a)` by hand back-propagation.
pub fn critic_action_grad(net: &CriticNet, s: &[f64], a: &[f64]) -> Vec<f64> {
    let x: Vec<f64> = s.iter().chain(a).copied().collect();
    let pre = forward_trace(&net.mlp, &x);
    let (_, gx) = vjp(&net.mlp, &x, &pre, &[1.0]);
    gx[s.len()..].to_vec()
}

pub fn kernel(a: &[f64], b: &[f64], h: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * h * h)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * h)
}

/// Ascent direction of the amortized Stein objective, evaluated as the
/// literal double sum over particle pairs. `xi[i][l]` is particle `l` of
/// state `i`.
pub fn stein_ascent(
    net: &PolicyNet,
    qgrad: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    states: &[Vec<f64>],
    xi: &[Vec<Vec<f64>>],
    beta: f64,
) -> Vec<f64> {
    let k = xi[0].len();
    let d = net.action_dim();
    let h = d as f64 / k as f64;
    let n_params: usize = net
        .mlp
        .layers
        .iter()
        .map(|l| l.input_dim() * l.output_dim() + l.output_dim())
        .sum();
    let mut total = vec![0.0; n_params];
    for (i, s) in states.iter().enumerate() {
        let acts: Vec<Vec<f64>> = xi[i].iter().map(|x| policy_action(net, s, x)).collect();
        let grads: Vec<Vec<f64>> = acts.iter().map(|a| qgrad(s, a)).collect();
        for l in 0..k {
            let mut delta = vec![0.0; d];
            for j in 0..k {
                let w = kernel(&acts[l], &acts[j], h);
                for c in 0..d {
                    delta[c] += w * grads[j][c] + beta * (acts[l][c] - acts[j][c]) / (h * h) * w;
                }
            }
            let (_, g) = policy_vjp(net, s, &xi[i][l], &delta);
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
        }
    }
    let norm = (states.len() * k) as f64;
    total.iter().map(|v| v / norm).collect()
}

/// Deterministic policy gradient `(1/M) Σ_i ∇_a Q ∂π/∂φ` at `ξ = 0`.
pub fn dpg_ascent(
    net: &PolicyNet,
    qgrad: &dyn Fn(&[f64], &[f64]) -> Vec<f64>,
    states: &[Vec<f64>],
) -> Vec<f64> {
    let zero = vec![0.0; net.noise_dim()];
    let mut total: Vec<f64> = Vec::new();
    for s in states {
        let a = policy_action(net, s, &zero);
        let (_, g) = policy_vjp(net, s, &zero, &qgrad(s, &a));
        if total.is_empty() {
            total = vec![0.0; g.len()];
        }
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    total.iter().map(|v| v / states.len() as f64).collect()
}
