mod support;

use adac_core::autodiff::Tensor;
use adac_core::nn::{CriticNet, Module, NnError, PolicyNet};
use adac_core::svgd::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use support::oracle;

/// `Q(s, a) = Σ_c [-(a_c - tanh(s·w_c))² + 0.3 sin(2 a_c)]`.
struct Analytic {
    w: Vec<Vec<f64>>,
}

impl Analytic {
    fn grad(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(c, &ac)| {
                let t = s.iter().zip(&self.w[c]).map(|(x, y)| x * y).sum::<f64>().tanh();
                -2.0 * (ac - t) + 0.6 * (2.0 * ac).cos()
            })
            .collect()
    }
}

impl ActionValue for Analytic {
    fn action_gradient(&self, s: &Tensor, a: &Tensor) -> std::result::Result<Tensor, NnError> {
        let (n, d) = a.dims2().unwrap();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend(self.grad(s.row(i), a.row(i)));
        }
        Ok(Tensor::matrix(n, d, out)?)
    }
}

struct Constant;

impl ActionValue for Constant {
    fn action_gradient(&self, _s: &Tensor, a: &Tensor) -> std::result::Result<Tensor, NnError> {
        Ok(Tensor::zeros(a.shape()))
    }
}

fn flat_grads(net: &PolicyNet) -> Vec<f64> {
    net.params().iter().flat_map(|p| p.grad.data().to_vec()).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Case {
    net: PolicyNet,
    states: Vec<Vec<f64>>,
    xi: Vec<Vec<Vec<f64>>>,
    k: usize,
    beta: f64,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let ds = rng.random_range(1..=4);
    let d = rng.random_range(1..=3);
    let nx = rng.random_range(1..=5);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=10)).collect();
    let low: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..-0.5)).collect();
    let high: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut net = PolicyNet::new(ds, nx, &hidden, low, high, rng);
    // spread the near-zero output layer so particles interact
    let last = net.mlp.layers.len() - 1;
    let out = &mut net.mlp.layers[last];
    for v in out.weight.value.data_mut().iter_mut().chain(out.bias.value.data_mut()) {
        *v *= 300.0;
    }
    let m = rng.random_range(1..=4);
    let k = rng.random_range(2..=6);
    let states: Vec<Vec<f64>> = (0..m).map(|_| (0..ds).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let xi = (0..m)
        .map(|_| {
            (0..k)
                .map(|_| (0..nx).map(|_| StandardNormal.sample(rng)).collect())
                .collect()
        })
        .collect();
    Case {
        net,
        states,
        xi,
        k,
        beta: rng.random_range(0.0..2.0),
    }
}

fn run_library<Q: ActionValue>(case: &mut Case, critic: &Q) -> Vec<f64> {
    let ds = case.net.state_dim();
    let s = Tensor::matrix(case.states.len(), ds, case.states.concat()).unwrap();
    let rows: Vec<f64> = case.xi.iter().flatten().flatten().copied().collect();
    let xi = Tensor::matrix(case.states.len() * case.k, case.net.noise_dim(), rows).unwrap();
    case.net.zero_grad();
    svgd_policy_gradient_with_noise(&mut case.net, critic, &s, &xi, case.k, case.beta).unwrap();
    flat_grads(&case.net).iter().map(|g| -g).collect()
}

#[test]
fn matches_brute_force_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..50 {
        let mut case = random_case(&mut rng);
        let (ascent, oracle_dir) = if n % 2 == 0 {
            let critic = CriticNet::new(case.net.state_dim(), case.net.action_dim(), &[7, 5], &mut rng);
            let lib = run_library(&mut case, &critic);
            let qg = |s: &[f64], a: &[f64]| oracle::critic_action_grad(&critic, s, a);
            (lib, oracle::stein_ascent(&case.net, &qg, &case.states, &case.xi, case.beta))
        } else {
            let critic = Analytic {
                w: (0..case.net.action_dim())
                    .map(|_| (0..case.net.state_dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            };
            let lib = run_library(&mut case, &critic);
            let qg = |s: &[f64], a: &[f64]| critic.grad(s, a);
            (lib, oracle::stein_ascent(&case.net, &qg, &case.states, &case.xi, case.beta))
        };
        let scale = oracle_dir.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let err = max_abs_diff(&ascent, &oracle_dir);
        assert!(err <= 1e-10 * scale, "case {n}: error {err:e} (scale {scale})");
    }
}

#[test]
fn constant_critic_leaves_only_repulsion() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut case = random_case(&mut rng);
    case.beta = 1.0;
    let lib = run_library(&mut case, &Constant);
    let zero = |_: &[f64], a: &[f64]| vec![0.0; a.len()];
    let repulsion = oracle::stein_ascent(&case.net, &zero, &case.states, &case.xi, 1.0);
    assert!(max_abs_diff(&lib, &repulsion) < 1e-12);
    assert!(repulsion.iter().any(|v| v.abs() > 1e-9));

    case.beta = 0.0;
    let lib = run_library(&mut case, &Constant);
    assert!(lib.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_noise_without_entropy_follows_the_deterministic_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let mut case = random_case(&mut rng);
        case.beta = 0.0;
        for set in case.xi.iter_mut() {
            for x in set.iter_mut() {
                x.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let critic = CriticNet::new(case.net.state_dim(), case.net.action_dim(), &[6], &mut rng);
        let stein = run_library(&mut case, &critic);

        let s = Tensor::matrix(case.states.len(), case.net.state_dim(), case.states.concat()).unwrap();
        case.net.zero_grad();
        deterministic_policy_gradient(&mut case.net, &critic, &s).unwrap();
        let dpg: Vec<f64> = flat_grads(&case.net).iter().map(|g| -g).collect();

        let qg = |s: &[f64], a: &[f64]| oracle::critic_action_grad(&critic, s, a);
        let dpg_oracle = oracle::dpg_ascent(&case.net, &qg, &case.states);
        assert!(max_abs_diff(&dpg, &dpg_oracle) < 1e-12);

        let dot: f64 = stein.iter().zip(&dpg).map(|(a, b)| a * b).sum();
        let na = stein.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = dpg.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 1.0 - 1e-12);
        // every particle coincides, so each sees the self weight K·k(0)
        let spec = KernelSpec::new(case.net.action_dim(), case.k).unwrap();
        let ratio = na / nb;
        assert!((ratio - case.k as f64 * spec.norm()).abs() < 1e-9 * ratio);
    }
}

#[test]
fn quadratic_critic_pulls_particles_toward_zero() {
    let spec = KernelSpec::new(1, 4).unwrap();
    let pts: [[f64; 1]; 4] = [[0.4], [0.55], [0.7], [0.9]];
    let grads: Vec<[f64; 1]> = pts.iter().map(|p| [-2.0 * p[0]]).collect();
    let ps: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
    let gs: Vec<&[f64]> = grads.iter().map(|g| &g[..]).collect();
    let (dirs, _) = stein_directions(&ps, &gs, &spec, 1.0);
    for l in 0..4 {
        let mut brute = 0.0;
        for j in 0..4 {
            let w = oracle::kernel(&pts[l], &pts[j], 0.25);
            brute += w * grads[j][0] + (pts[l][0] - pts[j][0]) / 0.0625 * w;
        }
        assert!((dirs[l][0] - brute).abs() < 1e-12);
    }
    let mean_push: f64 = dirs.iter().map(|d| d[0]).sum::<f64>() / 4.0;
    assert!(mean_push < 0.0);
}

#[test]
fn behavior_noise_has_the_kernel_bandwidth() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let net = PolicyNet::new(2, 16, &[16], vec![-100.0], vec![100.0], &mut rng);
    let spec = KernelSpec::new(1, 8).unwrap();
    let s = [0.3, -0.4];
    let n = 100_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..n {
        let mut shadow = rng.clone();
        let xi: Vec<f64> = (0..16).map(|_| StandardNormal.sample(&mut shadow)).collect();
        let center = net.act(&s, &xi).unwrap()[0];
        let a = sample_behavior_action(&net, &s, &spec, &mut rng).unwrap()[0];
        let e = a - center;
        sum += e;
        sq += e * e;
    }
    let mean = sum / n as f64;
    let sd = (sq / n as f64 - mean * mean).sqrt();
    assert!((sd / spec.h - 1.0).abs() < 0.02, "sd {sd} vs h {}", spec.h);
}

#[test]
fn behavior_actions_respect_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = PolicyNet::new(1, 16, &[8], vec![-0.01], vec![0.01], &mut rng);
    let spec = KernelSpec::new(1, 2).unwrap();
    for _ in 0..10_000 {
        let a = sample_behavior_action(&net, &[0.5], &spec, &mut rng).unwrap()[0];
        assert!((-0.01..=0.01).contains(&a));
    }
}

proptest! {
    #[test]
    fn kernel_is_symmetric_and_positive(
        a in prop::collection::vec(-3.0f64..3.0, 1..4),
        shift in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..64,
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let spec = KernelSpec::new(a.len(), k).unwrap();
        let (kab, kba) = (spec.kernel(&a, &b), spec.kernel(&b, &a));
        prop_assert_eq!(kab, kba);
        prop_assert!(kab >= 0.0);
        prop_assert!(kab <= spec.kernel(&a, &a));
    }

    #[test]
    fn kernel_grad_matches_finite_differences(
        a in prop::collection::vec(-1.0f64..1.0, 1..4),
        shift in prop::collection::vec(-0.3f64..0.3, 4),
        k in 1usize..8,
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let spec = KernelSpec::new(a.len(), k).unwrap();
        let g = spec.kernel_grad(&a, &b);
        let h = 1e-6 * spec.h;
        for c in 0..a.len() {
            let mut up = b.clone();
            up[c] += h;
            let mut down = b.clone();
            down[c] -= h;
            let fd = (spec.kernel(&a, &up) - spec.kernel(&a, &down)) / (2.0 * h);
            let denom = g[c].abs().max(fd.abs());
            if denom > 1e-8 * spec.norm() {
                prop_assert!((g[c] - fd).abs() / denom < 1e-6, "{} vs {}", g[c], fd);
            }
        }
    }
}
