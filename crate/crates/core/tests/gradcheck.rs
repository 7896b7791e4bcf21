//! Central finite differences against the tape's reverse sweep.

use adac_core::autodiff::{Graph, Param, Tensor, Var};
use adac_core::nn::{Bound, CriticNet, Mlp, Module};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Scalar loss that exercises every primitive.
fn composite_loss(mlp: &Mlp, x: &Tensor, y: &Tensor, g: &mut Graph) -> (Var, Bound) {
    let xv = g.variable(x.clone());
    let (h, bound) = mlp.forward(g, xv).unwrap();
    let t = g.tanh(h);
    let yv = g.constant(y.clone());
    let sq = g.squared_diff(t, yv).unwrap();
    let e = g.exp(sq);
    let prod = g.mul(e, t).unwrap();
    let c = g.concat(&[prod, sq]).unwrap();
    let s = g.sum(c);
    let s = g.scale(s, 0.5);
    let m = g.mean(sq);
    let d = g.sub(s, m).unwrap();
    (g.add(d, m).unwrap(), bound)
}

fn eval(mlp: &Mlp, x: &Tensor, y: &Tensor) -> f64 {
    let mut g = Graph::new();
    let (l, _) = composite_loss(mlp, x, y, &mut g);
    g.value(l).item().unwrap()
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let mut mlp = Mlp::new("m", &[3, 5, 4, 2], None, &mut rng);
        let x = random_matrix(&mut rng, 4, 3);
        let y = random_matrix(&mut rng, 4, 2);
        let mut g = Graph::new();
        let (loss, bound) = composite_loss(&mlp, &x, &y, &mut g);
        let grads = g.backward(loss).unwrap();
        bound.accumulate(&grads, &mut mlp).unwrap();
        let analytic: Vec<Vec<f64>> = mlp.params().iter().map(|p| p.grad.data().to_vec()).collect();
        for (pi, a) in analytic.iter().enumerate() {
            for k in 0..a.len() {
                let orig = mlp.params()[pi].value.data()[k];
                mlp.params_mut()[pi].value.data_mut()[k] = orig + H;
                let up = eval(&mlp, &x, &y);
                mlp.params_mut()[pi].value.data_mut()[k] = orig - H;
                let down = eval(&mlp, &x, &y);
                mlp.params_mut()[pi].value.data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * H);
                assert!(rel_err(a[k], fd) < 1e-5, "param {pi}[{k}]: {} vs {fd}", a[k]);
            }
        }
    }
}

#[test]
fn critic_action_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let critic = CriticNet::new(3, 2, &[16, 16], &mut rng);
    let s = random_matrix(&mut rng, 6, 3);
    let a = random_matrix(&mut rng, 6, 2);
    let grad = critic.action_grad(&s, &a).unwrap();
    for i in 0..6 {
        for j in 0..2 {
            let mut up = a.clone();
            up.data_mut()[i * 2 + j] += H;
            let mut down = a.clone();
            down.data_mut()[i * 2 + j] -= H;
            let fd = (critic.infer(&s, &up).unwrap()[i] - critic.infer(&s, &down).unwrap()[i])
                / (2.0 * H);
            assert!(rel_err(grad.data()[i * 2 + j], fd) < 1e-5);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn two_sweeps_accumulate_exactly_twice(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Param::new("w", random_matrix(&mut rng, 3, 2));
        let x = random_matrix(&mut rng, 4, 3);
        let run = |w: &mut Param| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.param(w);
            let h = g.matmul(xv, wv).unwrap();
            let t = g.tanh(h);
            let e = g.exp(t);
            let l = g.mean(e);
            g.backward(l).unwrap().accumulate(wv, w).unwrap();
        };
        run(&mut w);
        let once = w.grad.clone();
        run(&mut w);
        for (a, b) in w.grad.data().iter().zip(once.data()) {
            prop_assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn forward_is_a_pure_function(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new("m", &[2, 6, 1], None, &mut rng);
        let x = random_matrix(&mut rng, 5, 2);
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (o, _) = mlp.forward(&mut g, xv).unwrap();
            g.value(o).clone()
        };
        prop_assert_eq!(run(), run());
        prop_assert_eq!(run().data().to_vec(), mlp.infer(5, x.data()));
    }

    #[test]
    fn backward_visits_parents_before_children(seed in 0u64..10_000) {
        // chain of random ops; gradient of a leaf equals the product rule result
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: f64 = rng.random_range(-1.0..1.0);
        let mut g = Graph::new();
        let a = g.variable(Tensor::scalar(v));
        let b = g.tanh(a);
        let c = g.mul(b, a).unwrap();
        let d = g.exp(c);
        let grad = g.grad_wrt_input(d, a).unwrap().item().unwrap();
        let t = v.tanh();
        let expect = (t * v).exp() * ((1.0 - t * t) * v + t);
        prop_assert!((grad - expect).abs() < 1e-12);
    }
}
