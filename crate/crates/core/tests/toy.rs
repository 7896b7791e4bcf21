//! Standalone sampler fits against 1-D targets.

use std::sync::OnceLock;

use adac_core::svgd::{toy_fit, SvgdError, ToyConfig, ToyTarget};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEPS: usize = 3000;

fn fit(target: ToyTarget, beta: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = toy_fit(&|a| target.log_density(a), beta, STEPS, &ToyConfig::default(), &mut rng)
        .expect("toy fit converges");
    sampler.sample(100_000, &mut rng)
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn unimodal() -> &'static Vec<f64> {
    static S: OnceLock<Vec<f64>> = OnceLock::new();
    S.get_or_init(|| fit(ToyTarget::Unimodal, 1.0, 0))
}

#[test]
fn unimodal_samples_are_centered() {
    let (mean, _) = moments(unimodal());
    assert!(mean.abs() <= 0.1, "mean {mean}");
}

#[test]
#[ignore = "the d/K bandwidth with its self term under-disperses (std near 0.6); see README"]
fn unimodal_spread_matches_the_target() {
    let (_, sd) = moments(unimodal());
    assert!((0.85..=1.15).contains(&sd), "std {sd}");
}

#[test]
fn bimodal_mass_split_depends_on_beta() {
    let right = |xs: &[f64]| xs.iter().filter(|&&x| x > 0.0).count() as f64 / xs.len() as f64;
    let wide = right(&fit(ToyTarget::bimodal(), 1.0, 0));
    assert!(wide >= 0.2 && wide <= 0.8, "beta 1: right-mode share {wide}");
    let narrow = right(&fit(ToyTarget::bimodal(), 0.1, 0));
    assert!(narrow.max(1.0 - narrow) >= 0.8, "beta 0.1: right-mode share {narrow}");
}

#[test]
fn divergence_reports_the_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = ToyConfig {
        hidden: vec![4],
        groups: 2,
        particles: 4,
        ..ToyConfig::default()
    };
    let err = toy_fit(&|_| f64::NAN, 1.0, 10, &cfg, &mut rng).unwrap_err();
    assert!(matches!(err, SvgdError::Diverged(0)));
}
