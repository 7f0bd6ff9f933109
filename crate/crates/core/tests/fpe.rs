use camera::density::{GaussianMixture, NominalDensity};
use camera::fpe::{
    build_biasing, importance_sample, is_estimate, mc_estimate, monte_carlo, BiasingOptions, FailureEstimate,
};
use camera::mfgp::{Dataset, Domain, FidelitySpace, GpModel, InputFidelityPoint, KernelParams, LimitState};
use camera::stats::rng;
use camera::{MultifidelityModel, Result};
use proptest::prelude::*;
use rand::Rng;

/// `f(x) = x` on `[0, 1]`; failure below 0.1 has probability exactly 0.1.
struct Ramp(Domain);

impl Ramp {
    fn new() -> Self {
        Ramp(Domain::new(vec![0.0], vec![1.0], FidelitySpace::Continuous).unwrap())
    }
}

impl MultifidelityModel for Ramp {
    fn domain(&self) -> &Domain {
        &self.0
    }

    fn evaluate(&self, x: &[f64], _s: f64) -> Result<f64> {
        Ok(x[0])
    }
}

fn biased_mixture() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.7, 0.3],
        vec![vec![0.08], vec![0.4]],
        vec![vec![0.003], vec![0.05]],
    )
    .unwrap()
}

#[test]
fn importance_sampling_is_unbiased_on_the_ramp() {
    let toy = Ramp::new();
    let nominal = NominalDensity::uniform(toy.domain());
    let limit = LimitState::below(0.1);
    let mix = biased_mixture();
    let runs: Vec<FailureEstimate> = (0..200)
        .map(|seed| importance_sample(&mix, &toy, &limit, &nominal, 1000, seed, 1.0).unwrap())
        .collect();
    let ps: Vec<f64> = runs.iter().map(|e| e.p_hat).collect();
    let n = ps.len() as f64;
    let mean = ps.iter().sum::<f64>() / n;
    let emp_var = ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (emp_var / n).sqrt();
    assert!((mean - 0.1).abs() <= 3.0 * se, "{mean} ± {se}");
    let reported = runs.iter().map(|e| e.variance).sum::<f64>() / n;
    assert!(
        reported / emp_var > 0.5 && reported / emp_var < 2.0,
        "{reported} vs {emp_var}"
    );
    // a good biasing density beats plain sampling
    assert!(emp_var < 0.1 * 0.9 / 1000.0);
}

#[test]
fn draws_outside_the_support_are_not_charged() {
    let toy = Ramp::new();
    let nominal = NominalDensity::uniform(toy.domain());
    let mix = GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.01]]).unwrap();
    let est = importance_sample(&mix, &toy, &LimitState::below(0.1), &nominal, 2000, 3, 2.0).unwrap();
    assert!(est.cumulative_cost < 2.0 * 2000.0);
    assert!(est.cumulative_cost > 0.0);
    assert_eq!(est.n_samples, 2000);
}

proptest! {
    #[test]
    fn unit_weights_reproduce_monte_carlo(bits in prop::collection::vec(any::<bool>(), 1..500), lq in -5.0..5.0f64) {
        let logs = vec![lq; bits.len()];
        let a = is_estimate(&bits, &logs, &logs).unwrap();
        let b = mc_estimate(&bits).unwrap();
        prop_assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
        prop_assert_eq!(a.variance.to_bits(), b.variance.to_bits());
    }
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(is_estimate(&[true, false], &[0.0], &[0.0, 0.0]).is_err());
    assert!(mc_estimate(&[]).is_err());
}

#[test]
fn monte_carlo_matches_binomial() {
    let toy = Ramp::new();
    let est = monte_carlo(&toy, toy.domain(), &LimitState::below(0.1), 200_000, 5).unwrap();
    let se = (0.1f64 * 0.9 / 200_000.0).sqrt();
    assert!((est.p_hat - 0.1).abs() <= 4.0 * se);
    assert!((est.std_error() - se).abs() <= 0.05 * se);
    let again = monte_carlo(&toy, toy.domain(), &LimitState::below(0.1), 200_000, 5).unwrap();
    assert_eq!(est, again);
}

fn ramp_surrogate() -> GpModel {
    let mut r = rng(1);
    let xs: Vec<f64> = (0..12).map(|_| r.gen()).collect();
    let data = Dataset::from_parts(
        xs.iter().map(|&x| InputFidelityPoint::new(vec![x], 1.0)).collect(),
        xs.clone(),
        vec![1.0; xs.len()],
    )
    .unwrap();
    let domain = Domain::new(vec![0.0], vec![1.0], FidelitySpace::Continuous).unwrap();
    GpModel::with_params(domain, data, &KernelParams::isotropic(1, 1.0, 1.0, 1.0)).unwrap()
}

#[test]
fn biasing_concentrates_on_the_predicted_failure_region() {
    let gp = ramp_surrogate();
    let opts = BiasingOptions {
        pool_size: 50_000,
        components: 3,
        seed: 2,
        ..BiasingOptions::default()
    };
    let b = build_biasing(&gp, &LimitState::below(0.1), &opts).unwrap();
    assert!(!b.fallback);
    assert_eq!(b.screened, 50_000);
    let frac = b.m as f64 / b.screened as f64;
    assert!((frac - 0.1).abs() < 0.01, "{frac}");
    let xs = b.mixture.sample(5000, 3);
    let inside = xs.iter().filter(|x| x[0] <= 0.12).count() as f64 / 5000.0;
    assert!(inside > 0.8, "{inside}");

    let toy = Ramp::new();
    let nominal = NominalDensity::uniform(toy.domain());
    let est = importance_sample(&b.mixture, &toy, &LimitState::below(0.1), &nominal, 4000, 4, 1.0).unwrap();
    assert!((est.p_hat - 0.1).abs() <= 4.0 * est.std_error().max(1e-4), "{est:?}");
}

#[test]
fn no_predicted_failure_falls_back_to_the_closest_points() {
    let gp = ramp_surrogate();
    let opts = BiasingOptions {
        pool_size: 20_000,
        components: 2,
        seed: 2,
        fallback_fraction: 0.01,
        ..BiasingOptions::default()
    };
    let b = build_biasing(&gp, &LimitState::below(-5.0), &opts).unwrap();
    assert!(b.fallback);
    assert_eq!(b.m, 200);
    assert!(b.mixture.means().iter().all(|m| m[0] < 0.05));
}

#[test]
fn biasing_is_deterministic() {
    let gp = ramp_surrogate();
    let opts = BiasingOptions {
        pool_size: 40_000,
        components: 3,
        seed: 8,
        ..BiasingOptions::default()
    };
    let a = build_biasing(&gp, &LimitState::below(0.3), &opts).unwrap();
    let b = build_biasing(&gp, &LimitState::below(0.3), &opts).unwrap();
    assert_eq!(a.mixture.means(), b.mixture.means());
    assert_eq!(a.mixture.weights(), b.mixture.weights());
}
