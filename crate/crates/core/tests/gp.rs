use camera::mfgp::{
    kernel_eval, Dataset, Domain, FidelitySpace, FitOptions, GpModel, InputFidelityPoint, KernelParams,
};
use camera::stats::rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn unit(d: usize) -> Domain {
    Domain::new(vec![0.0; d], vec![1.0; d], FidelitySpace::Continuous).unwrap()
}

fn dataset(points: &[(Vec<f64>, f64)], f: impl Fn(&[f64], f64) -> f64) -> Dataset {
    let mut d = Dataset::new();
    for (x, s) in points {
        let p = InputFidelityPoint::new(x.clone(), *s);
        if !d.contains(&p) {
            d.push(p, f(x, *s), 1.0).unwrap();
        }
    }
    d
}

fn toy(x: &[f64], s: f64) -> f64 {
    x.iter().map(|v| (4.0 * v).sin()).sum::<f64>() + 0.3 * s * x[0]
}

/// Posterior by dense linear algebra in problem units, the oracle for the fast paths.
fn dense_posterior(model: &GpModel, q: &InputFidelityPoint) -> (f64, f64) {
    let data = model.data();
    let params = model.params();
    let mean0 = model.standardization().mean;
    let n = data.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel_eval(&data.points[i], &data.points[j], params))
        + DMatrix::identity(n, n) * params.jitter;
    let y = DVector::from_iterator(n, data.values.iter().map(|v| v - mean0));
    let kq = DVector::from_iterator(n, data.points.iter().map(|p| kernel_eval(p, q, params)));
    let kinv = k.try_inverse().unwrap();
    let mean = (kq.transpose() * &kinv * y)[0];
    let var = kernel_eval(q, q, params) - (kq.transpose() * &kinv * &kq)[0];
    (mean0 + mean, var.max(0.0))
}

fn points_strategy(d: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(Vec<f64>, f64)>> {
    prop::collection::vec((prop::collection::vec(0.0..1.0f64, d), 0.0..=1.0f64), n)
}

fn fixed_params(d: usize) -> KernelParams {
    KernelParams::isotropic(d, 0.4, 0.8, 1.5)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn interpolates_training_data(pts in points_strategy(2, 4..25)) {
        let data = dataset(&pts, toy);
        prop_assume!(data.len() >= 2);
        let gp = GpModel::with_params(unit(2), data.clone(), &fixed_params(2)).unwrap();
        let sv = gp.params().signal_variance * gp.standardization().scale.powi(2);
        for (p, y) in data.points.iter().zip(&data.values) {
            let (m, v) = gp.posterior(p);
            prop_assert!((m - y).abs() <= 1e-6, "mean {m} vs {y}");
            prop_assert!(v <= 1e-6 * sv.max(1.0));
        }
    }

    #[test]
    fn posterior_matches_dense_oracle(pts in points_strategy(2, 3..15), q in (prop::collection::vec(0.0..1.0f64, 2), 0.0..=1.0f64)) {
        let data = dataset(&pts, toy);
        prop_assume!(data.len() >= 2);
        let gp = GpModel::with_params(unit(2), data, &fixed_params(2)).unwrap();
        let qp = InputFidelityPoint::new(q.0, q.1);
        let (m, v) = gp.posterior(&qp);
        let (mo, vo) = dense_posterior(&gp, &qp);
        prop_assert!((m - mo).abs() <= 1e-7 * (1.0 + mo.abs()));
        prop_assert!((v - vo).abs() <= 1e-7 * (1.0 + vo));
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn kernel_matrix_is_positive_semidefinite(pts in points_strategy(3, 2..30)) {
        let params = KernelParams::isotropic(3, 0.3, 0.5, 2.0);
        let ps: Vec<InputFidelityPoint> = pts.iter().map(|(x, s)| InputFidelityPoint::new(x.clone(), *s)).collect();
        let n = ps.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel_eval(&ps[i], &ps[j], &params));
        let min = k.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-8 * params.signal_variance, "min eigenvalue {min}");
    }

    #[test]
    fn conditioning_never_increases_variance(
        pts in points_strategy(2, 3..12),
        new in (prop::collection::vec(0.0..1.0f64, 2), 0.0..=1.0f64),
        y in -3.0..3.0f64,
        tests in prop::collection::vec((prop::collection::vec(0.0..1.0f64, 2), 0.0..=1.0f64), 20),
    ) {
        let data = dataset(&pts, toy);
        prop_assume!(data.len() >= 2);
        let p = InputFidelityPoint::new(new.0, new.1);
        prop_assume!(!data.contains(&p));
        let gp = GpModel::with_params(unit(2), data, &fixed_params(2)).unwrap();
        let Ok(f) = gp.fantasy_update(&p, y) else { return Ok(()) };
        for (x, s) in tests {
            let q = InputFidelityPoint::new(x, s);
            prop_assert!(f.posterior(&q).1 <= gp.posterior(&q).1 + 1e-10);
        }
    }

    #[test]
    fn batch_equals_pointwise(pts in points_strategy(2, 3..12), qs in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 2), 1..20), s in 0.0..=1.0f64) {
        let data = dataset(&pts, toy);
        prop_assume!(data.len() >= 2);
        let gp = GpModel::with_params(unit(2), data, &fixed_params(2)).unwrap();
        let batch = gp.posterior_mean_batch(&qs, s);
        for (x, m) in qs.iter().zip(batch) {
            let (mp, _) = gp.posterior(&InputFidelityPoint::new(x.clone(), s));
            prop_assert!((m - mp).abs() <= 1e-12 * (1.0 + mp.abs()));
        }
    }
}

#[test]
fn fantasy_update_agrees_with_refactorization() {
    let mut r = rng(11);
    let pts: Vec<(Vec<f64>, f64)> = (0..5).map(|_| (vec![r.gen(), r.gen()], r.gen())).collect();
    let data = dataset(&pts, toy);
    let params = fixed_params(2);
    let gp = GpModel::with_params(unit(2), data.clone(), &params).unwrap();
    let p = InputFidelityPoint::new(vec![0.42, 0.77], 0.6);
    let y = 0.9;
    let fast = gp.fantasy_update(&p, y).unwrap();
    // refactorize with the same standardization and kernel
    let mut full_data = data;
    full_data.push(p, y, 1.0).unwrap();
    let mut frozen = gp.params().clone();
    frozen.jitter = fast.params().jitter;
    let full = GpModel::from_parts(unit(2), full_data, &frozen, gp.standardization()).unwrap();
    for _ in 0..100 {
        let q = InputFidelityPoint::new(vec![r.gen(), r.gen()], r.gen());
        let (a, va) = fast.posterior(&q);
        let (b, vb) = full.posterior(&q);
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        assert!((va - vb).abs() <= 1e-8);
    }
}

#[test]
fn observed_top_fidelity_points_have_vanishing_variance() {
    let mut r = rng(5);
    let pts: Vec<(Vec<f64>, f64)> = (0..30)
        .map(|i| {
            (
                vec![r.gen(), r.gen()],
                if i % 3 == 0 { 1.0 } else { r.gen::<f64>() * 0.5 },
            )
        })
        .collect();
    let data = dataset(&pts, toy);
    let gp = GpModel::fit(
        data.clone(),
        unit(2),
        &FitOptions {
            restarts: 2,
            seed: 1,
            ..FitOptions::default()
        },
    )
    .unwrap();
    for p in data.points.iter().filter(|p| p.s == 1.0) {
        assert!(gp.posterior(p).1 <= 1e-6);
    }
}

#[test]
fn recovers_length_scale_of_a_prior_sample() {
    let (gamma, var, n) = (0.3, 2.0, 40);
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let truth = KernelParams::isotropic(1, gamma, 1.0, var);
    let pts: Vec<InputFidelityPoint> = xs.iter().map(|&x| InputFidelityPoint::new(vec![x], 1.0)).collect();
    let k = DMatrix::from_fn(n, n, |i, j| kernel_eval(&pts[i], &pts[j], &truth)) + DMatrix::identity(n, n) * 1e-10;
    let l = k.cholesky().unwrap().l();
    let mut r = rng(2024);
    let z = DVector::from_iterator(n, (0..n).map(|_| r.sample::<f64, _>(StandardNormal)));
    let y = l * z;
    let data = Dataset::from_parts(pts, y.iter().copied().collect(), vec![1.0; n]).unwrap();
    let domain = Domain::new(vec![0.0], vec![1.0], FidelitySpace::Discrete { levels: vec![1.0] }).unwrap();
    let gp = GpModel::fit(
        data,
        domain,
        &FitOptions {
            restarts: 8,
            seed: 3,
            ..FitOptions::default()
        },
    )
    .unwrap();
    let g = gp.params().gamma_x[0];
    assert!(g > gamma / 2.0 && g < gamma * 2.0, "length scale {g}");
}

#[test]
fn two_far_points_with_equal_values_fit_finitely() {
    let data = Dataset::from_parts(
        vec![
            InputFidelityPoint::new(vec![0.0], 1.0),
            InputFidelityPoint::new(vec![1.0], 1.0),
        ],
        vec![2.0, 2.0],
        vec![1.0, 1.0],
    )
    .unwrap();
    let gp = GpModel::fit(data, unit(1), &FitOptions::default()).unwrap();
    let p = gp.params();
    assert!(p.signal_variance.is_finite() && p.gamma_x[0].is_finite() && p.gamma_s.is_finite());
    assert!(gp.log_marginal_likelihood().is_finite());
}

#[test]
fn refit_is_deterministic() {
    let mut r = rng(9);
    let pts: Vec<(Vec<f64>, f64)> = (0..15).map(|_| (vec![r.gen(), r.gen()], r.gen())).collect();
    let data = dataset(&pts, toy);
    let opts = FitOptions {
        restarts: 3,
        seed: 4,
        ..FitOptions::default()
    };
    let a = GpModel::fit(data.clone(), unit(2), &opts).unwrap();
    let b = GpModel::fit(data, unit(2), &opts).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn fit_needs_two_points() {
    let data = Dataset::from_parts(vec![InputFidelityPoint::new(vec![0.5], 1.0)], vec![1.0], vec![1.0]).unwrap();
    assert!(matches!(
        GpModel::fit(data, unit(1), &FitOptions::default()),
        Err(camera::Error::InsufficientData { .. })
    ));
}
