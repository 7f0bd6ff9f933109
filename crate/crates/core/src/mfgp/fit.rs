//! Type-II maximum likelihood for the kernel hyperparameters.
//!
//! The search runs over `theta = [log ls_x.., log ls_s, log sigma^2]` in unit
//! coordinates and standardized outputs. Box bounds are enforced through a
//! logistic reparameterization, and each restart is an L-BFGS run.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::gp::{cholesky_with_jitter, unit_points, GpModel, Standardization};
use super::kernel::{matern52, matern52_dlog, UnitKernel};
use super::{Dataset, Domain, KernelParams};
use crate::stats::rng;
use crate::{Error, Result};

const LS_BOUNDS: (f64, f64) = (1e-2, 1e2);
const SV_BOUNDS: (f64, f64) = (1e-4, 1e4);
const INFEASIBLE: f64 = 1e20;

#[derive(Clone, Debug)]
pub struct FitOptions {
    /// Number of multistart L-BFGS runs; the best log likelihood wins.
    pub restarts: usize,
    pub seed: u64,
    /// Starting point for the first restart, typically the previous fit.
    pub warm_start: Option<KernelParams>,
    pub max_iters: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            warm_start: None,
            max_iters: 100,
        }
    }
}

fn bounds(width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![LS_BOUNDS.0.ln(); width];
    let mut hi = vec![LS_BOUNDS.1.ln(); width];
    lo.push(SV_BOUNDS.0.ln());
    hi.push(SV_BOUNDS.1.ln());
    (lo, hi)
}

/// Negative log marginal likelihood and its gradient in `theta`.
///
/// Returns `None` when the kernel matrix cannot be factorized.
pub(crate) fn nll_and_grad(z: &[f64], y: &DVector<f64>, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let kern = UnitKernel::from_log(theta);
    let w = kern.width();
    let d = w - 1;
    let n = y.len();
    let sv = kern.signal_variance;

    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kern.eval(&z[i * w..(i + 1) * w], &z[j * w..(j + 1) * w]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let (chol, _) = cholesky_with_jitter(&k, sv, 0.0).ok()?;
    let alpha = chol.solve(y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let nll = 0.5 * y.dot(&alpha) + logdet + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    if !nll.is_finite() {
        return None;
    }

    // W = alpha alpha^T - K^{-1}; d loglik / d theta_j = 1/2 tr(W dK_j)
    let mut wm = chol.inverse();
    wm.neg_mut();
    wm.ger(1.0, &alpha, &alpha, 1.0);

    let mut g = vec![0.0; w + 1];
    let mut t2 = vec![0.0; d];
    for i in 0..n {
        g[w] += wm[(i, i)] * sv;
        let zi = &z[i * w..(i + 1) * w];
        for j in 0..i {
            let zj = &z[j * w..(j + 1) * w];
            let wij = 2.0 * wm[(i, j)];
            let mut rx2 = 0.0;
            for c in 0..d {
                let t = (zi[c] - zj[c]) * kern.inv_ls[c];
                t2[c] = t * t;
                rx2 += t2[c];
            }
            let rx = rx2.sqrt();
            let ts = (zi[d] - zj[d]).abs() * kern.inv_ls[d];
            let (mx, ms) = (matern52(rx), matern52(ts));
            let fx = wij * sv * ms * matern52_dlog(rx);
            for c in 0..d {
                g[c] += fx * t2[c];
            }
            g[d] += wij * sv * mx * matern52_dlog(ts) * ts * ts;
            g[w] += wij * sv * mx * ms;
        }
    }
    Some((nll, g.into_iter().map(|v| -0.5 * v).collect()))
}

struct Tracker {
    best: Option<(Vec<f64>, f64)>,
}

struct LmlProblem<'a> {
    z: &'a [f64],
    y: &'a DVector<f64>,
    lo: &'a [f64],
    hi: &'a [f64],
    tracker: &'a RefCell<Tracker>,
    cache: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn to_theta(u: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(lo.iter().zip(hi))
        .map(|(u, (l, h))| l + (h - l) * logistic(*u))
        .collect()
}

fn to_u(theta: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(t, (l, h))| {
            let p = ((t - l) / (h - l)).clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        })
        .collect()
}

impl LmlProblem<'_> {
    fn eval(&self, u: &[f64]) -> (f64, Vec<f64>) {
        if let Some((cu, c, g)) = self.cache.borrow().as_ref() {
            if cu == u {
                return (*c, g.clone());
            }
        }
        let theta = to_theta(u, self.lo, self.hi);
        let (cost, grad) = match nll_and_grad(self.z, self.y, &theta) {
            Some((c, gt)) => {
                let gu = gt
                    .iter()
                    .zip(u)
                    .zip(self.lo.iter().zip(self.hi))
                    .map(|((g, u), (l, h))| {
                        let p = logistic(*u);
                        g * (h - l) * p * (1.0 - p)
                    })
                    .collect();
                let mut tr = self.tracker.borrow_mut();
                if tr.best.as_ref().is_none_or(|(_, b)| c < *b) {
                    tr.best = Some((theta, c));
                }
                (c, gu)
            }
            None => (INFEASIBLE, u.to_vec()),
        };
        *self.cache.borrow_mut() = Some((u.to_vec(), cost, grad.clone()));
        (cost, grad)
    }
}

impl CostFunction for LmlProblem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(u).0)
    }
}

impl Gradient for LmlProblem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(u).1)
    }
}

/// One L-BFGS run from `theta0`; returns the best feasible point evaluated.
fn local_search(
    z: &[f64],
    y: &DVector<f64>,
    theta0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iters: u64,
) -> Option<(Vec<f64>, f64)> {
    let tracker = RefCell::new(Tracker { best: None });
    let problem = LmlProblem {
        z,
        y,
        lo,
        hi,
        tracker: &tracker,
        cache: RefCell::new(None),
    };
    let u0 = to_u(theta0, lo, hi);
    problem.eval(&u0);
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7)
        .with_tolerance_grad(1e-7)
        .and_then(|s| s.with_tolerance_cost(1e-10));
    if let Ok(solver) = solver {
        // line-search failures just end the run; the tracker keeps the best point
        let _ = Executor::new(problem, solver)
            .configure(|state| state.param(u0).max_iters(max_iters))
            .run();
    }
    tracker.into_inner().best
}

fn theta_from_params(params: &KernelParams, domain: &Domain, st: &Standardization, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let d = domain.dim();
    let mut theta: Vec<f64> = (0..d).map(|i| (params.gamma_x[i] / domain.side(i)).ln()).collect();
    theta.push(params.gamma_s.ln());
    theta.push((params.signal_variance / (st.scale * st.scale)).ln());
    theta
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(t, (l, h))| t.clamp(*l, *h))
        .collect()
}

impl GpModel {
    /// Fits hyperparameters by maximizing the log marginal likelihood
    /// (best of `restarts` local searches) and conditions on `data`.
    pub fn fit(data: Dataset, domain: Domain, opts: &FitOptions) -> Result<GpModel> {
        if data.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: data.len(),
            });
        }
        let st = Standardization::from_values(&data.values);
        let z = unit_points(&domain, &data)?;
        let y = DVector::from_iterator(data.len(), data.values.iter().map(|v| (v - st.mean) / st.scale));
        let w = domain.dim() + 1;
        let (lo, hi) = bounds(w);

        let mut r = rng(opts.seed);
        let restarts = opts.restarts.max(1);
        let starts: Vec<Vec<f64>> = (0..restarts)
            .map(|i| {
                if i == 0 {
                    match &opts.warm_start {
                        Some(p) if p.gamma_x.len() == domain.dim() => theta_from_params(p, &domain, &st, &lo, &hi),
                        _ => {
                            let mut t = vec![0.3f64.ln(); w];
                            t.push(0.0);
                            t
                        }
                    }
                } else {
                    lo.iter().zip(&hi).map(|(l, h)| r.gen_range(*l..*h)).collect()
                }
            })
            .collect();

        let results: Vec<Option<(Vec<f64>, f64)>> = starts
            .par_iter()
            .map(|t0| local_search(&z, &y, t0, &lo, &hi, opts.max_iters))
            .collect();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for res in results.into_iter().flatten() {
            if best.as_ref().is_none_or(|(_, b)| res.1 < *b) {
                best = Some(res);
            }
        }
        let (theta, _) = best.ok_or(Error::SingularKernel {
            jitter: 1e-4 * SV_BOUNDS.1,
        })?;
        GpModel::from_unit_kernel(domain, data, UnitKernel::from_log(&theta), st, 0.0)
    }
}

/// Log marginal likelihood of `data` (standardized outputs) under fixed hyperparameters.
pub fn log_marginal_likelihood(data: &Dataset, domain: &Domain, params: &KernelParams) -> Result<f64> {
    Ok(GpModel::with_params(domain.clone(), data.clone(), params)?.log_marginal_likelihood())
}
