//! Failure-probability estimators: Monte Carlo, importance sampling, and the
//! surrogate-filtered Gaussian-mixture biasing density.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{em_fit, EmOptions, GaussianMixture, NominalDensity};
use crate::mfgp::{Domain, GpModel, LimitState};
use crate::model::MultifidelityModel;
use crate::stats::{derive_seed, stream_rng};
use crate::{Error, Result};

const POOL_CHUNK: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEstimate {
    pub p_hat: f64,
    /// Variance of `p_hat` itself (already divided by the sample count).
    pub variance: f64,
    pub n_samples: usize,
    pub cumulative_cost: f64,
}

impl FailureEstimate {
    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Mean and variance-of-the-mean of `values`, summed in order.
fn weighted_estimate(values: &[f64]) -> FailureEstimate {
    let n = values.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in values {
        s1 += v;
        s2 += v * v;
    }
    let p = s1 / n;
    FailureEstimate {
        p_hat: p,
        variance: (s2 / n - p * p).max(0.0) / n,
        n_samples: values.len(),
        cumulative_cost: 0.0,
    }
}

/// Plain Monte Carlo estimate from failure indicators.
pub fn mc_estimate(indicators: &[bool]) -> Result<FailureEstimate> {
    if indicators.is_empty() {
        return Err(Error::EmptySample);
    }
    let v: Vec<f64> = indicators.iter().map(|&i| if i { 1.0 } else { 0.0 }).collect();
    Ok(weighted_estimate(&v))
}

/// Importance-sampling estimate with weights `exp(log_q - log_qprime)`.
///
/// With `log_q == log_qprime` every weight is exactly one and the result is
/// bit-identical to [`mc_estimate`].
pub fn is_estimate(indicators: &[bool], log_q: &[f64], log_qprime: &[f64]) -> Result<FailureEstimate> {
    if indicators.is_empty() {
        return Err(Error::EmptySample);
    }
    if log_q.len() != indicators.len() || log_qprime.len() != indicators.len() {
        return Err(Error::LengthMismatch {
            what: "indicators/log densities",
            left: indicators.len(),
            right: log_q.len().min(log_qprime.len()),
        });
    }
    let mut v = Vec::with_capacity(indicators.len());
    for (index, ((&i, lq), lqp)) in indicators.iter().zip(log_q).zip(log_qprime).enumerate() {
        let w = (lq - lqp).exp();
        if !w.is_finite() {
            return Err(Error::NonFiniteWeight { index });
        }
        v.push(if i { w } else { 0.0 });
    }
    Ok(weighted_estimate(&v))
}

/// Points of a uniform pool that the surrogate predicts to fail.
#[derive(Clone, Debug, Default)]
pub struct BiasingSet {
    pub points: Vec<Vec<f64>>,
    /// Pool points actually screened.
    pub screened: usize,
}

impl BiasingSet {
    pub fn m(&self) -> usize {
        self.points.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasingOptions {
    pub pool_size: usize,
    pub components: usize,
    pub seed: u64,
    pub em_max_iters: usize,
    pub em_tol: f64,
    /// Screening stops once this many failure points are collected; the pool
    /// is iid uniform, so the retained points are a uniform draw from the
    /// predicted failure region either way.
    pub max_fit_samples: usize,
    /// Share of the pool (smallest predicted `g`) used when nothing is predicted to fail.
    pub fallback_fraction: f64,
}

impl Default for BiasingOptions {
    fn default() -> Self {
        Self {
            pool_size: 10_000_000,
            components: 25,
            seed: 0,
            em_max_iters: 500,
            em_tol: 1e-6,
            max_fit_samples: 20_000,
            fallback_fraction: 1e-3,
        }
    }
}

impl BiasingOptions {
    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 {
            return Err(Error::config("biasing.pool_size", "must be positive"));
        }
        if self.components == 0 {
            return Err(Error::config("biasing.components", "must be positive"));
        }
        if self.max_fit_samples == 0 {
            return Err(Error::config("biasing.max_fit_samples", "must be positive"));
        }
        if !(self.fallback_fraction > 0.0 && self.fallback_fraction <= 1.0) {
            return Err(Error::config("biasing.fallback_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Biasing {
    pub mixture: GaussianMixture,
    /// Number of predicted-failure points the mixture was fitted on.
    pub m: usize,
    pub screened: usize,
    /// The surrogate predicted no failure anywhere in the pool.
    pub fallback: bool,
}

struct Ranked(f64, usize, Vec<f64>);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn pool_chunk(domain: &Domain, seed: u64, chunk: usize, len: usize) -> Vec<Vec<f64>> {
    let mut r = stream_rng(seed, chunk as u64);
    (0..len)
        .map(|_| {
            domain
                .lower()
                .iter()
                .zip(domain.upper())
                .map(|(l, u)| r.gen_range(*l..*u))
                .collect()
        })
        .collect()
}

/// Screens a uniform pool with the surrogate mean at `s = 1`. Also returns the
/// `keep_lowest` pool points with the smallest predicted `g`, for the fallback.
fn screen_pool(
    model: &GpModel,
    limit: &LimitState,
    opts: &BiasingOptions,
    keep_lowest: usize,
) -> (BiasingSet, Vec<Vec<f64>>) {
    let domain = model.domain();
    let n_chunks = opts.pool_size.div_ceil(POOL_CHUNK);
    let batch = rayon::current_num_threads().max(1) * 2;
    let mut set = BiasingSet::default();
    let mut lowest: BinaryHeap<Ranked> = BinaryHeap::new();
    let mut start = 0;
    while start < n_chunks && set.points.len() < opts.max_fit_samples {
        let end = (start + batch).min(n_chunks);
        let results: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (start..end)
            .into_par_iter()
            .map(|c| {
                let len = POOL_CHUNK.min(opts.pool_size - c * POOL_CHUNK);
                let xs = pool_chunk(domain, opts.seed, c, len);
                let g: Vec<f64> = model
                    .posterior_mean_batch(&xs, 1.0)
                    .iter()
                    .map(|m| limit.g(*m))
                    .collect();
                (xs, g)
            })
            .collect();
        for (c, (xs, g)) in (start..end).zip(results) {
            set.screened += xs.len();
            for (i, (x, gi)) in xs.into_iter().zip(g).enumerate() {
                if gi <= 0.0 {
                    if set.points.len() < opts.max_fit_samples {
                        set.points.push(x);
                    }
                } else if set.points.is_empty() {
                    lowest.push(Ranked(gi, c * POOL_CHUNK + i, x));
                    if lowest.len() > keep_lowest {
                        lowest.pop();
                    }
                }
            }
        }
        start = end;
    }
    let fallback = lowest.into_sorted_vec().into_iter().map(|r| r.2).collect();
    (set, fallback)
}

/// Surrogate-filtered biasing set without fitting a mixture.
pub fn biasing_set(model: &GpModel, limit: &LimitState, opts: &BiasingOptions) -> BiasingSet {
    screen_pool(model, limit, opts, 0).0
}

/// Fits the Gaussian-mixture biasing density on the predicted failure region.
pub fn build_biasing(model: &GpModel, limit: &LimitState, opts: &BiasingOptions) -> Result<Biasing> {
    opts.validate()?;
    let keep = ((opts.pool_size as f64 * opts.fallback_fraction).ceil() as usize).max(opts.components.min(2));
    let (set, lowest) = screen_pool(model, limit, opts, keep);
    let domain = model.domain();
    let (points, fallback) = if set.points.is_empty() {
        log::warn!(
            "surrogate predicts no failure in a pool of {}; fitting on the {} points closest to the limit state",
            set.screened,
            lowest.len()
        );
        (lowest, true)
    } else {
        (set.points, false)
    };
    let em = EmOptions {
        components: opts.components,
        seed: derive_seed(opts.seed, 7),
        max_iters: opts.em_max_iters,
        tol: opts.em_tol,
        variance_floor: Some((0..domain.dim()).map(|i| 1e-10 * domain.side(i).powi(2)).collect()),
    };
    let fit = em_fit(&points, &em)?;
    Ok(Biasing {
        mixture: fit.mixture,
        m: points.len(),
        screened: set.screened,
        fallback,
    })
}

/// Evaluates `model` and maps failures to [`Error::Evaluation`] carrying the point.
pub fn evaluate_model(model: &dyn MultifidelityModel, x: &[f64], s: f64) -> Result<f64> {
    match model.evaluate(x, s) {
        Ok(y) if y.is_finite() => Ok(y),
        Ok(y) => Err(Error::Evaluation {
            x: x.to_vec(),
            s,
            message: format!("non-finite output {y}"),
        }),
        Err(e @ (Error::Evaluation { .. } | Error::External(_))) => Err(e),
        Err(e) => Err(Error::Evaluation {
            x: x.to_vec(),
            s,
            message: e.to_string(),
        }),
    }
}

/// Importance sampling with a given biasing mixture against the true model at `s = 1`.
///
/// Draws that fall outside the nominal support carry zero weight and are not
/// evaluated; `cumulative_cost` counts only evaluated draws.
pub fn importance_sample(
    mixture: &GaussianMixture,
    truth: &dyn MultifidelityModel,
    limit: &LimitState,
    nominal: &NominalDensity,
    n: usize,
    seed: u64,
    cost_per_eval: f64,
) -> Result<FailureEstimate> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let xs = mixture.sample(n, seed);
    let log_q: Vec<f64> = xs.iter().map(|x| nominal.log_pdf(x)).collect();
    let log_qprime = mixture.log_pdf_batch(&xs);
    let outputs: Vec<Option<f64>> = xs
        .par_iter()
        .zip(&log_q)
        .map(|(x, lq)| {
            if lq.is_finite() {
                evaluate_model(truth, x, 1.0).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let evaluated = outputs.iter().filter(|o| o.is_some()).count();
    let indicators: Vec<bool> = outputs.iter().map(|o| o.is_some_and(|y| limit.is_failure(y))).collect();
    let mut est = is_estimate(&indicators, &log_q, &log_qprime)?;
    est.cumulative_cost = evaluated as f64 * cost_per_eval;
    Ok(est)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsOptions {
    pub n: usize,
    pub seed: u64,
    pub biasing: BiasingOptions,
}

impl Default for IsOptions {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            biasing: BiasingOptions::default(),
        }
    }
}

/// Builds the biasing density from `model` and estimates the failure probability with `truth`.
pub fn estimate_failure_probability(
    model: &GpModel,
    truth: &dyn MultifidelityModel,
    limit: &LimitState,
    nominal: &NominalDensity,
    opts: &IsOptions,
    cost_per_eval: f64,
) -> Result<(FailureEstimate, Biasing)> {
    let biasing = build_biasing(model, limit, &opts.biasing)?;
    let est = importance_sample(
        &biasing.mixture,
        truth,
        limit,
        nominal,
        opts.n,
        opts.seed,
        cost_per_eval,
    )?;
    Ok((est, biasing))
}

/// Uniform Monte Carlo over the domain at `s = 1`.
pub fn monte_carlo(
    truth: &dyn MultifidelityModel,
    domain: &Domain,
    limit: &LimitState,
    n: usize,
    seed: u64,
) -> Result<FailureEstimate> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let n_chunks = n.div_ceil(POOL_CHUNK);
    let parts: Vec<Vec<bool>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let len = POOL_CHUNK.min(n - c * POOL_CHUNK);
            pool_chunk(domain, seed, c, len)
                .iter()
                .map(|x| evaluate_model(truth, x, 1.0).map(|y| limit.is_failure(y)))
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;
    mc_estimate(&parts.concat())
}
