use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::stats::{log_sum_exp, rng};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian mixture with diagonal covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    /// Builds a mixture; weights are renormalized to sum to one.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::LengthMismatch {
                what: "mixture weights/means/variances",
                left: weights.len(),
                right: means.len().min(variances.len()),
            });
        }
        let d = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(Error::InvalidParameter("inconsistent component dimension".into()));
        }
        if variances.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("variances must be positive".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        Ok(Self {
            weights: weights.iter().map(|w| w / total).collect(),
            means,
            variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Per-component `log w_k - 1/2 sum log(2 pi v_kj)`.
    fn log_norms(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.variances)
            .map(|(w, v)| w.ln() - 0.5 * v.iter().map(|s| LN_2PI + s.ln()).sum::<f64>())
            .collect()
    }

    fn component_terms(&self, norms: &[f64], x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let q: f64 = x
                .iter()
                .zip(&self.means[k])
                .zip(&self.variances[k])
                .map(|((x, m), v)| (x - m) * (x - m) / v)
                .sum();
            *o = norms[k] - 0.5 * q;
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let norms = self.log_norms();
        let mut terms = vec![0.0; self.components()];
        self.component_terms(&norms, x, &mut terms);
        log_sum_exp(&terms)
    }

    pub fn log_pdf_batch(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let norms = self.log_norms();
        xs.par_iter()
            .map_init(
                || vec![0.0; self.components()],
                |terms, x| {
                    self.component_terms(&norms, x, terms);
                    log_sum_exp(terms)
                },
            )
            .collect()
    }

    pub fn mean_log_likelihood(&self, xs: &[Vec<f64>]) -> f64 {
        self.log_pdf_batch(xs).iter().sum::<f64>() / xs.len() as f64
    }

    /// `n` draws: a component by weight, then an axis-aligned Gaussian.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng(seed);
        let pick = WeightedIndex::new(&self.weights).expect("weights validated at construction");
        (0..n)
            .map(|_| {
                let k = pick.sample(&mut r);
                self.means[k]
                    .iter()
                    .zip(&self.variances[k])
                    .map(|(m, v)| m + v.sqrt() * r.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

pub fn gmm_logpdf(g: &GaussianMixture, x: &[f64]) -> f64 {
    g.log_pdf(x)
}

pub fn gmm_sample(g: &GaussianMixture, n: usize, seed: u64) -> Vec<Vec<f64>> {
    g.sample(n, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub components: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once the mean log-likelihood gains less than this per iteration.
    pub tol: f64,
    /// Per-dimension variance floor; defaults to `1e-10 * range^2` of the samples.
    pub variance_floor: Option<Vec<f64>>,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            components: 25,
            seed: 0,
            max_iters: 500,
            tol: 1e-6,
            variance_floor: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// Mean log-likelihood of the samples before each M-step.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// All samples were identical; the mixture is a single floored component.
    pub degenerate: bool,
}

#[derive(Clone)]
struct Suff {
    ll: f64,
    nk: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

/// Expectation–maximization for a diagonal Gaussian mixture, seeded by k-means++.
///
/// The result is deterministic for a given seed and sample order.
pub fn em_fit(samples: &[Vec<f64>], opts: &EmOptions) -> Result<EmFit> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if opts.components == 0 {
        return Err(Error::InvalidParameter("need at least one component".into()));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidParameter("samples must share a nonzero dimension".into()));
    }
    let n = samples.len();
    let mut lo = samples[0].clone();
    let mut hi = samples[0].clone();
    for s in samples {
        for j in 0..d {
            lo[j] = lo[j].min(s[j]);
            hi[j] = hi[j].max(s[j]);
        }
    }
    let floor: Vec<f64> = match &opts.variance_floor {
        Some(f) if f.len() == d => f.clone(),
        Some(f) => {
            return Err(Error::LengthMismatch {
                what: "variance floor/dimension",
                left: f.len(),
                right: d,
            })
        }
        None => (0..d)
            .map(|j| {
                let r = hi[j] - lo[j];
                if r > 0.0 {
                    1e-10 * r * r
                } else {
                    1e-10
                }
            })
            .collect(),
    };

    if (0..d).all(|j| lo[j] == hi[j]) {
        log::warn!("all {n} EM samples are identical; returning a point-mass component");
        let mixture = GaussianMixture::new(vec![1.0], vec![samples[0].clone()], vec![floor])?;
        return Ok(EmFit {
            mixture,
            trace: Vec::new(),
            converged: true,
            degenerate: true,
        });
    }

    let k = opts.components.min(n);
    let mut r = rng(opts.seed);
    let mut means = kmeans_pp(samples, k, &mut r);
    let mean_all: Vec<f64> = (0..d)
        .map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64)
        .collect();
    let var_all: Vec<f64> = (0..d)
        .map(|j| {
            let v = samples.iter().map(|s| (s[j] - mean_all[j]).powi(2)).sum::<f64>() / n as f64;
            v.max(floor[j])
        })
        .collect();
    let mut vars = vec![var_all; k];
    let mut weights = vec![1.0 / k as f64; k];

    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iters.max(1) {
        let g = GaussianMixture {
            weights: weights.clone(),
            means: means.clone(),
            variances: vars.clone(),
        };
        let norms = g.log_norms();
        let zero = Suff {
            ll: 0.0,
            nk: vec![0.0; k],
            s1: vec![0.0; k * d],
            s2: vec![0.0; k * d],
        };
        let parts: Vec<Suff> = samples
            .par_chunks(1024)
            .map(|chunk| {
                let mut acc = zero.clone();
                let mut terms = vec![0.0; k];
                for x in chunk {
                    g.component_terms(&norms, x, &mut terms);
                    let lse = log_sum_exp(&terms);
                    acc.ll += lse;
                    for c in 0..k {
                        let resp = (terms[c] - lse).exp();
                        if resp == 0.0 {
                            continue;
                        }
                        acc.nk[c] += resp;
                        for j in 0..d {
                            // centered on the current mean for numerical stability
                            let t = x[j] - means[c][j];
                            acc.s1[c * d + j] += resp * t;
                            acc.s2[c * d + j] += resp * t * t;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut tot = zero;
        for p in parts {
            tot.ll += p.ll;
            for c in 0..k {
                tot.nk[c] += p.nk[c];
            }
            for i in 0..k * d {
                tot.s1[i] += p.s1[i];
                tot.s2[i] += p.s2[i];
            }
        }
        let ll = tot.ll / n as f64;
        let gain = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        if let Some(gain) = gain {
            if gain < opts.tol {
                converged = true;
                break;
            }
        }
        for c in 0..k {
            let nk = tot.nk[c];
            weights[c] = nk / n as f64;
            if nk < 1e-12 {
                continue;
            }
            for j in 0..d {
                let shift = tot.s1[c * d + j] / nk;
                let v = tot.s2[c * d + j] / nk - shift * shift;
                means[c][j] += shift;
                vars[c][j] = v.max(floor[j]);
            }
        }
    }
    let mixture = GaussianMixture::new(weights, means, vars)?;
    Ok(EmFit {
        mixture,
        trace,
        converged,
        degenerate: false,
    })
}

fn kmeans_pp<R: Rng>(samples: &[Vec<f64>], k: usize, r: &mut R) -> Vec<Vec<f64>> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let n = samples.len();
    let mut centers = vec![samples[r.gen_range(0..n)].clone()];
    let mut best: Vec<f64> = samples.iter().map(|s| dist2(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let idx = if total > 0.0 {
            let mut u = r.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, b) in best.iter().enumerate() {
                if u < *b {
                    pick = i;
                    break;
                }
                u -= b;
            }
            pick
        } else {
            r.gen_range(0..n)
        };
        let c = samples[idx].clone();
        for (b, s) in best.iter_mut().zip(samples) {
            *b = b.min(dist2(s, &c));
        }
        centers.push(c);
    }
    centers
}
