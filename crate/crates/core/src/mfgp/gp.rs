use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::UnitKernel;
use super::{Dataset, Domain, InputFidelityPoint, KernelParams};
use crate::{Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

/// Affine map between problem-unit outputs and the standardized outputs the GP is fit on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn from_values(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::identity();
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = var.sqrt();
        let scale = if scale.is_finite() && scale > 1e-12 * mean.abs().max(1.0) {
            scale
        } else {
            1.0
        };
        Self { mean, scale }
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, scale: 1.0 }
    }
}

/// Zero-mean prior prediction `(0, sigma^2)` used before any data is seen.
pub fn prior_predict(params: &KernelParams) -> (f64, f64) {
    (0.0, params.signal_variance)
}

/// Versioned, serializable snapshot of a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpCheckpoint {
    pub version: u32,
    pub domain: Domain,
    pub params: KernelParams,
    pub data: Dataset,
    pub standardization: Standardization,
}

/// A conditioned Gaussian process. Immutable once built.
#[derive(Clone, Debug)]
pub struct GpModel {
    domain: Domain,
    data: Dataset,
    params: KernelParams,
    standardization: Standardization,
    pub(crate) kernel: UnitKernel,
    pub(crate) jitter: f64,
    /// Training inputs in unit coordinates, `width()` values per point.
    pub(crate) z: Vec<f64>,
    pub(crate) y_std: DVector<f64>,
    pub(crate) chol: DMatrix<f64>,
    pub(crate) alpha: DVector<f64>,
}

/// Cholesky factor of `k + jitter * I` using the smallest jitter on the ladder
/// `max(min_jitter, 1e-10 sigma^2) * 10^k` that succeeds, up to `1e-4 sigma^2`.
pub(crate) fn cholesky_with_jitter(
    k: &DMatrix<f64>,
    signal_variance: f64,
    min_jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let cap = 1e-4 * signal_variance;
    let mut jitter = min_jitter.max(1e-10 * signal_variance);
    loop {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        if jitter >= cap * (1.0 - 1e-12) {
            return Err(Error::SingularKernel { jitter });
        }
        jitter = (jitter * 10.0).min(cap);
    }
}

/// Solves `L v = b` in place for lower-triangular, column-major `L`.
pub(crate) fn forward_solve(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for j in 0..n {
        let col = &data[j * n..(j + 1) * n];
        b[j] /= col[j];
        let bj = b[j];
        for i in j + 1..n {
            b[i] -= col[i] * bj;
        }
    }
}

/// Solves `L^T x = b` in place.
pub(crate) fn backward_solve_t(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for j in (0..n).rev() {
        let col = &data[j * n..(j + 1) * n];
        let mut acc = b[j];
        for i in j + 1..n {
            acc -= col[i] * b[i];
        }
        b[j] = acc / col[j];
    }
}

impl GpModel {
    pub(crate) fn from_unit_kernel(
        domain: Domain,
        data: Dataset,
        kernel: UnitKernel,
        standardization: Standardization,
        min_jitter: f64,
    ) -> Result<Self> {
        let n = data.len();
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let w = kernel.width();
        if w != domain.dim() + 1 {
            return Err(Error::InvalidParameter(format!(
                "kernel has {} length scales, domain needs {}",
                w,
                domain.dim() + 1
            )));
        }
        let z = unit_points(&domain, &data)?;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(&z[i * w..(i + 1) * w], &z[j * w..(j + 1) * w]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let (chol, jitter) = cholesky_with_jitter(&k, kernel.signal_variance, min_jitter)?;
        let y_std = DVector::from_iterator(
            n,
            data.values
                .iter()
                .map(|v| (v - standardization.mean) / standardization.scale),
        );
        let alpha = chol.solve(&y_std);
        let chol = chol.unpack();
        let params = problem_params(&domain, &kernel, jitter, &standardization);
        Ok(Self {
            domain,
            data,
            params,
            standardization,
            kernel,
            jitter,
            z,
            y_std,
            chol,
            alpha,
        })
    }

    /// Conditions on `data` with fixed hyperparameters and standardization.
    pub fn from_parts(
        domain: Domain,
        data: Dataset,
        params: &KernelParams,
        standardization: Standardization,
    ) -> Result<Self> {
        params.validate()?;
        if params.gamma_x.len() != domain.dim() {
            return Err(Error::LengthMismatch {
                what: "gamma_x/domain",
                left: params.gamma_x.len(),
                right: domain.dim(),
            });
        }
        let s2 = standardization.scale * standardization.scale;
        let mut inv_ls: Vec<f64> = params
            .gamma_x
            .iter()
            .enumerate()
            .map(|(i, g)| domain.side(i) / g)
            .collect();
        inv_ls.push(1.0 / params.gamma_s);
        let kernel = UnitKernel {
            inv_ls,
            signal_variance: params.signal_variance / s2,
        };
        Self::from_unit_kernel(domain, data, kernel, standardization, params.jitter / s2)
    }

    /// Conditions on `data` with fixed hyperparameters, re-standardizing the outputs.
    pub fn with_params(domain: Domain, data: Dataset, params: &KernelParams) -> Result<Self> {
        let st = Standardization::from_values(&data.values);
        let mut p = params.clone();
        p.jitter = 0.0;
        Self::from_parts(domain, data, &p, st)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Lower Cholesky factor of the standardized `K + jitter I`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Standardized kernel matrix including the jitter on the diagonal.
    pub fn regularized_kernel_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let w = self.kernel.width();
        DMatrix::from_fn(n, n, |i, j| {
            let v = self
                .kernel
                .eval(&self.z[i * w..(i + 1) * w], &self.z[j * w..(j + 1) * w]);
            if i == j {
                v + self.jitter
            } else {
                v
            }
        })
    }

    /// Log marginal likelihood of the standardized outputs.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let logdet: f64 = self.chol.diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * self.y_std.dot(&self.alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    pub(crate) fn unit_point(&self, x: &[f64], s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.kernel.width()];
        self.domain.to_unit_into(x, &mut out);
        out[self.domain.dim()] = s;
        out
    }

    /// `k(X_i, zq)` for every training point.
    pub(crate) fn cross_cov(&self, zq: &[f64], out: &mut [f64]) {
        let w = self.kernel.width();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.kernel.eval(&self.z[i * w..(i + 1) * w], zq);
        }
    }

    /// Standardized posterior mean and unclamped variance at a unit point.
    pub(crate) fn posterior_std(&self, zq: &[f64]) -> (f64, f64) {
        let mut k = vec![0.0; self.len()];
        self.cross_cov(zq, &mut k);
        let mean = k.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
        forward_solve(&self.chol, &mut k);
        let var = self.kernel.signal_variance - k.iter().map(|v| v * v).sum::<f64>();
        (mean, var)
    }

    pub(crate) fn to_problem_units(&self, mean: f64, var: f64) -> (f64, f64) {
        let st = self.standardization;
        (st.mean + st.scale * mean, st.scale * st.scale * var)
    }

    /// Posterior mean and variance; variance clamped to be nonnegative.
    pub fn posterior(&self, p: &InputFidelityPoint) -> (f64, f64) {
        let (m, v) = self.posterior_unclamped(p);
        (m, v.max(0.0))
    }

    /// Posterior mean and variance before clamping the variance at zero.
    pub fn posterior_unclamped(&self, p: &InputFidelityPoint) -> (f64, f64) {
        assert_eq!(p.x.len(), self.domain.dim(), "point dimension mismatch");
        let zq = self.unit_point(&p.x, p.s);
        let (m, v) = self.posterior_std(&zq);
        self.to_problem_units(m, v)
    }

    pub fn posterior_batch(&self, points: &[InputFidelityPoint]) -> Vec<(f64, f64)> {
        points.par_iter().map(|p| self.posterior(p)).collect()
    }

    /// Posterior mean only, at design points `xs` and a common fidelity.
    pub fn posterior_mean_batch(&self, xs: &[Vec<f64>], s: f64) -> Vec<f64> {
        xs.par_chunks(4096)
            .flat_map_iter(|chunk| {
                let mut k = vec![0.0; self.len()];
                chunk
                    .iter()
                    .map(|x| {
                        let zq = self.unit_point(x, s);
                        self.cross_cov(&zq, &mut k);
                        let m: f64 = k.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
                        self.standardization.mean + self.standardization.scale * m
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Conditions on one more observation `(p, y)` with frozen hyperparameters
    /// and standardization, by extending the Cholesky factor by one row.
    ///
    /// A point that is already in the data returns an unchanged copy.
    pub fn fantasy_update(&self, p: &InputFidelityPoint, y: f64) -> Result<GpModel> {
        if self.data.contains(p) {
            return Ok(self.clone());
        }
        if p.x.len() != self.domain.dim() {
            return Err(Error::LengthMismatch {
                what: "point/domain dimension",
                left: p.x.len(),
                right: self.domain.dim(),
            });
        }
        let n = self.len();
        let w = self.kernel.width();
        let zq = self.unit_point(&p.x, p.s);
        let mut c = vec![0.0; n];
        self.cross_cov(&zq, &mut c);
        forward_solve(&self.chol, &mut c);
        let d2 = self.kernel.signal_variance + self.jitter - c.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 0.0 && d2.is_finite()) {
            return Err(Error::SingularKernel { jitter: self.jitter });
        }
        let mut chol = DMatrix::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for (j, v) in c.iter().enumerate() {
            chol[(n, j)] = *v;
        }
        chol[(n, n)] = d2.sqrt();

        let st = self.standardization;
        let y_std = self.y_std.clone().insert_row(n, (y - st.mean) / st.scale);
        let mut alpha = y_std.clone();
        forward_solve(&chol, alpha.as_mut_slice());
        backward_solve_t(&chol, alpha.as_mut_slice());

        let mut z = self.z.clone();
        z.extend_from_slice(&zq[..w]);
        let mut data = self.data.clone();
        data.points.push(p.clone());
        data.values.push(y);
        data.costs.push(0.0);
        Ok(GpModel {
            domain: self.domain.clone(),
            data,
            params: self.params.clone(),
            standardization: st,
            kernel: self.kernel.clone(),
            jitter: self.jitter,
            z,
            y_std,
            chol,
            alpha,
        })
    }

    pub fn checkpoint(&self) -> GpCheckpoint {
        GpCheckpoint {
            version: CHECKPOINT_VERSION,
            domain: self.domain.clone(),
            params: self.params.clone(),
            data: self.data.clone(),
            standardization: self.standardization,
        }
    }

    pub fn from_checkpoint(c: GpCheckpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported checkpoint version {}",
                c.version
            )));
        }
        Self::from_parts(c.domain, c.data, &c.params, c.standardization)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(s)?)
    }
}

pub(crate) fn unit_points(domain: &Domain, data: &Dataset) -> Result<Vec<f64>> {
    let d = domain.dim();
    let w = d + 1;
    let mut z = vec![0.0; data.len() * w];
    for (i, p) in data.points.iter().enumerate() {
        if p.x.len() != d {
            return Err(Error::LengthMismatch {
                what: "point/domain dimension",
                left: p.x.len(),
                right: d,
            });
        }
        domain.to_unit_into(&p.x, &mut z[i * w..i * w + d]);
        z[i * w + d] = p.s;
    }
    Ok(z)
}

fn problem_params(domain: &Domain, kernel: &UnitKernel, jitter: f64, st: &Standardization) -> KernelParams {
    let d = domain.dim();
    let s2 = st.scale * st.scale;
    KernelParams {
        gamma_x: (0..d).map(|i| domain.side(i) / kernel.inv_ls[i]).collect(),
        gamma_s: 1.0 / kernel.inv_ls[d],
        signal_variance: kernel.signal_variance * s2,
        jitter: jitter * s2,
    }
}
