//! Multifidelity Gaussian-process regression over the joint space `X × S`.
//!
//! Observations are noise-free. The covariance is a product of anisotropic
//! Matérn-5/2 correlations in the design coordinates and in the fidelity.
//! Inputs are mapped to the unit cube and outputs standardized internally;
//! every public method speaks problem units.

mod fit;
mod gp;
mod kernel;

pub use fit::{log_marginal_likelihood, FitOptions};
pub(crate) use gp::forward_solve;
pub use gp::{prior_predict, GpCheckpoint, GpModel, Standardization};
pub use kernel::{kernel_eval, matern52};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fidelity space `S`: either the whole interval `[0,1]` or a finite set of levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FidelitySpace {
    Continuous,
    Discrete { levels: Vec<f64> },
}

impl FidelitySpace {
    pub fn contains(&self, s: f64) -> bool {
        match self {
            FidelitySpace::Continuous => (0.0..=1.0).contains(&s),
            FidelitySpace::Discrete { levels } => levels.contains(&s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FidelitySpace::Discrete { levels } = self {
            if levels.is_empty() {
                return Err(Error::InvalidDomain("fidelity set is empty".into()));
            }
            if levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidDomain(
                    "fidelity levels must be strictly increasing".into(),
                ));
            }
            if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(Error::InvalidDomain("fidelity levels must lie in [0,1]".into()));
            }
            if *levels.last().unwrap() != 1.0 {
                return Err(Error::InvalidDomain("fidelity set must contain 1.0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default = "continuous")]
    fidelity: FidelitySpace,
}

fn continuous() -> FidelitySpace {
    FidelitySpace::Continuous
}

impl TryFrom<RawDomain> for Domain {
    type Error = Error;

    fn try_from(raw: RawDomain) -> Result<Self> {
        Domain::new(raw.lower, raw.upper, raw.fidelity)
    }
}

/// Box-shaped design space `X` together with the fidelity space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDomain")]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    fidelity: FidelitySpace,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, fidelity: FidelitySpace) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "bounds must be nonempty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidDomain(format!(
                    "dimension {i}: need lower < upper, got [{l}, {u}]"
                )));
            }
        }
        fidelity.validate()?;
        Ok(Self { lower, upper, fidelity })
    }

    pub fn continuous(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        Self::new(lower, upper, FidelitySpace::Continuous)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn fidelity(&self) -> &FidelitySpace {
        &self.fidelity
    }

    /// Same design box with a different fidelity space.
    pub fn with_fidelity(&self, fidelity: FidelitySpace) -> Result<Self> {
        Self::new(self.lower.clone(), self.upper.clone(), fidelity)
    }

    /// Lebesgue volume of `X`.
    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn contains_x(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn contains(&self, p: &InputFidelityPoint) -> bool {
        self.contains_x(&p.x) && self.fidelity.contains(p.s)
    }

    pub fn check(&self, p: &InputFidelityPoint) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::DomainViolation(format!("x={:?}, s={}", p.x, p.s)))
        }
    }

    /// Maps unit-cube coordinates into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] + v * self.side(i))
            .collect()
    }

    pub fn to_unit_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = (x[i] - self.lower[i]) / self.side(i);
        }
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.from_unit(&vec![0.5; self.dim()])
    }
}

/// A point `(x, s)` of the joint design–fidelity space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFidelityPoint {
    pub x: Vec<f64>,
    pub s: f64,
}

impl InputFidelityPoint {
    pub fn new(x: Vec<f64>, s: f64) -> Self {
        Self { x, s }
    }
}

/// Observations `{(x_i, s_i), y_i}` with the cost paid for each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<InputFidelityPoint>,
    pub values: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(points: Vec<InputFidelityPoint>, values: Vec<f64>, costs: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::LengthMismatch {
                what: "points/values",
                left: points.len(),
                right: values.len(),
            });
        }
        if points.len() != costs.len() {
            return Err(Error::LengthMismatch {
                what: "points/costs",
                left: points.len(),
                right: costs.len(),
            });
        }
        let mut d = Dataset::new();
        for ((p, y), c) in points.into_iter().zip(values).zip(costs) {
            d.push(p, y, c)?;
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &InputFidelityPoint) -> bool {
        self.points.iter().any(|q| q == p)
    }

    /// Appends an observation; exact duplicates of `(x, s)` are rejected.
    pub fn push(&mut self, p: InputFidelityPoint, y: f64, cost: f64) -> Result<()> {
        if self.contains(&p) {
            return Err(Error::DuplicatePoint(format!("x={:?}, s={}", p.x, p.s)));
        }
        self.points.push(p);
        self.values.push(y);
        self.costs.push(cost);
        Ok(())
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }
}

/// Kernel hyperparameters in problem units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Length scale per design dimension.
    pub gamma_x: Vec<f64>,
    /// Length scale of the fidelity coordinate.
    pub gamma_s: f64,
    pub signal_variance: f64,
    /// Diagonal regularization added to the kernel matrix.
    pub jitter: f64,
}

impl KernelParams {
    pub fn isotropic(d: usize, gamma: f64, gamma_s: f64, signal_variance: f64) -> Self {
        Self {
            gamma_x: vec![gamma; d],
            gamma_s,
            signal_variance,
            jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !self.gamma_x.iter().all(|&g| positive(g)) || !positive(self.gamma_s) {
            return Err(Error::InvalidParameter("length scales must be positive".into()));
        }
        if !positive(self.signal_variance) {
            return Err(Error::InvalidParameter("signal variance must be positive".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter <= 1e-4 * self.signal_variance) {
            return Err(Error::InvalidParameter(format!(
                "jitter {} outside [0, 1e-4 * signal_variance]",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Affine limit state `g = rho * f - a`; failure is `g <= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitState {
    pub rho: f64,
    pub a: f64,
}

impl LimitState {
    pub fn new(rho: f64, a: f64) -> Result<Self> {
        if rho == 0.0 || !rho.is_finite() || !a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "limit state needs finite nonzero rho and finite a (rho={rho}, a={a})"
            )));
        }
        Ok(Self { rho, a })
    }

    /// Failure below threshold `a` in output units (`rho = 1`).
    pub fn below(a: f64) -> Self {
        Self { rho: 1.0, a }
    }

    #[inline]
    pub fn g(&self, f: f64) -> f64 {
        self.rho * f - self.a
    }

    #[inline]
    pub fn is_failure(&self, f: f64) -> bool {
        self.g(f) <= 0.0
    }
}
