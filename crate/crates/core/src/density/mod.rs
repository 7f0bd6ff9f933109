//! Nominal input densities and Gaussian-mixture biasing densities.

mod gmm;

pub use gmm::{em_fit, gmm_logpdf, gmm_sample, EmFit, EmOptions, GaussianMixture};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::mfgp::Domain;
use crate::stats::{norm_cdf, rng};
use crate::{Error, Result};

/// One independent coordinate of a product density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Uniform {
        lower: f64,
        upper: f64,
    },
    /// Normal restricted to `[lower, upper]` and renormalized.
    TruncatedNormal {
        mean: f64,
        sd: f64,
        lower: f64,
        upper: f64,
    },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Uniform { lower, upper } => lower < upper,
            Marginal::TruncatedNormal { sd, lower, upper, .. } => sd > 0.0 && lower < upper,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid marginal {self:?}")))
        }
    }

    fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => {
                if x >= lower && x <= upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::TruncatedNormal { mean, sd, lower, upper } => {
                if x < lower || x > upper {
                    return f64::NEG_INFINITY;
                }
                let z = (x - mean) / sd;
                let mass = norm_cdf((upper - mean) / sd) - norm_cdf((lower - mean) / sd);
                -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - mass.ln()
            }
        }
    }

    fn sample<R: Rng>(&self, r: &mut R) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => r.gen_range(lower..upper),
            Marginal::TruncatedNormal { mean, sd, lower, upper } => {
                let n = Normal::new(mean, sd).expect("validated");
                let (a, b) = (n.cdf(lower), n.cdf(upper));
                n.inverse_cdf(a + (b - a) * r.gen::<f64>()).clamp(lower, upper)
            }
        }
    }
}

/// Density of the random inputs, `q_x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NominalDensity {
    Uniform { lower: Vec<f64>, upper: Vec<f64> },
    Product { marginals: Vec<Marginal> },
}

impl NominalDensity {
    pub fn uniform(domain: &Domain) -> Self {
        NominalDensity::Uniform {
            lower: domain.lower().to_vec(),
            upper: domain.upper().to_vec(),
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        match self {
            NominalDensity::Uniform { lower, upper } => {
                Domain::continuous(lower.clone(), upper.clone())?;
                if lower.len() != domain.dim() {
                    return Err(Error::config("nominal.lower", "dimension mismatch"));
                }
            }
            NominalDensity::Product { marginals } => {
                if marginals.len() != domain.dim() {
                    return Err(Error::config("nominal.marginals", "dimension mismatch"));
                }
                for m in marginals {
                    m.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            NominalDensity::Uniform { lower, .. } => lower.len(),
            NominalDensity::Product { marginals } => marginals.len(),
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        match self {
            NominalDensity::Uniform { lower, upper } => {
                let mut acc = 0.0;
                for ((v, l), u) in x.iter().zip(lower).zip(upper) {
                    if *v < *l || *v > *u {
                        return f64::NEG_INFINITY;
                    }
                    acc -= (u - l).ln();
                }
                acc
            }
            NominalDensity::Product { marginals } => x.iter().zip(marginals).map(|(v, m)| m.log_pdf(*v)).sum(),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| match self {
                NominalDensity::Uniform { lower, upper } => {
                    lower.iter().zip(upper).map(|(l, u)| r.gen_range(*l..*u)).collect()
                }
                NominalDensity::Product { marginals } => marginals.iter().map(|m| m.sample(&mut r)).collect(),
            })
            .collect()
    }
}
