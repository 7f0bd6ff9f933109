//! Synthetic multifidelity benchmarks with known failure probabilities.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::acquisition::CostModel;
use crate::fpe::{monte_carlo, FailureEstimate};
use crate::mfgp::{Domain, LimitState};
use crate::model::MultifidelityModel;
use crate::{Error, Result};

pub fn multimodal(x: &[f64], s: f64) -> f64 {
    (x[0] * x[0] + 4.0) * (x[1] - 1.0) / 20.0 - s * (2.5 * x[0]).sin() - 2.0
}

pub fn four_branches(x: &[f64], s: f64) -> f64 {
    let a = x[0] - 5.0 * s;
    let b = x[1] - 5.0 * s;
    let q = 3.0 + 0.1 * (a - b) * (a - b);
    let t = (a + b) * FRAC_1_SQRT_2;
    let k = 7.0 * FRAC_1_SQRT_2;
    (q - t).min(q + t).min(a - b + k).min(b - a + k)
}

pub fn ishigami_mf(x: &[f64], s: f64) -> f64 {
    let s1 = (x[0] - s).sin();
    let s2 = (x[1] - s).sin();
    s1 + 7.0 * s2 * s2 + 0.1 * x[2].powi(4) * s1
}

const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

const HARTMANN_P: [[f64; 6]; 4] = [
    [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
    [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
    [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
    [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
];

const HARTMANN_BETA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

/// `exp(-sum_j A_ij (x_j - P_ij)^2)` for term `i`.
fn hartmann_term(i: usize, x: &[f64]) -> f64 {
    let q: f64 = (0..6)
        .map(|j| HARTMANN_A[i][j] * (x[j] - 1e-4 * HARTMANN_P[i][j]).powi(2))
        .sum();
    (-q).exp()
}

/// Augmented Hartmann-6: the first weight drops by `0.1 (1 - s)`.
pub fn hartmann6_mf(x: &[f64], s: f64) -> f64 {
    -(HARTMANN_BETA[0] - 0.1 * (1.0 - s)) * hartmann_term(0, x)
        - (1..4).map(|i| HARTMANN_BETA[i] * hartmann_term(i, x)).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Benchmark {
    Multimodal,
    FourBranches,
    Ishigami,
    Hartmann6,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Multimodal,
        Benchmark::FourBranches,
        Benchmark::Ishigami,
        Benchmark::Hartmann6,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Multimodal => "multimodal",
            Benchmark::FourBranches => "four-branches",
            Benchmark::Ishigami => "ishigami",
            Benchmark::Hartmann6 => "hartmann6",
        }
    }
}

/// A benchmark function together with its domain, limit state and cost model.
#[derive(Clone, Debug)]
pub struct BenchmarkProblem {
    pub kind: Benchmark,
    pub domain: Domain,
    pub limit: LimitState,
    pub cost: CostModel,
    /// Published failure probability at `s = 1`.
    pub true_pf: Option<f64>,
}

impl BenchmarkProblem {
    pub fn new(kind: Benchmark) -> Self {
        let (lower, upper, limit, pf) = match kind {
            // The 2D problems fail where f > 0.
            Benchmark::Multimodal => (
                vec![-4.0, -3.0],
                vec![7.0, 8.0],
                LimitState { rho: -1.0, a: 0.0 },
                0.30215,
            ),
            Benchmark::FourBranches => (vec![-8.0; 2], vec![8.0; 2], LimitState { rho: -1.0, a: 0.0 }, 0.1689),
            Benchmark::Ishigami => (vec![-PI; 3], vec![PI; 3], LimitState::below(-9.0), 0.0011),
            Benchmark::Hartmann6 => (vec![0.0; 6], vec![1.0; 6], LimitState::below(-2.0), 0.00737),
        };
        Self {
            kind,
            domain: Domain::continuous(lower, upper).expect("static bounds"),
            limit,
            cost: CostModel::default(),
            true_pf: Some(pf),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == name)
            .map(Self::new)
            .ok_or_else(|| Error::UnknownProblem(name.to_string()))
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Evaluates without a domain check.
    pub fn eval_unchecked(&self, x: &[f64], s: f64) -> f64 {
        match self.kind {
            Benchmark::Multimodal => multimodal(x, s),
            Benchmark::FourBranches => four_branches(x, s),
            Benchmark::Ishigami => ishigami_mf(x, s),
            Benchmark::Hartmann6 => hartmann6_mf(x, s),
        }
    }
}

impl MultifidelityModel for BenchmarkProblem {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn evaluate(&self, x: &[f64], s: f64) -> Result<f64> {
        if x.len() != self.domain.dim() || !self.domain.contains_x(x) || !(0.0..=1.0).contains(&s) {
            return Err(Error::DomainViolation(format!("{}: x={x:?}, s={s}", self.name())));
        }
        Ok(self.eval_unchecked(x, s))
    }
}

/// Uniform Monte Carlo ground truth at `s = 1`.
pub fn brute_force_pf(problem: &BenchmarkProblem, n: usize, seed: u64) -> Result<FailureEstimate> {
    monte_carlo(problem, &problem.domain, &problem.limit, n, seed)
}
