//! The sequential design loop: seed design, cost-aware acquisitions under a
//! budget, surrogate refits, biasing construction and the final importance
//! sampling estimate.

mod record;
mod repeat;

pub use record::{FidelityHistogram, IterationRow, RunRecord, RunStatus, CSV_FIXED_COLUMNS};
pub use repeat::{aggregate, non_adaptive, repeat, AggregatePoint, RepeatOutcome};

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select_next_within, AcquisitionConfig, CostModel, ValueConfig, ValueKind};
use crate::cli::external::{ExternalModel, ExternalModelSpec};
use crate::density::NominalDensity;
use crate::fpe::{build_biasing, evaluate_model, importance_sample, BiasingOptions, FailureEstimate};
use crate::lhs::latin_hypercube;
use crate::mfgp::{Dataset, Domain, FidelitySpace, FitOptions, GpModel, InputFidelityPoint, LimitState};
use crate::model::MultifidelityModel;
use crate::stats::{derive_seed, rng};
use crate::testbed::{brute_force_pf, BenchmarkProblem};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Multifidelity,
    SingleFidelity,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Multifidelity => "multifidelity",
            Mode::SingleFidelity => "single_fidelity",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multifidelity" => Ok(Mode::Multifidelity),
            "single_fidelity" | "single-fidelity" => Ok(Mode::SingleFidelity),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Benchmark name, or `external` together with [`RunConfig::external`].
    pub problem: String,
    pub mode: Mode,
    /// Multifidelity seed design size; defaults to `10 * dim`. Single-fidelity
    /// runs derive theirs from the multifidelity seed cost.
    pub seed_count: Option<usize>,
    /// Total cost allowed, seeds included.
    pub budget: f64,
    pub max_iterations: Option<usize>,
    pub value: ValueKind,
    pub eta: f64,
    pub acquisition: AcquisitionConfig,
    pub cost: Option<CostModel>,
    pub limit: Option<LimitState>,
    /// Restricts the fidelity space to these levels.
    pub fidelities: Option<Vec<f64>>,
    pub nominal: Option<NominalDensity>,
    pub biasing: BiasingOptions,
    pub n_is: usize,
    /// Hyperparameters are refitted every `refit_stride` acquisitions.
    pub refit_stride: usize,
    pub fit_restarts: usize,
    /// Restarts per refit inside the loop; the first always starts from the previous fit.
    pub refit_restarts: usize,
    pub fit_max_iters: u64,
    pub master_seed: u64,
    pub per_iteration_pf: bool,
    pub n_diag: usize,
    pub diag_pool_size: usize,
    /// Known failure probability; otherwise computed by brute force for benchmarks.
    pub true_pf: Option<f64>,
    pub truth_samples: usize,
    pub external: Option<ExternalModelSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "multimodal".into(),
            mode: Mode::Multifidelity,
            seed_count: None,
            budget: 30_000.0,
            max_iterations: Some(100),
            value: ValueKind::Bichon,
            eta: 4.0,
            acquisition: AcquisitionConfig::default(),
            cost: None,
            limit: None,
            fidelities: None,
            nominal: None,
            biasing: BiasingOptions::default(),
            n_is: 1000,
            refit_stride: 1,
            fit_restarts: 8,
            refit_restarts: 2,
            fit_max_iters: 100,
            master_seed: 0,
            per_iteration_pf: false,
            n_diag: 200,
            diag_pool_size: 100_000,
            true_pf: None,
            truth_samples: 1_000_000,
            external: None,
        }
    }
}

impl RunConfig {
    /// Structural checks that do not need the problem.
    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::config("budget", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "must be positive"));
        }
        if matches!(self.seed_count, Some(n) if n < 2) {
            return Err(Error::config("seed_count", "need at least 2 seed points"));
        }
        if self.n_is == 0 {
            return Err(Error::config("n_is", "must be positive"));
        }
        if self.refit_stride == 0 {
            return Err(Error::config("refit_stride", "must be at least 1"));
        }
        if self.per_iteration_pf && (self.n_diag == 0 || self.diag_pool_size == 0) {
            return Err(Error::config("n_diag", "diagnostic sizes must be positive"));
        }
        self.acquisition
            .validate()
            .map_err(|e| Error::config("acquisition", e.to_string()))?;
        self.biasing.validate()?;
        if let Some(l) = &self.limit {
            LimitState::new(l.rho, l.a).map_err(|e| Error::config("limit", e.to_string()))?;
        }
        if let Some(levels) = &self.fidelities {
            FidelitySpace::Discrete { levels: levels.clone() }
                .validate()
                .map_err(|e| Error::config("fidelities", e.to_string()))?;
        }
        if self.problem == "external" && self.external.is_none() {
            return Err(Error::config(
                "external",
                "problem `external` needs an external model spec",
            ));
        }
        if let Some(spec) = &self.external {
            if self.problem != "external" {
                return Err(Error::config(
                    "problem",
                    "set problem = \"external\" to use the external model",
                ));
            }
            spec.validate()?;
        }
        Ok(())
    }

    pub fn value_config(&self, limit: LimitState) -> ValueConfig {
        ValueConfig {
            kind: self.value,
            eta: self.eta,
            limit,
        }
    }
}

/// A resolved experiment target: the model plus everything the loop needs to know about it.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub model: Arc<dyn MultifidelityModel>,
    /// Domain with the full fidelity space of the problem.
    pub domain: Domain,
    pub limit: LimitState,
    pub cost: CostModel,
    pub nominal: NominalDensity,
    pub true_pf: Option<f64>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("limit", &self.limit)
            .field("cost", &self.cost)
            .field("true_pf", &self.true_pf)
            .finish()
    }
}

impl Problem {
    pub fn benchmark(b: BenchmarkProblem) -> Self {
        Self {
            name: b.name().to_string(),
            domain: b.domain.clone(),
            limit: b.limit,
            cost: b.cost.clone(),
            nominal: NominalDensity::uniform(&b.domain),
            true_pf: None,
            model: Arc::new(b),
        }
    }

    /// Resolves the configured problem and applies the config overrides.
    /// Does not compute the ground truth; see [`Problem::with_truth`].
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut p = match &config.external {
            Some(spec) => {
                let model = ExternalModel::new(spec.clone())?;
                let domain = spec.domain()?;
                Problem {
                    name: "external".into(),
                    nominal: NominalDensity::uniform(&domain),
                    domain,
                    limit: LimitState::below(0.0),
                    cost: spec.cost.clone().unwrap_or_default(),
                    true_pf: None,
                    model: Arc::new(model),
                }
            }
            None => Problem::benchmark(
                BenchmarkProblem::from_name(&config.problem).map_err(|e| Error::config("problem", e.to_string()))?,
            ),
        };
        if let Some(levels) = &config.fidelities {
            p.domain = p
                .domain
                .with_fidelity(FidelitySpace::Discrete { levels: levels.clone() })?;
        }
        if let Some(l) = config.limit {
            p.limit = l;
        }
        if let Some(c) = &config.cost {
            p.cost = c.clone();
        }
        p.cost.validate(p.domain.fidelity())?;
        if let Some(n) = &config.nominal {
            n.validate(&p.domain)?;
            p.nominal = n.clone();
        }
        p.true_pf = config.true_pf;
        Ok(p)
    }

    /// Fills `true_pf` by uniform Monte Carlo at `s = 1` if it is not known yet.
    pub fn with_truth(mut self, samples: usize, seed: u64) -> Result<Self> {
        if self.true_pf.is_none() && self.name != "external" {
            self.true_pf =
                Some(crate::fpe::monte_carlo(self.model.as_ref(), &self.domain, &self.limit, samples, seed)?.p_hat);
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Domain restricted to what `mode` may query.
    pub fn run_domain(&self, mode: Mode) -> Result<Domain> {
        match mode {
            Mode::Multifidelity => Ok(self.domain.clone()),
            Mode::SingleFidelity => self.domain.with_fidelity(FidelitySpace::Discrete { levels: vec![1.0] }),
        }
    }
}

fn mf_design(domain: &Domain, n: usize, seed: u64) -> Vec<InputFidelityPoint> {
    let d = domain.dim();
    let mut r = rng(seed);
    match domain.fidelity() {
        FidelitySpace::Continuous => latin_hypercube(n, d + 1, &mut r)
            .into_iter()
            .map(|u| InputFidelityPoint::new(domain.from_unit(&u[..d]), u[d]))
            .collect(),
        FidelitySpace::Discrete { levels } => latin_hypercube(n, d, &mut r)
            .into_iter()
            .enumerate()
            .map(|(i, u)| InputFidelityPoint::new(domain.from_unit(&u), levels[i % levels.len()]))
            .collect(),
    }
}

/// Randomized Latin hypercube seed design.
///
/// Multifidelity designs cover the joint space (or cycle through discrete
/// levels). Single-fidelity designs sit at `s = 1`, with as many points as the
/// multifidelity design's cost buys at `c(1)` (at least two).
pub fn lhs_seed(domain: &Domain, n: usize, mode: Mode, cost: &CostModel, seed: u64) -> Result<Vec<InputFidelityPoint>> {
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mf = mf_design(domain, n, seed);
    match mode {
        Mode::Multifidelity => Ok(mf),
        Mode::SingleFidelity => {
            let mut total = 0.0;
            for p in &mf {
                total += cost.eval(p.s)?;
            }
            let m = ((total / cost.eval(1.0)?).floor() as usize).max(2);
            let mut r = rng(derive_seed(seed, 1));
            Ok(latin_hypercube(m, domain.dim(), &mut r)
                .into_iter()
                .map(|u| InputFidelityPoint::new(domain.from_unit(&u), 1.0))
                .collect())
        }
    }
}

/// A run that stopped on an error, with everything recorded up to that point.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    #[source]
    pub error: Error,
    pub partial: Box<RunRecord>,
}

const TAG_SEEDS: u64 = 1;
const TAG_FIT: u64 = 2;
const TAG_ACQ: u64 = 3;
const TAG_BIAS: u64 = 4;
const TAG_IS: u64 = 5;
const TAG_DIAG: u64 = 6;

struct Loop<'a> {
    config: &'a RunConfig,
    problem: &'a Problem,
    domain: Domain,
    value: ValueConfig,
    record: RunRecord,
    data: Dataset,
    gp: Option<GpModel>,
}

impl Loop<'_> {
    fn evaluate(&self, p: &InputFidelityPoint) -> Result<(f64, f64)> {
        let y = evaluate_model(self.problem.model.as_ref(), &p.x, p.s)?;
        Ok((y, self.problem.cost.eval(p.s)?))
    }

    fn push(
        &mut self,
        iteration: usize,
        p: InputFidelityPoint,
        y: f64,
        cost: f64,
        acquisition: Option<f64>,
    ) -> Result<()> {
        let cum = self.record.total_cost() + cost;
        self.data.push(p.clone(), y, cost)?;
        self.record.rows.push(IterationRow {
            iteration,
            x: p.x,
            s: p.s,
            y,
            cost,
            cum_cost: cum,
            acquisition,
            p_hat: None,
            error: None,
        });
        Ok(())
    }

    fn fit(&mut self, iteration: usize, restarts: usize) -> Result<()> {
        let opts = FitOptions {
            restarts,
            seed: derive_seed(derive_seed(self.config.master_seed, TAG_FIT), iteration as u64),
            warm_start: self.gp.as_ref().map(|g| g.params().clone()),
            max_iters: self.config.fit_max_iters,
        };
        self.gp = Some(GpModel::fit(self.data.clone(), self.domain.clone(), &opts)?);
        Ok(())
    }

    fn condition(&mut self) -> Result<()> {
        let params = self.gp.as_ref().expect("fitted").params().clone();
        self.gp = Some(GpModel::with_params(self.domain.clone(), self.data.clone(), &params)?);
        Ok(())
    }

    fn estimate(&self, pool_size: usize, n: usize, seed: u64) -> Result<FailureEstimate> {
        let gp = self.gp.as_ref().expect("fitted");
        let opts = BiasingOptions {
            pool_size,
            seed: derive_seed(seed, TAG_BIAS),
            ..self.config.biasing.clone()
        };
        let biasing = build_biasing(gp, &self.problem.limit, &opts)?;
        importance_sample(
            &biasing.mixture,
            self.problem.model.as_ref(),
            &self.problem.limit,
            &self.problem.nominal,
            n,
            derive_seed(seed, TAG_IS),
            self.problem.cost.eval(1.0)?,
        )
    }

    fn diagnostic(&mut self, iteration: usize) -> Result<()> {
        if !self.config.per_iteration_pf {
            return Ok(());
        }
        let seed = derive_seed(derive_seed(self.config.master_seed, TAG_DIAG), iteration as u64);
        let est = self.estimate(self.config.diag_pool_size, self.config.n_diag, seed)?;
        self.record.diagnostic_cost += est.cumulative_cost;
        let err = self.problem.true_pf.map(|t| relative_error(est.p_hat, t));
        if let Some(row) = self.record.rows.last_mut() {
            row.p_hat = Some(est.p_hat);
            row.error = err;
        }
        Ok(())
    }

    fn body(&mut self) -> Result<()> {
        let config = self.config;
        let n_seed = config.seed_count.unwrap_or(10 * self.problem.dim());
        let seeds = lhs_seed(
            &self.problem.domain,
            n_seed,
            config.mode,
            &self.problem.cost,
            derive_seed(config.master_seed, TAG_SEEDS),
        )?;
        let evaluated: Vec<(f64, f64)> = seeds.par_iter().map(|p| self.evaluate(p)).collect::<Result<_>>()?;
        for (p, (y, c)) in seeds.into_iter().zip(evaluated) {
            self.push(0, p, y, c, None)?;
        }
        self.fit(0, config.fit_restarts)?;
        self.diagnostic(0)?;

        let min_cost = self.problem.cost.min_cost(self.domain.fidelity())?;
        let acq_base = derive_seed(config.master_seed, TAG_ACQ);
        let mut iteration = 0;
        loop {
            if config.max_iterations.is_some_and(|m| iteration >= m) {
                break;
            }
            let remaining = config.budget - self.record.total_cost();
            if remaining < min_cost {
                break;
            }
            iteration += 1;
            let step = |lp: &mut Self| -> Result<()> {
                let acfg = AcquisitionConfig {
                    seed: acq_base,
                    ..config.acquisition.clone()
                };
                let gp = lp.gp.as_ref().expect("fitted");
                let sel = select_next_within(
                    gp,
                    &lp.domain,
                    &lp.problem.cost,
                    &lp.value,
                    &acfg,
                    iteration as u64,
                    Some(remaining),
                )?;
                let (y, c) = lp.evaluate(&sel.point)?;
                lp.push(iteration, sel.point, y, c, Some(sel.acquisition))?;
                if iteration % config.refit_stride == 0 {
                    lp.fit(iteration, config.refit_restarts)?;
                } else {
                    lp.condition()?;
                }
                lp.diagnostic(iteration)
            };
            step(self).map_err(|e| Error::Iteration {
                iteration,
                source: Box::new(e),
            })?;
        }

        let est = self.estimate(config.biasing.pool_size, config.n_is, config.master_seed)?;
        self.record.relative_error = self.problem.true_pf.map(|t| relative_error(est.p_hat, t));
        self.record.estimate = Some(est);
        Ok(())
    }
}

pub fn relative_error(p_hat: f64, truth: f64) -> f64 {
    (p_hat - truth).abs() / truth
}

/// Runs one experiment. Deterministic for a given `config.master_seed`.
pub fn run(config: &RunConfig, problem: &Problem) -> Result<RunRecord, RunFailure> {
    let started = Instant::now();
    let fail = |error: Error, record: RunRecord| RunFailure {
        error,
        partial: Box::new(record),
    };
    let mut record = RunRecord::new(config, problem);
    let domain = match config.validate().and_then(|_| problem.run_domain(config.mode)) {
        Ok(d) => d,
        Err(e) => return Err(fail(e, record)),
    };
    record.histogram = FidelityHistogram::empty(domain.fidelity());
    let mut lp = Loop {
        config,
        problem,
        value: config.value_config(problem.limit),
        domain,
        record,
        data: Dataset::new(),
        gp: None,
    };
    let outcome = lp.body();
    let mut record = lp.record;
    if let Some(gp) = &lp.gp {
        record.kernel = Some(gp.params().clone());
    }
    record.finish(started.elapsed().as_secs_f64());
    match outcome {
        Ok(()) => Ok(record),
        Err(e) => {
            record.status = RunStatus::Failed {
                kind: e.kind().to_string(),
                message: e.to_string(),
            };
            Err(fail(e, record))
        }
    }
}

/// Rebuilds the final surrogate of a run from its rows and fitted kernel.
pub fn final_surrogate(record: &RunRecord, problem: &Problem) -> Result<GpModel> {
    let params = record
        .kernel
        .as_ref()
        .ok_or(Error::InsufficientData { needed: 2, got: 0 })?;
    let mut data = Dataset::new();
    for r in &record.rows {
        data.push(InputFidelityPoint::new(r.x.clone(), r.s), r.y, r.cost)?;
    }
    GpModel::with_params(problem.run_domain(record.mode)?, data, params)
}

/// Ground truth by brute force for a named benchmark.
pub fn benchmark_truth(name: &str, n: usize, seed: u64) -> Result<FailureEstimate> {
    brute_force_pf(&BenchmarkProblem::from_name(name)?, n, seed)
}
