use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FidelityHistogram;
use super::{mf_design, relative_error, run, Loop, Problem, RunConfig, RunFailure, RunRecord, RunStatus, TAG_SEEDS};
use crate::mfgp::Dataset;
use crate::stats::{derive_seed, mean, median};
use crate::{Error, Result};

/// Error statistics across repetitions at one point of the shared cost grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub cost: f64,
    pub mean_error: f64,
    pub median_error: f64,
    /// Repetitions with an error observed at or below this cost.
    pub runs: usize,
}

pub struct RepeatOutcome {
    pub records: Vec<Result<RunRecord, RunFailure>>,
    pub aggregate: Vec<AggregatePoint>,
}

impl RepeatOutcome {
    pub fn successes(&self) -> Vec<&RunRecord> {
        self.records.iter().filter_map(|r| r.as_ref().ok()).collect()
    }
}

/// Mean and median error on `grid_points` equally spaced costs up to the
/// largest final cost. Each run contributes its most recent error at or
/// below the grid cost (last observation carried forward).
pub fn aggregate(records: &[&RunRecord], grid_points: usize) -> Vec<AggregatePoint> {
    let curves: Vec<Vec<(f64, f64)>> = records
        .iter()
        .map(|r| r.error_curve())
        .filter(|c| !c.is_empty())
        .collect();
    if curves.is_empty() || grid_points == 0 {
        return Vec::new();
    }
    let lo = curves.iter().map(|c| c[0].0).fold(f64::INFINITY, f64::min);
    let hi = curves
        .iter()
        .map(|c| c[c.len() - 1].0)
        .fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = if grid_points == 1 || hi <= lo {
        vec![hi]
    } else {
        (0..grid_points)
            .map(|i| lo + (hi - lo) * i as f64 / (grid_points - 1) as f64)
            .collect()
    };
    grid.into_iter()
        .filter_map(|cost| {
            let vals: Vec<f64> = curves
                .iter()
                .filter_map(|c| c.iter().take_while(|(k, _)| *k <= cost).last().map(|(_, e)| *e))
                .collect();
            (!vals.is_empty()).then(|| AggregatePoint {
                cost,
                mean_error: mean(&vals),
                median_error: median(&vals),
                runs: vals.len(),
            })
        })
        .collect()
}

/// Runs `repetitions` experiments with master seeds `master_seed + r`.
pub fn repeat(config: &RunConfig, problem: &Problem, repetitions: usize, grid_points: usize) -> RepeatOutcome {
    let records: Vec<Result<RunRecord, RunFailure>> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let cfg = RunConfig {
                master_seed: config.master_seed.wrapping_add(r as u64),
                ..config.clone()
            };
            run(&cfg, problem)
        })
        .collect();
    let ok: Vec<&RunRecord> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    let aggregate = aggregate(&ok, grid_points);
    RepeatOutcome { records, aggregate }
}

/// Non-adaptive baseline: one Latin hypercube design in the run's space,
/// as large as `budget` allows, then the same biasing and importance-sampling
/// estimate as an adaptive run.
pub fn non_adaptive(config: &RunConfig, problem: &Problem, budget: f64) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();
    let domain = problem.run_domain(config.mode)?;
    let seed = derive_seed(derive_seed(config.master_seed, TAG_SEEDS), 99);
    let design_cost =
        |n: usize| -> Result<f64> { mf_design(&domain, n, seed).iter().map(|p| problem.cost.eval(p.s)).sum() };
    let mut n = 2;
    if design_cost(n)? > budget {
        return Err(Error::config("budget", "too small for a two-point design"));
    }
    while design_cost(n + 1)? <= budget {
        n += 1;
    }
    let mut lp = Loop {
        config,
        problem,
        value: config.value_config(problem.limit),
        record: RunRecord::new(config, problem),
        domain: domain.clone(),
        data: Dataset::new(),
        gp: None,
    };
    lp.record.histogram = FidelityHistogram::empty(domain.fidelity());
    let points = mf_design(&domain, n, seed);
    let evaluated: Vec<(f64, f64)> = points.par_iter().map(|p| lp.evaluate(p)).collect::<Result<_>>()?;
    for (p, (y, c)) in points.into_iter().zip(evaluated) {
        lp.push(0, p, y, c, None)?;
    }
    lp.fit(0, config.fit_restarts)?;
    let est = lp.estimate(config.biasing.pool_size, config.n_is, config.master_seed)?;
    let mut record = lp.record;
    record.relative_error = problem.true_pf.map(|t| relative_error(est.p_hat, t));
    record.estimate = Some(est);
    record.kernel = lp.gp.map(|g| g.params().clone());
    record.status = RunStatus::Completed;
    record.finish(started.elapsed().as_secs_f64());
    Ok(record)
}
