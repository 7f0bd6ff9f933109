use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mode, Problem, RunConfig};
use crate::fpe::FailureEstimate;
use crate::mfgp::{FidelitySpace, KernelParams};
use crate::Result;

/// Per-iteration CSV columns after the design coordinates `x1..xd`.
pub const CSV_FIXED_COLUMNS: [&str; 7] = ["s", "y", "cost", "cum_cost", "acq", "p_hat", "err"];

/// One evaluation. Seed points carry iteration 0 and no acquisition value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub s: f64,
    pub y: f64,
    pub cost: f64,
    pub cum_cost: f64,
    pub acquisition: Option<f64>,
    pub p_hat: Option<f64>,
    pub error: Option<f64>,
}

/// Counts of acquisitions (seeds excluded) over the fidelity space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FidelityHistogram {
    /// Ten equal bins on `[0, 1]`, the last one closed.
    Bins {
        edges: Vec<f64>,
        counts: Vec<usize>,
    },
    Levels {
        levels: Vec<f64>,
        counts: Vec<usize>,
    },
}

impl FidelityHistogram {
    pub fn empty(space: &FidelitySpace) -> Self {
        match space {
            FidelitySpace::Continuous => FidelityHistogram::Bins {
                edges: (0..=10).map(|i| i as f64 / 10.0).collect(),
                counts: vec![0; 10],
            },
            FidelitySpace::Discrete { levels } => FidelityHistogram::Levels {
                levels: levels.clone(),
                counts: vec![0; levels.len()],
            },
        }
    }

    pub fn add(&mut self, s: f64) {
        match self {
            FidelityHistogram::Bins { counts, .. } => {
                let k = ((s * counts.len() as f64) as usize).min(counts.len() - 1);
                counts[k] += 1;
            }
            FidelityHistogram::Levels { levels, counts } => {
                if let Some(k) = levels.iter().position(|&l| l == s) {
                    counts[k] += 1;
                }
            }
        }
    }

    pub fn counts(&self) -> &[usize] {
        match self {
            FidelityHistogram::Bins { counts, .. } | FidelityHistogram::Levels { counts, .. } => counts,
        }
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }

    /// Total-variation distance between the normalized histograms.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let (a, b) = (self.counts(), other.counts());
        let (ta, tb) = (self.total().max(1) as f64, other.total().max(1) as f64);
        0.5 * a
            .iter()
            .zip(b)
            .map(|(x, y)| (*x as f64 / ta - *y as f64 / tb).abs())
            .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { kind: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub mode: Mode,
    pub master_seed: u64,
    pub config: RunConfig,
    pub rows: Vec<IterationRow>,
    pub estimate: Option<FailureEstimate>,
    pub true_pf: Option<f64>,
    pub relative_error: Option<f64>,
    pub histogram: FidelityHistogram,
    pub kernel: Option<KernelParams>,
    /// Cost of per-iteration diagnostic estimates; not charged to the budget.
    pub diagnostic_cost: f64,
    pub wall_clock_secs: f64,
    pub status: RunStatus,
}

#[derive(Serialize)]
struct Summary<'a> {
    problem: &'a str,
    mode: Mode,
    master_seed: u64,
    config: &'a RunConfig,
    iterations: usize,
    seed_points: usize,
    total_cost: f64,
    estimate: Option<&'a FailureEstimate>,
    true_pf: Option<f64>,
    relative_error: Option<f64>,
    histogram: &'a FidelityHistogram,
    kernel: Option<&'a KernelParams>,
    diagnostic_cost: f64,
    wall_clock_secs: f64,
    status: &'a RunStatus,
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl RunRecord {
    pub fn new(config: &RunConfig, problem: &Problem) -> Self {
        Self {
            problem: problem.name.clone(),
            mode: config.mode,
            master_seed: config.master_seed,
            config: config.clone(),
            rows: Vec::new(),
            estimate: None,
            true_pf: problem.true_pf,
            relative_error: None,
            histogram: FidelityHistogram::empty(problem.domain.fidelity()),
            kernel: None,
            diagnostic_cost: 0.0,
            wall_clock_secs: 0.0,
            status: RunStatus::Completed,
        }
    }

    pub fn total_cost(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cum_cost)
    }

    /// Rows chosen by the acquisition loop.
    pub fn acquisitions(&self) -> impl Iterator<Item = &IterationRow> {
        self.rows.iter().filter(|r| r.iteration > 0)
    }

    pub fn iterations(&self) -> usize {
        self.acquisitions().count()
    }

    /// Share of acquisitions with `s >= threshold`; NaN when there are none.
    pub fn fraction_at_or_above(&self, threshold: f64) -> f64 {
        let n = self.iterations();
        self.acquisitions().filter(|r| r.s >= threshold).count() as f64 / n as f64
    }

    pub(super) fn finish(&mut self, wall_clock_secs: f64) {
        let mut h = self.histogram.clone();
        for c in match &mut h {
            FidelityHistogram::Bins { counts, .. } | FidelityHistogram::Levels { counts, .. } => counts,
        } {
            *c = 0;
        }
        for r in self.acquisitions() {
            h.add(r.s);
        }
        self.histogram = h;
        self.wall_clock_secs = wall_clock_secs;
    }

    /// `(cumulative cost, relative error)` pairs: per-iteration diagnostics,
    /// then the final estimate at the final cost.
    pub fn error_curve(&self) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.error.map(|e| (r.cum_cost, e)))
            .collect();
        if let Some(e) = self.relative_error {
            pts.push((self.total_cost(), e));
        }
        pts
    }

    /// Artifact file stem `{problem}_{mode}_rep{r}`.
    pub fn file_stem(&self, repetition: usize) -> String {
        format!("{}_{}_rep{repetition}", self.problem, self.mode.as_str())
    }

    pub fn csv_header(dim: usize) -> Vec<String> {
        let mut h = vec!["iter".to_string()];
        h.extend((1..=dim).map(|i| format!("x{i}")));
        h.extend(CSV_FIXED_COLUMNS.iter().map(|c| c.to_string()));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let dim = self.rows.first().map_or(0, |r| r.x.len());
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(Self::csv_header(dim))?;
        for r in &self.rows {
            let mut rec = vec![r.iteration.to_string()];
            rec.extend(r.x.iter().map(|v| v.to_string()));
            rec.extend([
                r.s.to_string(),
                r.y.to_string(),
                r.cost.to_string(),
                r.cum_cost.to_string(),
                opt(r.acquisition),
                opt(r.p_hat),
                opt(r.error),
            ]);
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        let s = Summary {
            problem: &self.problem,
            mode: self.mode,
            master_seed: self.master_seed,
            config: &self.config,
            iterations: self.iterations(),
            seed_points: self.rows.len() - self.iterations(),
            total_cost: self.total_cost(),
            estimate: self.estimate.as_ref(),
            true_pf: self.true_pf,
            relative_error: self.relative_error,
            histogram: &self.histogram,
            kernel: self.kernel.as_ref(),
            diagnostic_cost: self.diagnostic_cost,
            wall_clock_secs: self.wall_clock_secs,
            status: &self.status,
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary_json()?)?;
        Ok(())
    }

    /// Writes `{stem}.csv` and `{stem}.json` into `dir`.
    pub fn write_artifacts(&self, dir: &Path, repetition: usize) -> Result<()> {
        let stem = self.file_stem(repetition);
        self.write_csv(&dir.join(format!("{stem}.csv")))?;
        self.write_json(&dir.join(format!("{stem}.json")))
    }
}
