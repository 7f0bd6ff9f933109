//! Value functions, the lookahead multifidelity acquisition and
//! cost-normalized selection of the next `(x, s)`.

mod ei;
mod lookahead;

pub use ei::{bichon_with_band, ei_bichon, ei_ranjan, ranjan_with_band};
pub use lookahead::{
    inner_grid, lookahead_acquisition, select_from_candidates, select_next, select_next_within, Lookahead, Selection,
};

use serde::{Deserialize, Serialize};

use crate::mfgp::{FidelitySpace, LimitState};
use crate::{Error, Result};

/// Expected utility of a highest-fidelity point whose posterior is `N(mean, sd^2)`.
pub trait ValueFunction: Sync {
    fn value(&self, mean: f64, sd: f64) -> f64;

    /// Value with the tolerance band held at the width implied by `band_sd`
    /// while the posterior spread is `sd`. Used for fantasized posteriors.
    fn value_with_band(&self, mean: f64, sd: f64, _band_sd: f64) -> f64 {
        self.value(mean, sd)
    }

    /// True if `value_with_band` is below `1e-16` relative for every mean in
    /// `[mean_lo, mean_hi]`; lets the lookahead skip grid points.
    fn negligible(&self, _mean_lo: f64, _mean_hi: f64, _sd: f64, _band_sd: f64) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Bichon,
    Ranjan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueConfig {
    pub kind: ValueKind,
    /// Band width multiplier, `delta^2 = eta * sigma^2`.
    pub eta: f64,
    pub limit: LimitState,
}

impl ValueConfig {
    pub fn bichon(limit: LimitState) -> Self {
        Self {
            kind: ValueKind::Bichon,
            eta: 4.0,
            limit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        LimitState::new(self.limit.rho, self.limit.a).map(|_| ())
    }
}

impl ValueFunction for ValueConfig {
    fn value(&self, mean: f64, sd: f64) -> f64 {
        match self.kind {
            ValueKind::Bichon => ei_bichon(mean, sd, &self.limit, self.eta),
            ValueKind::Ranjan => ei_ranjan(mean, sd, &self.limit, self.eta),
        }
    }

    fn value_with_band(&self, mean: f64, sd: f64, band_sd: f64) -> f64 {
        let delta = ei::band(band_sd, &self.limit, self.eta);
        match self.kind {
            ValueKind::Bichon => ei::bichon_with_band(mean, sd, &self.limit, delta),
            ValueKind::Ranjan => ei::ranjan_with_band(mean, sd, &self.limit, delta),
        }
    }

    fn negligible(&self, mean_lo: f64, mean_hi: f64, sd: f64, band_sd: f64) -> bool {
        let (g1, g2) = (self.limit.rho * mean_lo, self.limit.rho * mean_hi);
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = self.limit.a;
        let dist = if a < lo {
            lo - a
        } else if a > hi {
            a - hi
        } else {
            0.0
        };
        dist > (self.eta.sqrt() * band_sd + 8.5 * sd) * self.limit.rho.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    /// Monte Carlo fantasies per candidate.
    pub n_fantasies: usize,
    /// Highest-fidelity points over which the value function is maximized.
    pub inner_grid_size: usize,
    /// Candidates screened by the outer search.
    pub outer_candidates: usize,
    /// Compass-search evaluations spent polishing the best candidate (continuous `S` only).
    pub polish_evals: usize,
    pub seed: u64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_fantasies: 16,
            inner_grid_size: 512,
            outer_candidates: 2000,
            polish_evals: 40,
            seed: 0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fantasies == 0 || self.inner_grid_size == 0 || self.outer_candidates == 0 {
            return Err(Error::InvalidParameter("acquisition counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub fidelity: f64,
    pub cost: f64,
}

/// Cost of one model query as a function of fidelity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    /// `c0 * (c2 + exp(-c1 (1 - s)))`
    Exponential {
        c0: f64,
        c1: f64,
        c2: f64,
    },
    Table {
        entries: Vec<CostEntry>,
    },
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::Exponential {
            c0: 500.0,
            c1: 10.0,
            c2: 0.1,
        }
    }
}

impl CostModel {
    pub fn exponential(c0: f64, c1: f64, c2: f64) -> Self {
        CostModel::Exponential { c0, c1, c2 }
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        match self {
            CostModel::Exponential { c0, c1, c2 } => Ok(c0 * (c2 + (-c1 * (1.0 - s)).exp())),
            CostModel::Table { entries } => entries
                .iter()
                .find(|e| e.fidelity == s)
                .map(|e| e.cost)
                .ok_or(Error::UnknownFidelity(s)),
        }
    }

    /// Cheapest query over the fidelity space.
    pub fn min_cost(&self, fidelity: &FidelitySpace) -> Result<f64> {
        match fidelity {
            FidelitySpace::Continuous => self.eval(0.0),
            FidelitySpace::Discrete { levels } => {
                let mut m = f64::INFINITY;
                for &l in levels {
                    m = m.min(self.eval(l)?);
                }
                Ok(m)
            }
        }
    }

    /// Checks positivity and monotonicity, and that every level of `fidelity` is priced.
    /// Errors name the offending config field.
    pub fn validate(&self, fidelity: &FidelitySpace) -> Result<()> {
        match self {
            CostModel::Exponential { c0, c1, c2 } => {
                if !(*c0 > 0.0) {
                    return Err(Error::config("cost.c0", "must be positive"));
                }
                if !(*c1 >= 0.0) {
                    return Err(Error::config("cost.c1", "must be nonnegative"));
                }
                if !(*c2 >= 0.0) {
                    return Err(Error::config("cost.c2", "must be nonnegative"));
                }
            }
            CostModel::Table { entries } => {
                if entries.is_empty() {
                    return Err(Error::config("cost.entries", "cost table is empty"));
                }
                let mut sorted = entries.clone();
                sorted.sort_by(|a, b| a.fidelity.total_cmp(&b.fidelity));
                for (i, e) in sorted.iter().enumerate() {
                    if !(e.cost > 0.0 && e.cost.is_finite()) {
                        return Err(Error::config(format!("cost.entries[{i}].cost"), "must be positive"));
                    }
                    if i > 0 && sorted[i - 1].fidelity == e.fidelity {
                        return Err(Error::config(
                            format!("cost.entries[{i}].fidelity"),
                            "duplicate fidelity",
                        ));
                    }
                    if i > 0 && sorted[i - 1].cost > e.cost {
                        return Err(Error::config(
                            format!("cost.entries[{i}].cost"),
                            "costs must be nondecreasing in fidelity",
                        ));
                    }
                }
                match fidelity {
                    FidelitySpace::Continuous => {
                        return Err(Error::config(
                            "cost.kind",
                            "a cost table requires a discrete fidelity set",
                        ))
                    }
                    FidelitySpace::Discrete { levels } => {
                        for l in levels {
                            if !entries.iter().any(|e| e.fidelity == *l) {
                                return Err(Error::config("cost.entries", format!("no cost for fidelity {l}")));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest fidelity in `[0, 1]` whose cost does not exceed `max_cost`
    /// (continuous fidelity space), or `None` if even `s = 0` is too expensive.
    pub(crate) fn max_affordable_fidelity(&self, max_cost: f64) -> Option<f64> {
        if self.eval(0.0).ok()? > max_cost {
            return None;
        }
        if self.eval(1.0).ok()? <= max_cost {
            return Some(1.0);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid).ok()? <= max_cost {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }
}

pub fn cost_eval(cost: &CostModel, s: f64) -> Result<f64> {
    cost.eval(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_cost_reference_values() {
        let c = CostModel::default();
        assert!((cost_eval(&c, 1.0).unwrap() - 550.0).abs() < 1e-12);
        let low = cost_eval(&c, 0.0).unwrap();
        assert!((low - 500.0 * (0.1 + (-10f64).exp())).abs() < 1e-12);
        assert!((low - 50.02).abs() < 0.01);
        let flat = CostModel::exponential(500.0, 0.0, 0.1);
        for s in [0.0, 0.3, 1.0] {
            assert!((flat.eval(s).unwrap() - 550.0).abs() < 1e-12);
        }
    }

    #[test]
    fn table_cost_lookup_and_validation() {
        let t = CostModel::Table {
            entries: vec![
                CostEntry {
                    fidelity: 0.0,
                    cost: 1.0,
                },
                CostEntry {
                    fidelity: 0.5,
                    cost: 4.0,
                },
                CostEntry {
                    fidelity: 1.0,
                    cost: 20.0,
                },
            ],
        };
        assert_eq!(t.eval(0.5).unwrap(), 4.0);
        assert!(matches!(t.eval(0.3), Err(Error::UnknownFidelity(_))));
        let levels = FidelitySpace::Discrete {
            levels: vec![0.0, 0.5, 1.0],
        };
        t.validate(&levels).unwrap();
        assert_eq!(t.min_cost(&levels).unwrap(), 1.0);
        let missing = FidelitySpace::Discrete {
            levels: vec![0.0, 0.25, 1.0],
        };
        match t.validate(&missing) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "cost.entries"),
            other => panic!("{other:?}"),
        }
        assert!(t.validate(&FidelitySpace::Continuous).is_err());
    }

    #[test]
    fn affordable_fidelity_inverts_cost() {
        let c = CostModel::default();
        let s = c.max_affordable_fidelity(300.0).unwrap();
        assert!((c.eval(s).unwrap() - 300.0).abs() < 1e-6);
        assert_eq!(c.max_affordable_fidelity(1e9), Some(1.0));
        assert_eq!(c.max_affordable_fidelity(10.0), None);
    }

    #[test]
    fn negligible_is_conservative() {
        let v = ValueConfig::bichon(LimitState::below(0.0));
        assert!(v.negligible(50.0, 60.0, 1.0, 1.0));
        assert!(!v.negligible(-1.0, 1.0, 1.0, 1.0));
        assert!(v.value(11.0, 1.0) < 1e-16);
        assert!(!v.negligible(10.0, 11.0, 1.0, 1.0));
    }
}
