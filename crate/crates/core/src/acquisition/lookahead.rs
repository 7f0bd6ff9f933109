use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{AcquisitionConfig, CostModel, ValueFunction};
use crate::lhs::latin_hypercube;
use crate::mfgp::forward_solve;
use crate::mfgp::{Domain, FidelitySpace, GpModel, InputFidelityPoint};
use crate::stats::{derive_seed, rng};
use crate::{Error, Result};

/// Latin-hypercube points in `X`, all at fidelity 1.
pub fn inner_grid(domain: &Domain, size: usize, seed: u64) -> Vec<InputFidelityPoint> {
    latin_hypercube(size, domain.dim(), &mut rng(seed))
        .into_iter()
        .map(|u| InputFidelityPoint::new(domain.from_unit(&u), 1.0))
        .collect()
}

/// Precomputed state for evaluating the lookahead acquisition at many candidates
/// against one model, one inner grid and one set of fantasy draws.
///
/// Conditioning on a fantasy `y = mu(p) + sd(p) z` shifts the mean at a grid
/// point by `cov(g, p) / sd(p) * z` and lowers its variance by
/// `cov(g, p)^2 / var(p)`, so each fantasy costs `O(|grid|)` once the
/// posterior cross-covariances are known.
pub struct Lookahead<'a, V: ValueFunction> {
    model: &'a GpModel,
    value: &'a V,
    grid_z: Vec<f64>,
    /// `L^{-1} k(X, g)` per grid point, `n` values each
    grid_white: Vec<f64>,
    grid_mean: Vec<f64>,
    grid_var: Vec<f64>,
    normals: Vec<f64>,
    normal_max: f64,
    base_max: f64,
}

impl<'a, V: ValueFunction> Lookahead<'a, V> {
    pub fn new(model: &'a GpModel, value: &'a V, grid: &[InputFidelityPoint], normals: Vec<f64>) -> Result<Self> {
        if grid.is_empty() || normals.is_empty() {
            return Err(Error::InvalidParameter(
                "lookahead needs a nonempty grid and at least one fantasy".into(),
            ));
        }
        if let Some(g) = grid.iter().find(|g| g.s != 1.0) {
            return Err(Error::InvalidParameter(format!(
                "inner grid point at fidelity {} (must be 1)",
                g.s
            )));
        }
        let n = model.len();
        let w = model.kernel.width();
        let mut grid_z = Vec::with_capacity(grid.len() * w);
        for g in grid {
            grid_z.extend(model.unit_point(&g.x, 1.0));
        }
        let per_point: Vec<(Vec<f64>, f64, f64)> = grid_z
            .par_chunks(w)
            .map(|zg| {
                let mut k = vec![0.0; n];
                model.cross_cov(zg, &mut k);
                let mean: f64 = k.iter().zip(model.alpha.iter()).map(|(a, b)| a * b).sum();
                forward_solve(&model.chol, &mut k);
                let var = model.kernel.signal_variance - k.iter().map(|v| v * v).sum::<f64>();
                (k, mean, var.max(0.0))
            })
            .collect();
        let mut grid_white = Vec::with_capacity(grid.len() * n);
        let mut grid_mean = Vec::with_capacity(grid.len());
        let mut grid_var = Vec::with_capacity(grid.len());
        for (k, m, v) in per_point {
            grid_white.extend(k);
            grid_mean.push(m);
            grid_var.push(v);
        }
        let mut this = Self {
            model,
            value,
            grid_z,
            grid_white,
            grid_mean,
            grid_var,
            normal_max: normals.iter().fold(0.0f64, |m, z| m.max(z.abs())),
            normals,
            base_max: 0.0,
        };
        this.base_max = (0..this.grid_mean.len())
            .map(|g| {
                let (m, v) = model.to_problem_units(this.grid_mean[g], this.grid_var[g]);
                value.value(m, v.sqrt())
            })
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(this)
    }

    /// Maximum of the current value function over the grid.
    pub fn current_max(&self) -> f64 {
        self.base_max
    }

    /// Monte Carlo lookahead acquisition at `candidate` (not cost-normalized).
    pub fn evaluate(&self, candidate: &InputFidelityPoint) -> f64 {
        let model = self.model;
        if model.data().contains(candidate) {
            return self.base_max;
        }
        let n = model.len();
        let w = model.kernel.width();
        let sv = model.kernel.signal_variance;
        let zp = model.unit_point(&candidate.x, candidate.s);
        let mut kp = vec![0.0; n];
        model.cross_cov(&zp, &mut kp);
        forward_solve(&model.chol, &mut kp);
        let var_p = sv - kp.iter().map(|v| v * v).sum::<f64>();
        if var_p <= (2.0 * model.jitter).max(1e-12 * sv) {
            return self.base_max;
        }
        let sd_p = var_p.sqrt();
        let st = model.standardization();

        let nf = self.normals.len();
        let mut maxes = vec![f64::NEG_INFINITY; nf];
        let mut skipped = false;
        for g in 0..self.grid_mean.len() {
            let white = &self.grid_white[g * n..(g + 1) * n];
            let prior = model.kernel.eval(&self.grid_z[g * w..(g + 1) * w], &zp);
            let cov = prior - white.iter().zip(&kp).map(|(a, b)| a * b).sum::<f64>();
            let var_new = (self.grid_var[g] - cov * cov / var_p).max(0.0);
            let sd_new = st.scale * var_new.sqrt();
            let sd_now = st.scale * self.grid_var[g].sqrt();
            let slope = st.scale * cov / sd_p;
            let center = st.mean + st.scale * self.grid_mean[g];
            let spread = slope.abs() * self.normal_max;
            if self.value.negligible(center - spread, center + spread, sd_new, sd_now) {
                skipped = true;
                continue;
            }
            for (m, z) in maxes.iter_mut().zip(&self.normals) {
                let v = self.value.value_with_band(center + slope * z, sd_new, sd_now);
                if v > *m {
                    *m = v;
                }
            }
        }
        let floor = if skipped { 0.0 } else { f64::NEG_INFINITY };
        maxes.iter().map(|m| m.max(floor)).sum::<f64>() / nf as f64
    }
}

fn fantasy_normals(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Lookahead acquisition at one candidate: average over `n_fantasies` draws
/// of the maximum highest-fidelity value after conditioning on the draw.
pub fn lookahead_acquisition<V: ValueFunction>(
    model: &GpModel,
    candidate: &InputFidelityPoint,
    value: &V,
    acfg: &AcquisitionConfig,
    inner_grid: &[InputFidelityPoint],
) -> Result<f64> {
    acfg.validate()?;
    let normals = fantasy_normals(acfg.n_fantasies, derive_seed(acfg.seed, 1));
    Ok(Lookahead::new(model, value, inner_grid, normals)?.evaluate(candidate))
}

/// Outcome of one cost-normalized selection round.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub point: InputFidelityPoint,
    /// Lookahead acquisition value, before dividing by cost.
    pub acquisition: f64,
    pub cost: f64,
}

impl Selection {
    pub fn normalized(&self) -> f64 {
        self.acquisition / self.cost
    }
}

fn better(a: &Selection, b: &Selection) -> bool {
    let (na, nb) = (a.normalized(), b.normalized());
    na > nb || (na == nb && a.point.s > b.point.s)
}

/// Picks the maximizer of acquisition / cost among explicit candidates.
/// Ties go to the higher fidelity, then to the lower index. Observed points are skipped.
pub fn select_from_candidates<V: ValueFunction>(
    lookahead: &Lookahead<'_, V>,
    cost: &CostModel,
    candidates: &[InputFidelityPoint],
) -> Result<Selection> {
    let data = lookahead.model.data();
    let scored: Vec<Option<Selection>> = candidates
        .par_iter()
        .map(|p| {
            if data.contains(p) {
                return Ok(None);
            }
            let c = cost.eval(p.s)?;
            Ok(Some(Selection {
                point: p.clone(),
                acquisition: lookahead.evaluate(p),
                cost: c,
            }))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<Selection> = None;
    for s in scored.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| better(&s, b)) {
            best = Some(s);
        }
    }
    best.ok_or(Error::EmptyCandidateSet)
}

/// Selects the next query by maximizing lookahead acquisition / cost over `X × S`.
pub fn select_next<V: ValueFunction>(
    model: &GpModel,
    domain: &Domain,
    cost: &CostModel,
    value: &V,
    acfg: &AcquisitionConfig,
    rng_seed: u64,
) -> Result<Selection> {
    select_next_within(model, domain, cost, value, acfg, rng_seed, None)
}

/// As [`select_next`], restricted to fidelities whose cost does not exceed `max_cost`.
pub fn select_next_within<V: ValueFunction>(
    model: &GpModel,
    domain: &Domain,
    cost: &CostModel,
    value: &V,
    acfg: &AcquisitionConfig,
    rng_seed: u64,
    max_cost: Option<f64>,
) -> Result<Selection> {
    acfg.validate()?;
    let round = derive_seed(acfg.seed, rng_seed);
    let normals = fantasy_normals(acfg.n_fantasies, derive_seed(round, 1));
    let grid = inner_grid(domain, acfg.inner_grid_size, derive_seed(round, 2));
    let lookahead = Lookahead::new(model, value, &grid, normals)?;

    let d = domain.dim();
    let mut r = rng(derive_seed(round, 3));
    let (candidates, s_max) = match domain.fidelity() {
        FidelitySpace::Continuous => {
            let s_max = match max_cost {
                Some(c) => cost.max_affordable_fidelity(c).ok_or(Error::EmptyCandidateSet)?,
                None => 1.0,
            };
            let pts = latin_hypercube(acfg.outer_candidates, d + 1, &mut r)
                .into_iter()
                .map(|u| InputFidelityPoint::new(domain.from_unit(&u[..d]), u[d] * s_max))
                .collect::<Vec<_>>();
            (pts, Some(s_max))
        }
        FidelitySpace::Discrete { levels } => {
            let affordable: Vec<f64> = levels
                .iter()
                .copied()
                .filter(|&l| match max_cost {
                    Some(c) => cost.eval(l).map(|v| v <= c).unwrap_or(false),
                    None => true,
                })
                .collect();
            let nx = (acfg.outer_candidates / affordable.len().max(1)).max(1);
            let xs = latin_hypercube(nx, d, &mut r);
            let mut pts = Vec::with_capacity(nx * affordable.len());
            for u in &xs {
                let x = domain.from_unit(u);
                for &l in &affordable {
                    pts.push(InputFidelityPoint::new(x.clone(), l));
                }
            }
            (pts, None)
        }
    };
    let best = select_from_candidates(&lookahead, cost, &candidates)?;
    match s_max {
        Some(s_max) if acfg.polish_evals > 0 => polish(&lookahead, domain, cost, best, s_max, acfg),
        _ => Ok(best),
    }
}

/// Compass search in unit coordinates around the best screened candidate,
/// after trying the fidelity bounds at the same design point.
fn polish<V: ValueFunction>(
    lookahead: &Lookahead<'_, V>,
    domain: &Domain,
    cost: &CostModel,
    start: Selection,
    s_max: f64,
    acfg: &AcquisitionConfig,
) -> Result<Selection> {
    let data = lookahead.model.data();
    let d = domain.dim();
    let score = |p: InputFidelityPoint| -> Result<Option<Selection>> {
        if data.contains(&p) {
            return Ok(None);
        }
        let c = cost.eval(p.s)?;
        Ok(Some(Selection {
            acquisition: lookahead.evaluate(&p),
            point: p,
            cost: c,
        }))
    };

    let mut best = start;
    let mut budget = acfg.polish_evals;
    for s in [0.0, s_max] {
        if budget == 0 {
            break;
        }
        budget -= 1;
        if let Some(c) = score(InputFidelityPoint::new(best.point.x.clone(), s))? {
            if better(&c, &best) {
                best = c;
            }
        }
    }

    let mut u: Vec<f64> = (0..d)
        .map(|i| (best.point.x[i] - domain.lower()[i]) / domain.side(i))
        .collect();
    u.push(best.point.s / s_max.max(f64::MIN_POSITIVE));
    let mut step = 0.5 / (acfg.outer_candidates as f64).powf(1.0 / (d + 1) as f64);
    while budget > 0 && step > 1e-6 {
        let mut improved = false;
        'axes: for axis in 0..=d {
            for dir in [1.0, -1.0] {
                if budget == 0 {
                    break 'axes;
                }
                let mut trial = u.clone();
                trial[axis] = (trial[axis] + dir * step).clamp(0.0, 1.0);
                if trial[axis] == u[axis] {
                    continue;
                }
                budget -= 1;
                let p = InputFidelityPoint::new(domain.from_unit(&trial[..d]), trial[d] * s_max);
                if let Some(c) = score(p)? {
                    if better(&c, &best) {
                        best = c;
                        u = trial;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}
