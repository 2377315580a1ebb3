//! Budget and stage-count sweeps.

use rayon::prelude::*;

use crate::ctmc::{Ctmc, Route};
use crate::error::{Error, Result};
use crate::estimators::{all_map_points, p_map_plan_via, Estimator, MapPoints, MapScan, StagePlan, StageSequence};
use crate::freshness::mbf_general_via;
use crate::policy::{default_grid, solve_constrained, ConstrainedOptions, PolicyKind, DEFAULT_BISECT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PolicyMode {
    Uniform,
    Optimal,
}

impl PolicyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyMode::Uniform => "uniform",
            PolicyMode::Optimal => "optimal",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BudgetSweepSpec {
    pub budgets: Vec<f64>,
    pub estimators: Vec<Estimator>,
    pub grid_points: usize,
    pub bisect_tol: f64,
    pub route: Route,
}

impl BudgetSweepSpec {
    pub fn new(budgets: Vec<f64>, estimators: Vec<Estimator>) -> Self {
        BudgetSweepSpec {
            budgets,
            estimators,
            grid_points: 64,
            bisect_tol: DEFAULT_BISECT_TOL,
            route: Route::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSweepRow {
    pub budget: f64,
    pub estimator: String,
    pub policy: PolicyMode,
    pub kind: PolicyKind,
    pub mbf: f64,
    pub omega: f64,
    /// Multiplier of the optimal policy; zero for the uniform one.
    pub gamma: f64,
    pub rates: Vec<f64>,
}

fn check_ascending(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidInput(format!("{name} grid is empty")));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!("{name} grid must be positive and strictly ascending")));
    }
    Ok(())
}

/// MBF under the uniform policy `μ_i = Ω` and under the constrained
/// optimum, for every budget and estimator. Rows are ordered by budget,
/// then estimator as given, uniform before optimal.
pub fn sweep_budget(chain: &Ctmc, spec: &BudgetSweepSpec) -> Result<Vec<BudgetSweepRow>> {
    check_ascending("budget", &spec.budgets)?;
    if spec.estimators.is_empty() {
        return Err(Error::InvalidInput("no estimators to sweep".into()));
    }
    let n = chain.n_states();
    let cells: Vec<(usize, usize, PolicyMode)> = (0..spec.budgets.len())
        .flat_map(|b| {
            (0..spec.estimators.len()).flat_map(move |e| [(b, e, PolicyMode::Uniform), (b, e, PolicyMode::Optimal)])
        })
        .collect();
    let options = ConstrainedOptions {
        bisect_tol: spec.bisect_tol,
        route: spec.route,
        state_order: None,
    };
    let mut rows = cells
        .par_iter()
        .map(|&(b, e, mode)| {
            let budget = spec.budgets[b];
            let est = &spec.estimators[e];
            let row = match mode {
                PolicyMode::Uniform => {
                    let mu = vec![budget; n];
                    let plan = est.plan_via(chain, spec.route, &mu)?;
                    let r = mbf_general_via(chain, spec.route, &plan, &mu)?;
                    BudgetSweepRow {
                        budget,
                        estimator: est.name().into(),
                        policy: mode,
                        kind: PolicyKind::Simple,
                        mbf: r.mbf,
                        omega: r.avg_sampling_rate,
                        gamma: 0.0,
                        rates: mu,
                    }
                }
                PolicyMode::Optimal => {
                    let grid = default_grid(budget, spec.grid_points)?;
                    let s = solve_constrained(chain, est, budget, &grid, &options)?;
                    BudgetSweepRow {
                        budget,
                        estimator: est.name().into(),
                        policy: mode,
                        kind: s.policy.kind(),
                        mbf: s.report.mbf,
                        omega: s.report.avg_sampling_rate,
                        gamma: s.gamma,
                        rates: s.policy.mean_rates(),
                    }
                }
            };
            Ok(((b, e, mode), row))
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StageMethod {
    /// First `K` transition points.
    Truncation,
    /// Every `step`-th of the first `max_points` points, starting with the first.
    Periodic,
    /// p-MAP with all of the first `max_points` points.
    Reference,
    /// The MAP estimate itself, cut after `max_points` switches.
    Map,
}

impl StageMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageMethod::Truncation => "truncation",
            StageMethod::Periodic => "periodic",
            StageMethod::Reference => "reference",
            StageMethod::Map => "map",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageSweepSpec {
    /// Common sampling rates `μ_i = μ` to sweep.
    pub mus: Vec<f64>,
    pub max_points: usize,
    pub scan: MapScan,
    pub route: Route,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSweepRow {
    pub mu: f64,
    pub method: StageMethod,
    /// Period of the periodic method; 1 otherwise.
    pub step: usize,
    /// Transition points used per state (at most).
    pub points: usize,
    pub mbf: f64,
}

#[derive(Debug, Clone)]
pub struct StageSweep {
    pub rows: Vec<StageSweepRow>,
    pub map_points: Vec<MapPoints>,
}

fn selected_boundaries(points: &[MapPoints], keep: impl Fn(usize) -> bool, max_points: usize) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            let mut b = vec![0.0];
            b.extend(
                p.transition_times
                    .iter()
                    .take(max_points)
                    .enumerate()
                    .filter(|(k, _)| keep(*k))
                    .map(|(_, t)| *t),
            );
            b.push(f64::INFINITY);
            b
        })
        .collect()
}

fn map_reference_plan(points: &[MapPoints], max_points: usize) -> Result<StagePlan> {
    let rows = points
        .iter()
        .map(|p| {
            let k = max_points.min(p.transition_times.len());
            StageSequence::new(p.boundaries(k), p.values[..=k].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    StagePlan::new(rows)
}

/// MBF of p-MAP estimators built from subsets of the MAP transition points,
/// under uniform sampling. Rows are ordered by `μ`, method, step and count.
pub fn sweep_stages(chain: &Ctmc, spec: &StageSweepSpec) -> Result<StageSweep> {
    check_ascending("rate", &spec.mus)?;
    if spec.max_points == 0 {
        return Err(Error::InvalidInput("need at least one transition point".into()));
    }
    let map_points = all_map_points(chain, spec.scan)?;
    let n = chain.n_states();
    let m = spec.max_points;

    let mut jobs: Vec<(f64, StageMethod, usize, Vec<Vec<f64>>)> = Vec::new();
    for &mu in &spec.mus {
        for k in 0..=m {
            jobs.push((mu, StageMethod::Truncation, k, selected_boundaries(&map_points, |i| i < k, m)));
        }
        for step in 1..=m {
            jobs.push((mu, StageMethod::Periodic, step, selected_boundaries(&map_points, |i| i % step == 0, m)));
        }
        jobs.push((mu, StageMethod::Reference, m, selected_boundaries(&map_points, |_| true, m)));
    }
    let mut rows = jobs
        .par_iter()
        .map(|(mu, method, param, bounds)| {
            let rates = vec![*mu; n];
            let plan = p_map_plan_via(chain, spec.route, &rates, bounds)?;
            let mbf = mbf_general_via(chain, spec.route, &plan, &rates)?.mbf;
            let used = bounds.iter().map(|b| b.len() - 2).max().unwrap_or(0);
            let step = if *method == StageMethod::Periodic { *param } else { 1 };
            Ok(StageSweepRow {
                mu: *mu,
                method: *method,
                step,
                points: used.max(if *method == StageMethod::Truncation { *param } else { 0 }),
                mbf,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let map_plan = map_reference_plan(&map_points, m)?;
    for &mu in &spec.mus {
        let rates = vec![mu; n];
        rows.push(StageSweepRow {
            mu,
            method: StageMethod::Map,
            step: 1,
            points: m,
            mbf: mbf_general_via(chain, spec.route, &map_plan, &rates)?.mbf,
        });
    }
    rows.sort_by(|a, b| {
        a.mu.total_cmp(&b.mu)
            .then(a.method.cmp(&b.method))
            .then(a.step.cmp(&b.step))
            .then(a.points.cmp(&b.points))
    });
    Ok(StageSweep { rows, map_points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::martingale_plan;
    use crate::freshness::mbf_general;

    fn ring4() -> Ctmc {
        Ctmc::from_rates(4, &[(0, 1, 1.0), (1, 2, 0.75), (2, 3, 1.0), (3, 0, 0.75)]).unwrap()
    }

    #[test]
    fn stage_sweep_shape() {
        let c = ring4();
        let spec = StageSweepSpec {
            mus: vec![0.3],
            max_points: 9,
            scan: MapScan::with_horizon(36.0),
            route: Route::Auto,
        };
        let sweep = sweep_stages(&c, &spec).unwrap();
        let trunc: Vec<&StageSweepRow> = sweep.rows.iter().filter(|r| r.method == StageMethod::Truncation).collect();
        assert_eq!(trunc.len(), 10);
        assert!(trunc.windows(2).all(|w| w[1].mbf >= w[0].mbf - 1e-12));
        let reference = sweep.rows.iter().find(|r| r.method == StageMethod::Reference).unwrap();
        assert!((trunc[9].mbf - reference.mbf).abs() < 1e-12);
        // zero points is the martingale
        let m = mbf_general(&c, &martingale_plan(&c), &[0.3; 4]).unwrap().mbf;
        assert!((trunc[0].mbf - m).abs() < 1e-10);
        for p in sweep.rows.iter().filter(|r| r.method == StageMethod::Periodic) {
            assert!(trunc[p.points].mbf >= p.mbf - 1e-12);
        }
    }

    #[test]
    fn periodic_counts() {
        let c = ring4();
        let spec = StageSweepSpec {
            mus: vec![1.0],
            max_points: 9,
            scan: MapScan::with_horizon(36.0),
            route: Route::Auto,
        };
        let sweep = sweep_stages(&c, &spec).unwrap();
        let counts: Vec<usize> = sweep
            .rows
            .iter()
            .filter(|r| r.method == StageMethod::Periodic)
            .map(|r| r.points)
            .collect();
        assert_eq!(counts, vec![9, 5, 3, 3, 2, 2, 2, 2, 1]);
    }

    #[test]
    fn budget_sweep_rows_sorted() {
        let c = Ctmc::from_rates(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let mut spec = BudgetSweepSpec::new(vec![0.5, 1.0], vec![Estimator::Martingale, Estimator::TauMap { tau: 0.4 }]);
        spec.grid_points = 16;
        let rows = sweep_budget(&c, &spec).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].budget, 0.5);
        assert_eq!(rows[0].policy, PolicyMode::Uniform);
        assert_eq!(rows[1].policy, PolicyMode::Optimal);
        assert_eq!(rows[2].estimator, "tau-map");
        for pair in rows.chunks(2) {
            assert!(pair[1].mbf >= pair[0].mbf - 1e-9);
        }
        assert!(sweep_budget(&c, &BudgetSweepSpec::new(vec![1.0, 0.5], vec![Estimator::Martingale])).is_err());
    }
}
