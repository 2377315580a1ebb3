//! Structured estimators as stage plans.
//!
//! Every estimator here holds the last received sample `i` and switches its
//! estimate as the sample ages. The martingale estimator never switches, the
//! τ-MAP estimator switches once to the stationary mode, and the p-MAP
//! estimator walks through arbitrary per-state stages whose values maximize
//! the discounted occupancy of each stage.

mod map_points;
mod plan;

pub use map_points::{
    all_map_points, map_transition_points, map_transition_points_with, mode_settling_time, MapPoints, MapScan,
    BISECTION_TOL, HORIZON_RELAXATIONS, TIE_TOL,
};
pub use plan::{StagePlan, StageSequence};

use std::fmt;

use crate::ctmc::{Ctmc, Kernel, Route};
use crate::error::{Error, Result};
use crate::quadrature::{integrate_discounted, QuadOptions};

/// Relative tolerance when comparing stage occupancy integrals.
pub const VALUE_TIE_TOL: f64 = 1e-12;

/// Plan that always estimates the last received sample.
pub fn martingale_plan(chain: &Ctmc) -> StagePlan {
    let rows = (0..chain.n_states()).map(StageSequence::constant).collect();
    StagePlan::new(rows).expect("martingale plan is valid")
}

/// Plan that holds the last sample for ages below `tau` and the stationary
/// mode afterwards.
pub fn tau_map_plan(chain: &Ctmc, tau: f64) -> Result<StagePlan> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!("τ must be nonnegative, got {tau}")));
    }
    let mode = chain.stationary_mode();
    let rows = (0..chain.n_states())
        .map(|i| {
            if tau.is_infinite() {
                Ok(StageSequence::constant(i))
            } else {
                StageSequence::new(vec![0.0, tau, f64::INFINITY], vec![i, mode])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    StagePlan::new(rows)
}

/// `argmax_j ∫_lo^hi P_ij(t) e^{-μ t} dt`, smallest index on ties.
pub fn stage_value(chain: &Ctmc, i: usize, mu: f64, lo: f64, hi: f64) -> Result<usize> {
    stage_value_via(chain, Route::Auto, i, mu, lo, hi)
}

pub fn stage_value_via(chain: &Ctmc, route: Route, i: usize, mu: f64, lo: f64, hi: f64) -> Result<usize> {
    let occupancy = stage_occupancy(chain, chain.kernel_for(route), i, mu, lo, hi)?;
    match occupancy {
        None => Ok(chain.stationary_mode()),
        Some(v) => Ok(argmax_tied_low(&v)),
    }
}

/// Discounted occupancy `∫_lo^hi P_i·(t) e^{-μ t} dt`, or `None` when the
/// integral diverges (`μ = 0`, `hi = ∞`).
pub fn stage_occupancy(
    chain: &Ctmc,
    kernel: Kernel<'_>,
    i: usize,
    mu: f64,
    lo: f64,
    hi: f64,
) -> Result<Option<Vec<f64>>> {
    let n = chain.n_states();
    if i >= n {
        return Err(Error::InvalidInput(format!("state {} out of range", i + 1)));
    }
    if !(lo >= 0.0 && lo < hi) {
        return Err(Error::InvalidInput(format!("empty or invalid stage [{lo}, {hi})")));
    }
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidRate {
            from: i,
            to: i,
            value: mu,
            reason: "sampling rate must be finite and nonnegative",
        });
    }
    if mu == 0.0 && hi.is_infinite() {
        return Ok(None);
    }
    let values = match kernel {
        Kernel::Spectral(s) => (0..n).map(|j| s.discounted_integral(i, j, mu, lo, hi)).collect(),
        Kernel::Uniformized(_) => integrate_discounted(
            |t, out| kernel.row_into(i, t, out),
            mu,
            lo,
            hi,
            n,
            QuadOptions::default(),
        )?,
    };
    Ok(Some(values))
}

pub(crate) fn argmax_tied_low(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = VALUE_TIE_TOL * max.abs();
    values.iter().position(|&v| v >= max - slack).unwrap_or(0)
}

/// Fills stage values for the given per-state boundaries: the first stage of
/// state `i` estimates `i`, later stages take [`stage_value`] at rate `mu[i]`.
pub fn p_map_plan(chain: &Ctmc, mu: &[f64], boundaries: &[Vec<f64>]) -> Result<StagePlan> {
    p_map_plan_via(chain, Route::Auto, mu, boundaries)
}

pub fn p_map_plan_via(chain: &Ctmc, route: Route, mu: &[f64], boundaries: &[Vec<f64>]) -> Result<StagePlan> {
    let n = chain.n_states();
    if mu.len() != n || boundaries.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n} rates and {n} boundary lists, got {} and {}",
            mu.len(),
            boundaries.len()
        )));
    }
    let rows = (0..n)
        .map(|i| p_map_row(chain, route, i, mu[i], &boundaries[i]))
        .collect::<Result<Vec<_>>>()?;
    StagePlan::new(rows)
}

pub(crate) fn p_map_row(chain: &Ctmc, route: Route, i: usize, mu: f64, boundaries: &[f64]) -> Result<StageSequence> {
    if boundaries.len() < 2 {
        return Err(Error::InvalidInput("a boundary list needs at least [0, inf]".into()));
    }
    let mut values = Vec::with_capacity(boundaries.len() - 1);
    values.push(i);
    for w in boundaries[1..].windows(2) {
        let value = if w[0] == w[1] {
            i
        } else {
            stage_value_via(chain, route, i, mu, w[0], w[1])?
        };
        values.push(value);
    }
    StageSequence::new(boundaries.to_vec(), values)
}

/// Plan that follows the MAP estimate exactly between the scanned points.
pub fn map_plan(points: &[MapPoints]) -> Result<StagePlan> {
    let rows = points
        .iter()
        .map(|p| StageSequence::new(p.boundaries(usize::MAX), p.values.clone()))
        .collect::<Result<Vec<_>>>()?;
    StagePlan::new(rows)
}

/// An estimator family with its parameters resolved against a chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Martingale,
    TauMap { tau: f64 },
    /// Per-state boundary lists; stage values are recomputed for each rate.
    PMap { boundaries: Vec<Vec<f64>> },
}

impl Estimator {
    /// τ-MAP with `τ = τ*`, the time after which the MAP estimate is the
    /// stationary mode from every state.
    pub fn tau_map_settled(chain: &Ctmc, scan: MapScan) -> Result<Self> {
        Ok(Estimator::TauMap {
            tau: mode_settling_time(chain, scan)?,
        })
    }

    /// p-MAP whose boundaries are the first `max_points` MAP transition
    /// points of every state (all of them when `None`).
    pub fn p_map_auto(chain: &Ctmc, scan: MapScan, max_points: Option<usize>) -> Result<Self> {
        let points = all_map_points(chain, scan)?;
        Ok(Self::p_map_from_points(&points, max_points))
    }

    pub fn p_map_from_points(points: &[MapPoints], max_points: Option<usize>) -> Self {
        let k = max_points.unwrap_or(usize::MAX);
        Estimator::PMap {
            boundaries: points.iter().map(|p| p.boundaries(k)).collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Martingale => "martingale",
            Estimator::TauMap { .. } => "tau-map",
            Estimator::PMap { .. } => "p-map",
        }
    }

    /// Whether stage values depend on the sampling rate.
    pub fn depends_on_rate(&self) -> bool {
        matches!(self, Estimator::PMap { .. })
    }

    pub fn plan(&self, chain: &Ctmc, mu: &[f64]) -> Result<StagePlan> {
        self.plan_via(chain, Route::Auto, mu)
    }

    pub fn plan_via(&self, chain: &Ctmc, route: Route, mu: &[f64]) -> Result<StagePlan> {
        match self {
            Estimator::Martingale => Ok(martingale_plan(chain)),
            Estimator::TauMap { tau } => tau_map_plan(chain, *tau),
            Estimator::PMap { boundaries } => p_map_plan_via(chain, route, mu, boundaries),
        }
    }

    /// Stage sequence of state `i` when it is sampled at rate `mu`.
    pub fn row(&self, chain: &Ctmc, route: Route, i: usize, mu: f64) -> Result<StageSequence> {
        match self {
            Estimator::Martingale => Ok(StageSequence::constant(i)),
            Estimator::TauMap { tau } => Ok(tau_map_plan(chain, *tau)?.row(i).clone()),
            Estimator::PMap { boundaries } => p_map_row(chain, route, i, mu, &boundaries[i]),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn asym() -> Ctmc {
        Ctmc::from_rates(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap()
    }

    fn sym() -> Ctmc {
        Ctmc::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    #[test]
    fn martingale_has_single_stages() {
        let p = martingale_plan(&sym());
        assert_eq!(p.row(0).values(), &[0]);
        assert_eq!(p.row(1).values(), &[1]);
        let c = Ctmc::from_rates(4, &[(0, 1, 1.0), (1, 2, 0.75), (2, 3, 1.0), (3, 0, 0.75)]).unwrap();
        let p = martingale_plan(&c);
        assert!((0..4).all(|i| p.row(i).stage_count() == 1));
        assert_eq!(p.evaluate(2, 7.2), 2);
    }

    #[test]
    fn tau_map_switches_to_mode() {
        let p = tau_map_plan(&asym(), 0.5).unwrap();
        assert_eq!(p.row(0).boundaries(), &[0.0, 0.5, INF]);
        assert_eq!(p.row(0).values(), &[0, 1]);
        assert_eq!(p.row(1).values(), &[1]);
        assert_eq!(p.evaluate(0, 0.5), 1);
        assert_eq!(p.evaluate(0, 0.0), 0);
        assert_eq!(tau_map_plan(&asym(), INF).unwrap(), martingale_plan(&asym()));
    }

    #[test]
    fn tau_map_mode_tie_goes_low() {
        let ring3 = Ctmc::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let p = tau_map_plan(&ring3, 1.0).unwrap();
        assert_eq!(p.row(2).values(), &[2, 0]);
        assert_eq!(p.row(0).values(), &[0]);
    }

    #[test]
    fn stage_values() {
        let tau = 4f64.ln() / 3.0;
        assert_eq!(stage_value(&asym(), 0, 1.0, tau, INF).unwrap(), 1);
        assert_eq!(stage_value(&asym(), 0, 1.0, 0.0, 1e-3).unwrap(), 0);
        assert_eq!(stage_value(&sym(), 0, 1.0, 0.0, INF).unwrap(), 0);
        // undiscounted unbounded stage falls back to the stationary mode
        assert_eq!(stage_value(&asym(), 0, 0.0, 3.0, INF).unwrap(), 1);
        assert!(stage_value(&asym(), 0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn symmetric_occupancy_oracle() {
        // ∫ P_11 e^{-t} = 2/3, ∫ P_12 e^{-t} = 1/3
        let c = sym();
        for route in [Route::Auto, Route::Numeric] {
            let occ = stage_occupancy(&c, c.kernel_for(route), 0, 1.0, 0.0, INF).unwrap().unwrap();
            assert!((occ[0] - 2.0 / 3.0).abs() < 1e-10, "{route:?} {occ:?}");
            assert!((occ[1] - 1.0 / 3.0).abs() < 1e-10, "{route:?} {occ:?}");
        }
    }

    #[test]
    fn p_map_reductions() {
        let c = asym();
        let mu = [1.0, 1.0];
        let tau = 0.7;
        let two_stage = p_map_plan(&c, &mu, &[vec![0.0, tau, INF], vec![0.0, tau, INF]]).unwrap();
        assert_eq!(two_stage, tau_map_plan(&c, tau).unwrap());
        let single = p_map_plan(&c, &mu, &[vec![0.0, INF], vec![0.0, INF]]).unwrap();
        assert_eq!(single, martingale_plan(&c));
    }

    #[test]
    fn p_map_with_map_boundaries_is_map() {
        let c = Ctmc::from_rates(
            4,
            &[(0, 1, 1.0), (1, 2, 0.8), (2, 3, 0.5), (1, 0, 0.4), (2, 1, 0.6), (3, 2, 1.0)],
        )
        .unwrap();
        let est = Estimator::p_map_auto(&c, MapScan::default(), None).unwrap();
        let plan = est.plan(&c, &[0.3, 1.0, 2.0, 0.7]).unwrap();
        let Estimator::PMap { boundaries } = &est else { unreachable!() };
        for i in 0..4 {
            for k in 0..400 {
                let t = 0.013 + k as f64 * 0.05;
                if boundaries[i].iter().any(|b| (b - t).abs() < 1e-6) {
                    continue;
                }
                let row = c.kernel().row(i, t);
                assert_eq!(plan.evaluate(i, t), argmax_tied_low(&row), "state {i} t {t}");
            }
        }
    }
}
