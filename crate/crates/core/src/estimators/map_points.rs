//! Transition points of the MAP estimate `argmax_j P_ij(t)`.
//!
//! The MAP estimate is found on a uniform grid; every change of the leading
//! state is refined by bisection on the sign of the difference of the two
//! leading probabilities.

use nalgebra::DMatrix;

use crate::ctmc::{Ctmc, Kernel};
use crate::error::{Error, Result};
use crate::spectral::SpectralDecomposition;
use crate::uniformization::Uniformizer;

/// Absolute time tolerance of the bisection refinement.
pub const BISECTION_TOL: f64 = 1e-10;
/// A new leader within this margin of the current estimate at both ends of a
/// grid cell counts as tied; relative to the largest deviation from `π`.
pub const TIE_TOL: f64 = 1e-9;
/// Absolute part of the tie margin.
pub const TIE_FLOOR: f64 = 1e-15;
/// Default horizon in units of the slowest relaxation time.
pub const HORIZON_RELAXATIONS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoints {
    pub state: usize,
    /// Ascending switch times of the MAP estimate within the horizon.
    pub transition_times: Vec<f64>,
    /// MAP state on each interval; one longer than `transition_times`.
    pub values: Vec<usize>,
    /// Set when more switches may exist beyond the horizon.
    pub truncated: bool,
    /// Set when two leading probabilities were indistinguishable over a grid
    /// cell; the smaller state was kept.
    pub degenerate_tie: bool,
    pub horizon: f64,
}

impl MapPoints {
    /// Stage boundaries `[0, τ*_1, ..., τ*_K, ∞)` from the first `k` points.
    pub fn boundaries(&self, k: usize) -> Vec<f64> {
        let k = k.min(self.transition_times.len());
        let mut b = Vec::with_capacity(k + 2);
        b.push(0.0);
        b.extend_from_slice(&self.transition_times[..k]);
        b.push(f64::INFINITY);
        b
    }
}

/// Grid and horizon used when scanning for MAP transition points.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MapScan {
    /// Defaults to `30 / d_2` for chains with a real spectrum; required for
    /// complex spectra.
    pub horizon: Option<f64>,
    /// Defaults to `0.01 / max_i q_i`.
    pub grid_step: Option<f64>,
}

impl MapScan {
    pub fn with_horizon(horizon: f64) -> Self {
        MapScan {
            horizon: Some(horizon),
            grid_step: None,
        }
    }

    pub fn resolve(&self, chain: &Ctmc) -> Result<(f64, f64)> {
        let horizon = match self.horizon {
            Some(h) => h,
            None if chain.spectrum().is_complex() => {
                return Err(Error::InvalidInput(
                    "a horizon is required to enumerate MAP points of a chain with complex spectrum".into(),
                ))
            }
            None if chain.mixing_rate() > 0.0 => HORIZON_RELAXATIONS / chain.mixing_rate(),
            None => 1.0,
        };
        let step = self.grid_step.unwrap_or_else(|| {
            let q = chain.max_exit_rate();
            if q > 0.0 {
                0.01 / q
            } else {
                0.01
            }
        });
        if !(horizon > 0.0) || !(step > 0.0) {
            return Err(Error::InvalidInput("horizon and grid step must be positive".into()));
        }
        Ok((horizon, step))
    }
}

/// `P_ia(t) - P_ib(t)` from the stationary law and the deviation `e`.
fn gap(pi: &[f64], e: &[f64], a: usize, b: usize) -> f64 {
    (pi[a] - pi[b]) + (e[a] - e[b])
}

/// Leading state, smallest index on exact ties.
fn leader(pi: &[f64], e: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..pi.len() {
        if gap(pi, e, j, best) > 0.0 {
            best = j;
        }
    }
    best
}

fn tie_scale(e: &[f64]) -> f64 {
    TIE_TOL * e.iter().fold(0.0f64, |m, x| m.max(x.abs())) + TIE_FLOOR
}

/// Deviation `P_i·(t) - π`, kept apart from `π` so that late, small
/// transients retain their relative precision.
enum Deviation<'a> {
    Spectral(&'a SpectralDecomposition),
    Uniformized(&'a Uniformizer),
}

impl Deviation<'_> {
    fn at(&self, i: usize, t: f64, pi: &[f64], out: &mut [f64]) {
        match self {
            Deviation::Spectral(s) => s.transient_into(i, t, out),
            Deviation::Uniformized(u) => {
                let mut e0: Vec<f64> = pi.iter().map(|p| -p).collect();
                e0[i] += 1.0;
                vec_mat(&e0, &u.matrix(t), out);
            }
        }
    }
}

fn vec_mat(v: &[f64], m: &DMatrix<f64>, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = v.iter().enumerate().map(|(l, x)| x * m[(l, j)]).sum();
    }
}

/// Scans `argmax_j P_ij(t)` over `[0, horizon]` and refines each switch.
pub fn map_transition_points(chain: &Ctmc, i: usize, horizon: f64, grid_step: f64) -> Result<MapPoints> {
    map_transition_points_with(chain, chain.kernel(), i, horizon, grid_step)
}

pub fn map_transition_points_with(
    chain: &Ctmc,
    kernel: Kernel<'_>,
    i: usize,
    horizon: f64,
    grid_step: f64,
) -> Result<MapPoints> {
    let n = chain.n_states();
    if i >= n {
        return Err(Error::InvalidInput(format!("state {} out of range", i + 1)));
    }
    if !(horizon > 0.0 && horizon.is_finite()) || !(grid_step > 0.0) {
        return Err(Error::InvalidInput("horizon and grid step must be positive and finite".into()));
    }
    let cells = (horizon / grid_step).ceil().max(1.0) as usize;
    let h = horizon / cells as f64;
    let pi = chain.stationary();

    let deviation = match kernel {
        Kernel::Spectral(s) => Deviation::Spectral(s),
        Kernel::Uniformized(u) => Deviation::Uniformized(u),
    };
    // uniformized deviations are stepped forward with a one-cell propagator
    let stepper = match kernel {
        Kernel::Uniformized(u) => Some(u.matrix(h)),
        Kernel::Spectral(_) => None,
    };
    let mut e: Vec<f64> = pi.iter().map(|p| -p).collect();
    e[i] += 1.0;
    let mut prev = vec![0.0; n];

    let mut times = Vec::new();
    let mut values = vec![i];
    let mut degenerate = false;
    let mut truncated = false;

    for k in 1..=cells {
        let t = k as f64 * h;
        std::mem::swap(&mut e, &mut prev);
        match &stepper {
            Some(m) => vec_mat(&prev, m, &mut e),
            None => deviation.at(i, t, pi, &mut e),
        }
        let new_lead = leader(pi, &e);
        let current = *values.last().unwrap();
        if new_lead == current {
            continue;
        }
        if gap(pi, &prev, new_lead, current).abs() <= tie_scale(&prev)
            && gap(pi, &e, new_lead, current).abs() <= tie_scale(&e)
        {
            // indistinguishable over the whole cell: keep the estimate
            degenerate = true;
            continue;
        }
        let tau = refine(&deviation, pi, i, current, new_lead, t - h, &prev, t);
        times.push(tau);
        values.push(new_lead);
        if k == cells {
            truncated = true;
        }
    }
    if chain.spectrum().is_complex() {
        truncated = true;
    }
    Ok(MapPoints {
        state: i,
        transition_times: times,
        values,
        truncated,
        degenerate_tie: degenerate,
        horizon,
    })
}

/// Bisects for the time where `b` overtakes `a` inside `[lo, hi]`; `e_lo`
/// is the deviation at `lo`.
#[allow(clippy::too_many_arguments)]
fn refine(
    deviation: &Deviation<'_>,
    pi: &[f64],
    i: usize,
    a: usize,
    b: usize,
    lo: f64,
    e_lo: &[f64],
    hi: f64,
) -> f64 {
    let start = lo;
    let (mut lo, mut hi) = (lo, hi);
    let mut e = vec![0.0; pi.len()];
    let a_leads = |e: &[f64]| {
        let g = gap(pi, e, a, b);
        g > 0.0 || (g == 0.0 && a < b)
    };
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match deviation {
            Deviation::Spectral(_) => deviation.at(i, mid, pi, &mut e),
            // short propagation from the cell start keeps the error relative
            Deviation::Uniformized(u) => vec_mat(e_lo, &u.matrix(mid - start), &mut e),
        }
        if a_leads(&e) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// MAP transition points for every initial state.
pub fn all_map_points(chain: &Ctmc, scan: MapScan) -> Result<Vec<MapPoints>> {
    let (horizon, step) = scan.resolve(chain)?;
    (0..chain.n_states())
        .map(|i| map_transition_points(chain, i, horizon, step))
        .collect()
}

/// Time after which the MAP estimate equals the stationary mode from every
/// initial state. Requires a unique stationary maximum and a complete scan.
pub fn mode_settling_time(chain: &Ctmc, scan: MapScan) -> Result<f64> {
    let pi = chain.stationary();
    let mode = chain.stationary_mode();
    let contested = pi
        .iter()
        .enumerate()
        .any(|(j, &p)| j != mode && p >= pi[mode] * (1.0 - crate::ctmc::STATIONARY_TIE_TOL));
    if contested {
        return Err(Error::InvalidInput(
            "the stationary distribution has no unique maximum, so τ* is undefined".into(),
        ));
    }
    let points = all_map_points(chain, scan)?;
    let mut tau = 0.0f64;
    for p in &points {
        if p.truncated || *p.values.last().unwrap() != mode {
            return Err(Error::InvalidInput(format!(
                "MAP estimate from state {} has not settled on the stationary mode within the horizon",
                p.state + 1
            )));
        }
        tau = tau.max(p.transition_times.last().copied().unwrap_or(0.0));
    }
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetric_two_state_points() {
        let c = Ctmc::from_rates(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let (h, step) = MapScan::default().resolve(&c).unwrap();
        assert!((h - 10.0).abs() < 1e-9);
        let p = map_transition_points(&c, 0, h, step).unwrap();
        assert_eq!(p.transition_times.len(), 1);
        assert!((p.transition_times[0] - 4f64.ln() / 3.0).abs() < 1e-9);
        assert_eq!(p.values, vec![0, 1]);
        assert!(!p.truncated);

        let p = map_transition_points(&c, 1, h, step).unwrap();
        assert!(p.transition_times.is_empty());
        assert_eq!(p.values, vec![1]);
    }

    #[test]
    fn numeric_route_agrees() {
        let c = Ctmc::from_rates(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let p = map_transition_points_with(&c, c.numeric_kernel(), 0, 10.0, 0.005).unwrap();
        assert!((p.transition_times[0] - 4f64.ln() / 3.0).abs() < 1e-9);
    }

    #[test]
    fn ring_oscillates() {
        let c = Ctmc::from_rates(4, &[(0, 1, 1.0), (1, 2, 0.75), (2, 3, 1.0), (3, 0, 0.75)]).unwrap();
        assert!(MapScan::default().resolve(&c).is_err());
        let p = map_transition_points(&c, 0, 20.0, 0.01).unwrap();
        assert!(p.truncated);
        assert!(p.transition_times.len() >= 3, "{:?}", p.transition_times);
        // crossings of the leading pair
        for (k, &t) in p.transition_times.iter().enumerate() {
            let row = c.kernel().row(0, t);
            let (a, b) = (p.values[k], p.values[k + 1]);
            assert!((row[a] - row[b]).abs() < 1e-9);
        }
        assert!(mode_settling_time(&c, MapScan::with_horizon(20.0)).is_err());
    }

    #[test]
    fn settling_time_of_asymmetric_pair() {
        let c = Ctmc::from_rates(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let tau = mode_settling_time(&c, MapScan::default()).unwrap();
        assert!((tau - 4f64.ln() / 3.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric_complete_graph_keeps_start() {
        // the other two states are exactly tied but never lead
        let c = Ctmc::from_rates(
            3,
            &[(0, 1, 1.0), (0, 2, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 1, 1.0)],
        )
        .unwrap();
        let p = map_transition_points(&c, 1, 30.0, 0.01).unwrap();
        assert!(p.transition_times.is_empty(), "{:?}", p.transition_times);
        assert!(!p.degenerate_tie);
    }

    #[test]
    fn ring_points_keep_their_period() {
        // π ties states 2 and 4, so the estimate oscillates forever with a
        // decaying gap
        let c = Ctmc::from_rates(4, &[(0, 1, 1.0), (1, 2, 0.75), (2, 3, 1.0), (3, 0, 0.75)]).unwrap();
        let p = map_transition_points(&c, 0, 36.0, 0.005).unwrap();
        let half_period = std::f64::consts::PI / 0.856_956_825_3;
        assert!(p.transition_times.len() >= 9);
        for w in p.transition_times[1..9].windows(2) {
            assert!((w[1] - w[0] - half_period).abs() < 1e-4, "{:?}", p.transition_times);
        }
        // past the resolvable transient the leaders tie
        let far = map_transition_points(&c, 1, 60.0, 0.005).unwrap();
        assert!(far.degenerate_tie);
    }
}
