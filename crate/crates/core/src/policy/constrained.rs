//! Budget-constrained optimization: Lagrangian relaxation, bisection on the
//! multiplier, and one-state randomization when the budget falls in a jump
//! of `ω^γ`.

use crate::ctmc::{Ctmc, Route};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::freshness::MbfReport;

use super::smdp::{build_smdp_via, evaluate_policy, policy_iteration, SmdpModel};
use super::SamplingPolicy;

pub const DEFAULT_BISECT_TOL: f64 = 1e-4;
const MAX_DOUBLINGS: usize = 200;
const MAX_BISECTIONS: usize = 200;
/// Relative width of the final `γ` bracket.
const GAMMA_RESOLUTION: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub gamma: f64,
    pub omega: f64,
    pub mbf: f64,
}

#[derive(Debug, Clone)]
pub struct ConstrainedOptions {
    pub bisect_tol: f64,
    pub route: Route,
    /// Order in which the hybrid sweep hands states from the over-budget
    /// policy to the under-budget one; natural order when `None`.
    pub state_order: Option<Vec<usize>>,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        ConstrainedOptions {
            bisect_tol: DEFAULT_BISECT_TOL,
            route: Route::Auto,
            state_order: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub policy: SamplingPolicy,
    pub report: MbfReport,
    pub budget: f64,
    /// Multiplier of the returned policy; for a semi-simple policy the
    /// midpoint of the final bracket.
    pub gamma: f64,
    /// Final bracket width around `γ*` when randomization was needed.
    pub epsilon: Option<f64>,
    /// Every multiplier evaluated, in evaluation order.
    pub trace: Vec<TracePoint>,
}

impl ConstrainedSolution {
    /// Whether `ω^γ` is nonincreasing in `γ` across the trace.
    pub fn trace_is_monotone(&self) -> bool {
        let mut t = self.trace.clone();
        t.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
        t.windows(2).all(|w| w[1].omega <= w[0].omega * (1.0 + 1e-12) + 1e-15)
    }
}

struct Solver {
    model: SmdpModel,
    trace: Vec<TracePoint>,
    budget: f64,
    tol: f64,
}

struct Point {
    gamma: f64,
    actions: Vec<usize>,
    omega: f64,
}

impl Solver {
    fn solve(&mut self, gamma: f64) -> Result<Point> {
        let model = self.model.with_gamma(gamma);
        let r = policy_iteration(&model)?;
        let v = model.evaluate(&r.actions)?;
        self.trace.push(TracePoint {
            gamma,
            omega: v.omega,
            mbf: v.mbf,
        });
        Ok(Point {
            gamma,
            actions: r.actions,
            omega: v.omega,
        })
    }

    fn hits(&self, omega: f64) -> bool {
        (omega - self.budget).abs() <= self.tol * self.budget
    }
}

/// Maximizes MBF subject to `ω ≤ budget` over the action grid.
pub fn solve_constrained(
    chain: &Ctmc,
    estimator: &Estimator,
    budget: f64,
    grid: &[f64],
    options: &ConstrainedOptions,
) -> Result<ConstrainedSolution> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidInput(format!("budget must be positive, got {budget}")));
    }
    if !(options.bisect_tol > 0.0) {
        return Err(Error::InvalidInput("bisection tolerance must be positive".into()));
    }
    let n = chain.n_states();
    let order = match &options.state_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::InvalidInput("state order must be a permutation of the states".into()));
            }
            o.clone()
        }
        None => (0..n).collect(),
    };
    let model = build_smdp_via(chain, options.route, estimator, 0.0, grid)?;
    if budget <= model.grid()[0] {
        return Err(Error::BudgetInfeasible {
            budget,
            floor: model.grid()[0],
        });
    }
    let mut s = Solver {
        model,
        trace: Vec::new(),
        budget,
        tol: options.bisect_tol,
    };
    let finish_simple = |s: Solver, p: Point| -> Result<ConstrainedSolution> {
        let policy = s.model.policy(&p.actions)?;
        let report = evaluate_policy(chain, options.route, estimator, &policy)?;
        Ok(ConstrainedSolution {
            policy,
            report,
            budget,
            gamma: p.gamma,
            epsilon: None,
            trace: s.trace,
        })
    };

    let zero = s.solve(0.0)?;
    if zero.omega <= budget || s.hits(zero.omega) {
        return finish_simple(s, zero);
    }

    let mut lo = zero;
    let mut hi = s.solve(1.0)?;
    let mut doublings = 0;
    while hi.omega > budget && !s.hits(hi.omega) {
        lo = hi;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::NoConvergence(MAX_DOUBLINGS));
        }
        hi = s.solve(lo.gamma * 2.0)?;
    }
    if s.hits(hi.omega) {
        return finish_simple(s, hi);
    }

    // lo: ω > Ω, hi: ω < Ω
    let mut steps = 0;
    while hi.gamma - lo.gamma > GAMMA_RESOLUTION * hi.gamma.max(1.0) {
        steps += 1;
        if steps > MAX_BISECTIONS {
            break;
        }
        let mid = s.solve(0.5 * (lo.gamma + hi.gamma))?;
        if s.hits(mid.omega) {
            return finish_simple(s, mid);
        }
        if mid.omega > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let epsilon = hi.gamma - lo.gamma;
    let gamma = 0.5 * (lo.gamma + hi.gamma);

    // hybrid sweep: the first k states in `order` follow `lo`, the rest `hi`
    let hybrid = |k: usize| -> Vec<usize> {
        let mut a = hi.actions.clone();
        for &st in &order[..k] {
            a[st] = lo.actions[st];
        }
        a
    };
    let mut omegas = Vec::with_capacity(n + 1);
    for k in 0..=n {
        omegas.push(s.model.evaluate(&hybrid(k))?.omega);
    }
    let k = (1..=n)
        .find(|&k| omegas[k - 1] <= budget && budget < omegas[k])
        .ok_or_else(|| Error::NumericalFailure("hybrid sweep found no budget crossing".into()))?;
    let below = hybrid(k - 1);
    if s.hits(omegas[k - 1]) {
        return finish_simple(s, Point { gamma, actions: below, omega: omegas[k - 1] });
    }
    let state = order[k - 1];
    let (act_a, act_b) = (lo.actions[state], below[state]);
    let omega_at = |p: f64| -> Result<f64> {
        let mix: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                if i == state {
                    vec![(act_a, p), (act_b, 1.0 - p)]
                } else {
                    vec![(below[i], 1.0)]
                }
            })
            .collect();
        Ok(s.model.evaluate_mixed(&mix)?.omega)
    };
    // ω(0) < Ω < ω(1); aim well inside the tolerance band
    let (mut p_lo, mut p_hi) = (0.0, 1.0);
    let mut p = 0.5;
    for _ in 0..MAX_BISECTIONS {
        p = 0.5 * (p_lo + p_hi);
        let w = omega_at(p)?;
        if (w - budget).abs() <= 1e-3 * s.tol * budget {
            break;
        }
        if w > budget {
            p_hi = p;
        } else {
            p_lo = p;
        }
    }
    let grid = s.model.grid();
    let rates: Vec<f64> = below.iter().map(|&a| grid[a]).collect();
    let policy = SamplingPolicy::semi_simple(rates, state, grid[act_a], grid[act_b], p)?;
    let report = evaluate_policy(chain, options.route, estimator, &policy)?;
    Ok(ConstrainedSolution {
        policy,
        report,
        budget,
        gamma,
        epsilon: Some(epsilon),
        trace: s.trace,
    })
}
