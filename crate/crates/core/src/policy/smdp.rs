//! Semi-Markov decision model at sampling epochs.
//!
//! The state is the last received sample, the action its sampling rate.
//! A decision at `i` with rate `μ` lasts `1/μ` on average, earns the
//! expected fresh time `E[F_{i,μ}]` minus `γ` per sample, and moves to `j`
//! with probability `∫ P_ij(t) μ e^{-μt} dt`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ctmc::{Ctmc, Kernel, Route};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::freshness::{row_freshness, EvalPath, MbfReport};
use crate::quadrature::{integrate_discounted_tail, QuadOptions};

use super::SamplingPolicy;

/// Row-sum tolerance of the transition tensor.
pub const TRANSITION_SUM_TOL: f64 = 1e-9;
/// Relative margin an action must gain before policy iteration switches.
pub const IMPROVEMENT_TOL: f64 = 1e-12;
pub const MAX_POLICY_ITERATIONS: usize = 1000;

#[derive(Debug, Clone)]
pub struct SmdpModel {
    n: usize,
    grid: Vec<f64>,
    // [i][a][j] flattened
    transitions: Vec<f64>,
    // E[F_{i,a}], [i][a] flattened
    freshness: Vec<f64>,
    gamma: f64,
}

/// `∫_0^∞ P_i·(t) μ e^{-μt} dt`.
pub fn sampled_transition_row(chain: &Ctmc, kernel: Kernel<'_>, i: usize, mu: f64) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let mut row = match kernel {
        Kernel::Spectral(s) => (0..n)
            .map(|j| mu * s.discounted_integral(i, j, mu, 0.0, f64::INFINITY))
            .collect(),
        Kernel::Uniformized(_) => {
            let v = integrate_discounted_tail(|t, out| kernel.row_into(i, t, out), mu, 0.0, n, QuadOptions::default())?;
            v.into_iter().map(|x| mu * x).collect::<Vec<_>>()
        }
    };
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > TRANSITION_SUM_TOL || row.iter().any(|&p| p < -TRANSITION_SUM_TOL) {
        return Err(Error::NumericalFailure(format!(
            "sampled transition row of state {} sums to {sum}",
            i + 1
        )));
    }
    for p in row.iter_mut() {
        *p = p.max(0.0);
    }
    Ok(row)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("action grid is empty".into()));
    }
    if grid.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidInput("action rates must be positive and finite".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("action grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Geometric grid of `points` rates over `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || points < 2 {
        return Err(Error::InvalidInput(format!(
            "cannot build a {points}-point grid over [{lo}, {hi}]"
        )));
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|k| lo * (ratio * k as f64).exp()).collect();
    grid[points - 1] = hi;
    Ok(grid)
}

/// Default action grid for budget `Ω`: geometric over `[1e-3 Ω, 10 Ω]`
/// with `Ω` itself added so the uniform policy is available.
pub fn default_grid(budget: f64, points: usize) -> Result<Vec<f64>> {
    let mut grid = geometric_grid(1e-3 * budget, 10.0 * budget, points)?;
    if !grid.iter().any(|&r| (r - budget).abs() <= 1e-12 * budget) {
        grid.push(budget);
        grid.sort_by(f64::total_cmp);
    }
    Ok(grid)
}

pub fn build_smdp(chain: &Ctmc, estimator: &Estimator, gamma: f64, grid: &[f64]) -> Result<SmdpModel> {
    build_smdp_via(chain, Route::Auto, estimator, gamma, grid)
}

pub fn build_smdp_via(chain: &Ctmc, route: Route, estimator: &Estimator, gamma: f64, grid: &[f64]) -> Result<SmdpModel> {
    check_grid(grid)?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidInput(format!("γ must be nonnegative, got {gamma}")));
    }
    let n = chain.n_states();
    let kernel = chain.kernel_for(route);
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..grid.len()).map(move |a| (i, a))).collect();
    let computed = cells
        .par_iter()
        .map(|&(i, a)| {
            let mu = grid[a];
            let row = sampled_transition_row(chain, kernel, i, mu)?;
            let stages = estimator.row(chain, route, i, mu)?;
            let fresh = row_freshness(chain, kernel, &stages, i, mu)?;
            Ok((row, fresh))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut transitions = Vec::with_capacity(n * grid.len() * n);
    let mut freshness = Vec::with_capacity(n * grid.len());
    for (row, fresh) in computed {
        transitions.extend(row);
        freshness.push(fresh);
    }
    Ok(SmdpModel {
        n,
        grid: grid.to_vec(),
        transitions,
        freshness,
        gamma,
    })
}

impl SmdpModel {
    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_actions(&self) -> usize {
        self.grid.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same model under another multiplier; nothing is recomputed.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        SmdpModel {
            gamma,
            ..self.clone()
        }
    }

    pub fn transition(&self, i: usize, a: usize) -> &[f64] {
        let start = (i * self.grid.len() + a) * self.n;
        &self.transitions[start..start + self.n]
    }

    /// `E[F_{i,a}]`.
    pub fn freshness(&self, i: usize, a: usize) -> f64 {
        self.freshness[i * self.grid.len() + a]
    }

    pub fn reward(&self, i: usize, a: usize) -> f64 {
        self.freshness(i, a) - self.gamma
    }

    pub fn sojourn(&self, _i: usize, a: usize) -> f64 {
        1.0 / self.grid[a]
    }

    /// Policy with the given action indices.
    pub fn policy(&self, actions: &[usize]) -> Result<SamplingPolicy> {
        SamplingPolicy::simple(actions.iter().map(|&a| self.grid[a]).collect())
    }

    /// Gain, MBF and `ω` of a deterministic policy.
    pub fn evaluate(&self, actions: &[usize]) -> Result<PolicyValue> {
        let mix: Vec<Vec<(usize, f64)>> = actions.iter().map(|&a| vec![(a, 1.0)]).collect();
        self.evaluate_mixed(&mix)
    }

    /// Like `evaluate`, with per-state probability mixtures over actions.
    pub fn evaluate_mixed(&self, mix: &[Vec<(usize, f64)>]) -> Result<PolicyValue> {
        let n = self.n;
        let mut p = DMatrix::zeros(n, n);
        let mut fresh = vec![0.0; n];
        let mut sojourn = vec![0.0; n];
        for (i, m) in mix.iter().enumerate() {
            for &(a, w) in m {
                for (j, &t) in self.transition(i, a).iter().enumerate() {
                    p[(i, j)] += w * t;
                }
                fresh[i] += w * self.freshness(i, a);
                sojourn[i] += w * self.sojourn(i, a);
            }
        }
        let nu = embedded_stationary(&p)?;
        Ok(PolicyValue::from_embedded(&nu, &fresh, &sojourn, self.gamma))
    }
}

/// Renewal-reward summary of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValue {
    pub mbf: f64,
    pub omega: f64,
    /// `MBF − γ ω`.
    pub gain: f64,
    pub pi_tilde: Vec<f64>,
    pub per_state_freshness: Vec<f64>,
}

impl PolicyValue {
    fn from_embedded(nu: &[f64], fresh: &[f64], sojourn: &[f64], gamma: f64) -> Self {
        let cycle: f64 = nu.iter().zip(sojourn).map(|(a, b)| a * b).sum();
        let mbf = nu.iter().zip(fresh).map(|(a, b)| a * b).sum::<f64>() / cycle;
        let omega = nu.iter().sum::<f64>() / cycle;
        PolicyValue {
            mbf,
            omega,
            gain: mbf - gamma * omega,
            pi_tilde: nu.iter().zip(sojourn).map(|(a, b)| a * b / cycle).collect(),
            per_state_freshness: fresh.to_vec(),
        }
    }
}

/// Stationary law of a stochastic matrix.
fn embedded_stationary(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let nu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("embedded sampling chain".into()))?;
    if nu.iter().any(|&x| x < -1e-10 || !x.is_finite()) {
        return Err(Error::SingularSystem("embedded stationary law has negative mass".into()));
    }
    Ok(nu.iter().map(|x| x.max(0.0)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationResult {
    pub actions: Vec<usize>,
    pub gain: f64,
    /// Relative values with `h(state 1) = 0`.
    pub bias: Vec<f64>,
    pub iterations: usize,
}

/// Solves `h = R − g H + P h`, `h(0) = 0` for `(g, h)`.
fn evaluate_relative(model: &SmdpModel, actions: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = model.n;
    // unknowns: g, h_1 .. h_{n-1}
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for s in 0..n {
        let act = actions[s];
        let row = model.transition(s, act);
        a[(s, 0)] = model.sojourn(s, act);
        for j in 1..n {
            a[(s, j)] = -row[j];
        }
        if s > 0 {
            a[(s, s)] += 1.0;
        }
        b[s] = model.reward(s, act);
    }
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("policy evaluation".into()))?;
    let mut h = vec![0.0; n];
    h[1..n].copy_from_slice(&x.as_slice()[1..n]);
    Ok((x[0], h))
}

pub fn policy_iteration(model: &SmdpModel) -> Result<PolicyIterationResult> {
    let n = model.n;
    let mut actions = vec![0; n];
    for iteration in 1..=MAX_POLICY_ITERATIONS {
        let (gain, bias) = evaluate_relative(model, &actions)?;
        let mut changed = false;
        for s in 0..n {
            let q: Vec<f64> = (0..model.n_actions())
                .map(|a| {
                    let future: f64 = model.transition(s, a).iter().zip(&bias).map(|(p, h)| p * h).sum();
                    model.reward(s, a) - gain * model.sojourn(s, a) + future
                })
                .collect();
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = IMPROVEMENT_TOL * (1.0 + best.abs());
            if best - q[actions[s]] > tol {
                actions[s] = q.iter().position(|&v| v >= best - tol).unwrap();
                changed = true;
            }
        }
        if !changed {
            return Ok(PolicyIterationResult {
                actions,
                gain,
                bias,
                iterations: iteration,
            });
        }
    }
    Err(Error::NoConvergence(MAX_POLICY_ITERATIONS))
}

/// Exhaustive search over all simple policies; returns the best actions
/// and gain. Ties keep the lexicographically first policy.
pub fn brute_force(model: &SmdpModel) -> Result<(Vec<usize>, f64)> {
    let n = model.n;
    let m = model.n_actions();
    let total = (m as u128).checked_pow(n as u32).filter(|&t| t <= 10_000_000).ok_or_else(|| {
        Error::InvalidInput(format!("{m}^{n} policies is too many to enumerate"))
    })? as usize;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut actions = vec![0; n];
    for code in 0..total {
        let mut c = code;
        for s in (0..n).rev() {
            actions[s] = c % m;
            c /= m;
        }
        let g = model.evaluate(&actions)?.gain;
        if best.as_ref().is_none_or(|(_, bg)| g > *bg) {
            best = Some((actions.clone(), g));
        }
    }
    Ok(best.unwrap())
}

/// MBF of a sampling policy (simple or semi-simple) under an estimator,
/// via the embedded chain at sampling epochs.
pub fn evaluate_policy(chain: &Ctmc, route: Route, estimator: &Estimator, policy: &SamplingPolicy) -> Result<MbfReport> {
    let n = chain.n_states();
    if policy.n_states() != n {
        return Err(Error::InvalidInput(format!(
            "policy has {} rates for a {n}-state chain",
            policy.n_states()
        )));
    }
    let kernel = chain.kernel_for(route);
    let cell = |i: usize, mu: f64| -> Result<(Vec<f64>, f64)> {
        let row = sampled_transition_row(chain, kernel, i, mu)?;
        let fresh = row_freshness(chain, kernel, &estimator.row(chain, route, i, mu)?, i, mu)?;
        Ok((row, fresh))
    };
    let mut p = DMatrix::zeros(n, n);
    let mut fresh = vec![0.0; n];
    let mut sojourn = vec![0.0; n];
    for i in 0..n {
        let mut options = vec![(policy.rates()[i], 1.0)];
        if let Some(x) = policy.randomized().filter(|x| x.state == i) {
            options = vec![(x.rate_a, x.p), (x.rate_b, 1.0 - x.p)];
        }
        for (mu, w) in options {
            let (row, f) = cell(i, mu)?;
            for (j, t) in row.into_iter().enumerate() {
                p[(i, j)] += w * t;
            }
            fresh[i] += w * f;
            sojourn[i] += w / mu;
        }
    }
    let nu = embedded_stationary(&p)?;
    let value = PolicyValue::from_embedded(&nu, &fresh, &sojourn, 0.0);
    Ok(MbfReport {
        estimator: estimator.name().into(),
        path: EvalPath::EmbeddedChain,
        mu: policy.mean_rates(),
        mbf: value.mbf.clamp(0.0, 1.0),
        per_state_freshness: value.per_state_freshness,
        avg_sampling_rate: value.omega,
        pi_tilde: value.pi_tilde,
        coefficients: None,
    })
}
