use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mbf_core::estimators::{map_transition_points_with, Estimator, MapScan};
use mbf_core::experiments::{sweep_budget, sweep_stages, BudgetSweepSpec, StageSweepSpec};
use mbf_core::freshness::{mbf_general_via, mbf_martingale, mbf_p_map_closed, mbf_tau_map_closed, MbfReport};
use mbf_core::policy::{
    default_grid, evaluate_policy, geometric_grid, solve_constrained, ConstrainedOptions, SamplingPolicy,
    DEFAULT_BISECT_TOL,
};
use mbf_core::sim::{pool, replicate, simulate, SimConfig, SimResult};
use mbf_core::{Ctmc, Route, SpectrumClass};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::files::{load_policy, policy_to_toml, LoadedChain};
use crate::output::{fmt_num, Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorKind {
    Martingale,
    TauMap,
    PMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RouteArg {
    /// Spectral closed forms when the chain is reversible.
    Auto,
    /// Uniformization and quadrature throughout.
    Numeric,
}

impl From<RouteArg> for Route {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Auto => Route::Auto,
            RouteArg::Numeric => Route::Numeric,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    /// Horizon for MAP transition points; required for chains with complex
    /// spectrum.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Grid step of the MAP scan.
    #[arg(long)]
    pub grid_step: Option<f64>,
}

impl ScanArgs {
    fn scan(&self) -> MapScan {
        MapScan {
            horizon: self.horizon,
            grid_step: self.grid_step,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// τ of the τ-MAP estimator: a number, `inf`, or `auto` for the time
    /// after which the MAP estimate is the stationary mode from every state.
    #[arg(long, default_value = "auto")]
    pub tau: String,
    /// p-MAP boundaries: `auto` for the MAP transition points, or interior
    /// points per state, e.g. `0.5,1.2;;0.3` (states separated by `;`).
    #[arg(long, default_value = "auto")]
    pub boundaries: String,
    /// Keep at most this many MAP transition points per state.
    #[arg(long)]
    pub points: Option<usize>,
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
    pub route: RouteArg,
}

#[derive(Debug, Clone, Args)]
pub struct RateArgs {
    /// Sampling rates: one value for every state, or one per state.
    #[arg(long, value_delimiter = ',', conflicts_with = "policy")]
    pub mu: Vec<f64>,
    /// Policy file (TOML) with per-state rates and an optional randomized state.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

fn parse_real(s: &str, what: &str) -> CliResult<f64> {
    match s.trim() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .map_err(|_| CliError::input(format!("cannot read {what} `{s}`"))),
    }
}

pub fn resolve_estimator(chain: &Ctmc, kind: EstimatorKind, args: &EstimatorArgs) -> CliResult<Estimator> {
    match kind {
        EstimatorKind::Martingale => Ok(Estimator::Martingale),
        EstimatorKind::TauMap => {
            if args.tau.trim() == "auto" {
                Ok(Estimator::tau_map_settled(chain, args.scan.scan())?)
            } else {
                let tau = parse_real(&args.tau, "τ")?;
                if !(tau >= 0.0) {
                    return Err(CliError::input(format!("τ must be nonnegative, got {tau}")));
                }
                Ok(Estimator::TauMap { tau })
            }
        }
        EstimatorKind::PMap => {
            if args.boundaries.trim() == "auto" {
                return Ok(Estimator::p_map_auto(chain, args.scan.scan(), args.points)?);
            }
            let per_state: Vec<&str> = args.boundaries.split(';').collect();
            if per_state.len() != chain.n_states() {
                return Err(CliError::input(format!(
                    "--boundaries lists {} states, the chain has {}",
                    per_state.len(),
                    chain.n_states()
                )));
            }
            let mut boundaries = Vec::with_capacity(per_state.len());
            for s in per_state {
                let mut b = vec![0.0];
                for t in s.split(',').filter(|t| !t.trim().is_empty()) {
                    b.push(parse_real(t, "boundary")?);
                }
                if let Some(k) = args.points {
                    b.truncate(k + 1);
                }
                b.push(f64::INFINITY);
                boundaries.push(b);
            }
            Ok(Estimator::PMap { boundaries })
        }
    }
}

pub enum Rates {
    Fixed(Vec<f64>),
    Policy(SamplingPolicy),
}

impl Rates {
    pub fn policy(&self) -> CliResult<SamplingPolicy> {
        match self {
            Rates::Fixed(mu) => Ok(SamplingPolicy::simple(mu.clone())?),
            Rates::Policy(p) => Ok(p.clone()),
        }
    }
}

pub fn resolve_rates(chain: &Ctmc, args: &RateArgs) -> CliResult<Rates> {
    let n = chain.n_states();
    if let Some(path) = &args.policy {
        let p = load_policy(path)?;
        if p.n_states() != n {
            return Err(CliError::input(format!(
                "policy has {} rates, the chain has {n} states",
                p.n_states()
            )));
        }
        return Ok(Rates::Policy(p));
    }
    let mu = match args.mu.len() {
        0 => return Err(CliError::input("give sampling rates with --mu or --policy")),
        1 => vec![args.mu[0]; n],
        k if k == n => args.mu.clone(),
        k => return Err(CliError::input(format!("--mu has {k} values, the chain has {n} states"))),
    };
    if let Some(bad) = mu.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
        return Err(CliError::input(format!("sampling rate {bad} must be positive and finite")));
    }
    Ok(Rates::Fixed(mu))
}

fn states_list(xs: &[f64]) -> String {
    format!("({})", xs.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(","))
}

pub fn validate(chain: &LoadedChain, table: bool) -> CliResult<Result<Table, String>> {
    let c = &chain.chain;
    let spectrum = c.spectrum();
    let max_imag = match spectrum {
        SpectrumClass::ComplexSpectrum { max_imag } => max_imag,
        _ => 0.0,
    };
    if table {
        let mut t = Table::new(
            "validate-v1",
            &["label", "states", "spectrum", "reversible", "stationary", "stationary_mode", "mixing_rate", "max_imag"],
        );
        t.push(vec![
            chain.label.clone().into(),
            c.n_states().into(),
            spectrum.to_string().into(),
            c.is_reversible().into(),
            Cell::List(c.stationary().to_vec()),
            (c.stationary_mode() + 1).into(),
            c.mixing_rate().into(),
            max_imag.into(),
        ]);
        return Ok(Ok(t));
    }
    let mut text = format!("label: {}\nstates: {}\n", chain.label, c.n_states());
    let pi = states_list(c.stationary());
    text += &match spectrum {
        SpectrumClass::Reversible => format!("Reversible, π={pi}, d₂={}\n", fmt_num(c.mixing_rate())),
        SpectrumClass::RealSpectrum => format!("RealSpectrum, π={pi}, mixing rate={}\n", fmt_num(c.mixing_rate())),
        SpectrumClass::ComplexSpectrum { max_imag } => format!(
            "ComplexSpectrum, π={pi}, max|imag|={}, mixing rate={}\n",
            fmt_num(max_imag),
            fmt_num(c.mixing_rate())
        ),
    };
    Ok(Err(text))
}

fn report_for(chain: &Ctmc, est: &Estimator, route: Route, rates: &Rates) -> CliResult<MbfReport> {
    let mu = match rates {
        Rates::Policy(p) => return Ok(evaluate_policy(chain, route, est, p)?),
        Rates::Fixed(mu) => mu,
    };
    let closed = route == Route::Auto && chain.is_reversible();
    let report = match est {
        Estimator::Martingale => mbf_martingale(chain, mu)?,
        Estimator::TauMap { tau } if closed => mbf_tau_map_closed(chain, *tau, mu)?,
        Estimator::PMap { .. } if closed => mbf_p_map_closed(chain, &est.plan(chain, mu)?, mu)?,
        _ => mbf_general_via(chain, route, &est.plan_via(chain, route, mu)?, mu)?,
    };
    Ok(report)
}

pub fn mbf(chain: &Ctmc, kinds: &[EstimatorKind], est_args: &EstimatorArgs, rate_args: &RateArgs) -> CliResult<Table> {
    let rates = resolve_rates(chain, rate_args)?;
    let route = est_args.route.into();
    let mut t = Table::new("mbf-v1", &["estimator", "path", "rates", "mbf", "omega", "pi_tilde"]);
    for &kind in kinds {
        let est = resolve_estimator(chain, kind, est_args)?;
        let r = report_for(chain, &est, route, &rates)?;
        t.push(vec![
            est.name().into(),
            r.path.as_str().into(),
            Cell::List(r.mu.clone()),
            r.mbf.into(),
            r.avg_sampling_rate.into(),
            Cell::List(r.pi_tilde.clone()),
        ]);
    }
    Ok(t)
}

pub fn map_points(chain: &Ctmc, scan: &ScanArgs, route: RouteArg) -> CliResult<Table> {
    let (horizon, step) = scan.scan().resolve(chain)?;
    let kernel = chain.kernel_for(route.into());
    let mut t = Table::new(
        "map-points-v1",
        &["state", "k", "time", "estimate", "truncated", "degenerate_tie"],
    );
    t.meta("horizon", horizon);
    for i in 0..chain.n_states() {
        let p = map_transition_points_with(chain, kernel, i, horizon, step)?;
        for (k, &v) in p.values.iter().enumerate() {
            let time = if k == 0 { 0.0 } else { p.transition_times[k - 1] };
            t.push(vec![
                (i + 1).into(),
                k.into(),
                time.into(),
                (v + 1).into(),
                p.truncated.into(),
                p.degenerate_tie.into(),
            ]);
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Sampling epochs per replication.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    /// Epochs discarded before accumulating; 1% by default.
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Independent replications; a pooled row is added when above 1.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
}

fn sim_row(t: &mut Table, rep: String, r: &SimResult, analytic: f64) {
    t.push(vec![
        rep.into(),
        Cell::Text(r.seed.to_string()),
        r.epochs.into(),
        r.empirical_mbf.into(),
        r.std_error.into(),
        analytic.into(),
        r.empirical_omega.into(),
        r.omega_std_error.into(),
        r.elapsed_sim_time.into(),
        Cell::List(r.empirical_pi_tilde.clone()),
        Cell::List(r.source_occupancy.clone()),
    ]);
}

pub fn simulate_cmd(
    chain: &Ctmc,
    kind: EstimatorKind,
    est_args: &EstimatorArgs,
    rate_args: &RateArgs,
    sim: &SimArgs,
    seed: u64,
) -> CliResult<Table> {
    let est = resolve_estimator(chain, kind, est_args)?;
    let route: Route = est_args.route.into();
    let policy = resolve_rates(chain, rate_args)?.policy()?;
    let plan = est.plan_via(chain, route, policy.rates())?;
    let alt = est.plan_via(chain, route, &policy.rates_a())?;
    let mut cfg = SimConfig::new(chain, &plan, &policy, seed, sim.samples)?;
    if let Some(w) = sim.warmup {
        cfg = cfg.with_warmup(w)?;
    }
    if policy.randomized().is_some() {
        cfg = cfg.with_alt_plan(&alt)?;
    }
    let analytic = evaluate_policy(chain, route, &est, &policy)?.mbf;
    let mut t = Table::new(
        "simulate-v1",
        &[
            "rep",
            "seed",
            "epochs",
            "empirical_mbf",
            "std_error",
            "analytic_mbf",
            "empirical_omega",
            "omega_std_error",
            "sim_time",
            "pi_tilde",
            "source_occupancy",
        ],
    );
    t.meta("estimator", est.name());
    if sim.reps <= 1 {
        sim_row(&mut t, "1".into(), &simulate(&cfg), analytic);
    } else {
        let runs = replicate(&cfg, sim.reps)?;
        for (k, r) in runs.iter().enumerate() {
            sim_row(&mut t, (k + 1).to_string(), r, analytic);
        }
        sim_row(&mut t, "pooled".into(), &pool(&runs)?, analytic);
    }
    Ok(t)
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    /// Maximum average sampling rate Ω.
    #[arg(long)]
    pub budget: f64,
    /// Points of the geometric action grid.
    #[arg(long, default_value_t = 64)]
    pub grid_points: usize,
    /// Lowest action rate; 1e-3·Ω by default.
    #[arg(long)]
    pub grid_lo: Option<f64>,
    /// Highest action rate; 10·Ω by default.
    #[arg(long)]
    pub grid_hi: Option<f64>,
    /// Relative tolerance on ω when matching the budget.
    #[arg(long, default_value_t = DEFAULT_BISECT_TOL)]
    pub bisect_tol: f64,
    /// Order of the semi-simple sweep over states, 1-based, e.g. `3,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub state_order: Vec<usize>,
    /// Write the policy as TOML for `mbf --policy`.
    #[arg(long)]
    pub policy_out: Option<PathBuf>,
}

fn action_grid(args: &OptimizeArgs) -> CliResult<Vec<f64>> {
    match (args.grid_lo, args.grid_hi) {
        (None, None) => Ok(default_grid(args.budget, args.grid_points)?),
        (lo, hi) => {
            let lo = lo.unwrap_or(1e-3 * args.budget);
            let hi = hi.unwrap_or(10.0 * args.budget);
            let mut g = geometric_grid(lo, hi, args.grid_points)?;
            if lo < args.budget && args.budget < hi && !g.contains(&args.budget) {
                g.push(args.budget);
                g.sort_by(f64::total_cmp);
            }
            Ok(g)
        }
    }
}

pub fn optimize(chain: &Ctmc, kind: EstimatorKind, est_args: &EstimatorArgs, args: &OptimizeArgs) -> CliResult<Table> {
    let est = resolve_estimator(chain, kind, est_args)?;
    let grid = action_grid(args)?;
    let n = chain.n_states();
    let state_order = if args.state_order.is_empty() {
        None
    } else {
        if args.state_order.iter().any(|&s| s == 0 || s > n) {
            return Err(CliError::input("--state-order uses 1-based state indices"));
        }
        Some(args.state_order.iter().map(|s| s - 1).collect())
    };
    let options = ConstrainedOptions {
        bisect_tol: args.bisect_tol,
        route: est_args.route.into(),
        state_order,
    };
    let s = solve_constrained(chain, &est, args.budget, &grid, &options)?;
    if let Some(path) = &args.policy_out {
        std::fs::write(path, policy_to_toml(&s.policy))
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    }
    let mut t = Table::new(
        "optimize-v1",
        &["state", "rate", "rate_a", "p", "freshness", "pi_tilde"],
    );
    t.meta("estimator", est.name());
    t.meta("kind", s.policy.kind().as_str());
    t.meta("budget", args.budget);
    t.meta("mbf", s.report.mbf);
    t.meta("omega", s.report.avg_sampling_rate);
    t.meta("gamma", s.gamma);
    t.meta("epsilon", s.epsilon.map_or(serde_json::Value::Null, |e| json!(e)));
    t.meta("grid", json!([grid[0], grid[grid.len() - 1], grid.len()]));
    t.meta(
        "trace",
        s.trace
            .iter()
            .map(|p| json!({"gamma": p.gamma, "omega": p.omega, "mbf": p.mbf}))
            .collect::<Vec<_>>(),
    );
    for i in 0..n {
        let (rate_a, p) = match s.policy.randomized() {
            Some(r) if r.state == i => (Cell::Num(r.rate_a), Cell::Num(r.p)),
            _ => (Cell::Empty, Cell::Empty),
        };
        t.push(vec![
            (i + 1).into(),
            s.policy.rates()[i].into(),
            rate_a,
            p,
            s.report.per_state_freshness[i].into(),
            s.report.pi_tilde[i].into(),
        ]);
    }
    Ok(t)
}

#[derive(Debug, Clone, Args)]
pub struct BudgetSweepArgs {
    /// Budgets Ω; a 10-point geometric grid over [0.05, 3] by default.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_enum, default_values_t = [EstimatorKind::Martingale, EstimatorKind::TauMap, EstimatorKind::PMap])]
    pub estimators: Vec<EstimatorKind>,
    #[arg(long, default_value_t = 64)]
    pub grid_points: usize,
    #[arg(long, default_value_t = DEFAULT_BISECT_TOL)]
    pub bisect_tol: f64,
}

pub fn sweep_budget_cmd(chain: &Ctmc, est_args: &EstimatorArgs, args: &BudgetSweepArgs) -> CliResult<Table> {
    let budgets = if args.budgets.is_empty() {
        geometric_grid(0.05, 3.0, 10)?
    } else {
        args.budgets.clone()
    };
    let estimators = args
        .estimators
        .iter()
        .map(|&k| resolve_estimator(chain, k, est_args))
        .collect::<CliResult<Vec<_>>>()?;
    let mut spec = BudgetSweepSpec::new(budgets, estimators);
    spec.grid_points = args.grid_points;
    spec.bisect_tol = args.bisect_tol;
    spec.route = est_args.route.into();
    let rows = sweep_budget(chain, &spec)?;
    let mut t = Table::new(
        "sweep-budget-v1",
        &["budget", "estimator", "policy", "kind", "mbf", "omega", "gamma", "rates"],
    );
    for r in rows {
        t.push(vec![
            r.budget.into(),
            r.estimator.into(),
            r.policy.as_str().into(),
            r.kind.as_str().into(),
            r.mbf.into(),
            r.omega.into(),
            r.gamma.into(),
            Cell::List(r.rates.clone()),
        ]);
    }
    Ok(t)
}

#[derive(Debug, Clone, Args)]
pub struct StageSweepArgs {
    /// Common sampling rates μ.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 1.0, 3.0])]
    pub mu: Vec<f64>,
    /// Transition points considered per state.
    #[arg(long, default_value_t = 9)]
    pub points: usize,
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(long, value_enum, default_value_t = RouteArg::Auto)]
    pub route: RouteArg,
}

pub fn sweep_stages_cmd(chain: &Ctmc, args: &StageSweepArgs) -> CliResult<Table> {
    let spec = StageSweepSpec {
        mus: args.mu.clone(),
        max_points: args.points,
        scan: args.scan.scan(),
        route: args.route.into(),
    };
    let sweep = sweep_stages(chain, &spec)?;
    let mut t = Table::new("sweep-stages-v1", &["mu", "method", "step", "points", "mbf"]);
    t.meta(
        "map_points",
        sweep
            .map_points
            .iter()
            .map(|p| json!({"state": p.state + 1, "times": p.transition_times, "truncated": p.truncated}))
            .collect::<Vec<_>>(),
    );
    for r in sweep.rows {
        t.push(vec![
            r.mu.into(),
            r.method.as_str().into(),
            r.step.into(),
            r.points.into(),
            r.mbf.into(),
        ]);
    }
    Ok(t)
}
