//! Discrete-event simulation of the source chain under query-based sampling.
//!
//! Fresh time is accumulated exactly: each inter-sample interval is cut at
//! source jumps and at the plan's stage boundaries, so the only error is
//! statistical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::ctmc::Ctmc;
use crate::error::{Error, Result};
use crate::estimators::{StagePlan, StageSequence};
use crate::policy::SamplingPolicy;

pub const DEFAULT_BATCHES: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct SimConfig<'a> {
    chain: &'a Ctmc,
    plan: &'a StagePlan,
    policy: &'a SamplingPolicy,
    alt_plan: Option<&'a StagePlan>,
    seed: u64,
    n_samples: u64,
    warmup_samples: u64,
}

impl<'a> SimConfig<'a> {
    /// Warmup defaults to 1% of the epochs.
    pub fn new(chain: &'a Ctmc, plan: &'a StagePlan, policy: &'a SamplingPolicy, seed: u64, n_samples: u64) -> Result<Self> {
        let n = chain.n_states();
        if plan.n_states() != n || policy.n_states() != n {
            return Err(Error::InvalidInput(format!(
                "chain has {n} states, plan {} and policy {}",
                plan.n_states(),
                policy.n_states()
            )));
        }
        if n_samples == 0 {
            return Err(Error::InvalidInput("need at least one sampling epoch".into()));
        }
        Ok(SimConfig {
            chain,
            plan,
            policy,
            alt_plan: None,
            seed,
            n_samples,
            warmup_samples: n_samples / 100,
        })
    }

    pub fn with_warmup(mut self, warmup_samples: u64) -> Result<Self> {
        if warmup_samples >= self.n_samples {
            return Err(Error::InvalidInput(format!(
                "warmup {warmup_samples} must be below the {} epochs",
                self.n_samples
            )));
        }
        self.warmup_samples = warmup_samples;
        Ok(self)
    }

    /// Plan used at the randomized state when a semi-simple policy draws
    /// `rate_a`; only that row is read.
    pub fn with_alt_plan(mut self, alt_plan: &'a StagePlan) -> Result<Self> {
        if alt_plan.n_states() != self.chain.n_states() {
            return Err(Error::InvalidInput("alternate plan has the wrong size".into()));
        }
        self.alt_plan = Some(alt_plan);
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn warmup_samples(&self) -> u64 {
        self.warmup_samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub seed: u64,
    /// Post-warmup epochs.
    pub epochs: u64,
    pub empirical_mbf: f64,
    pub std_error: f64,
    pub empirical_omega: f64,
    pub omega_std_error: f64,
    /// Fraction of time each state is the last received sample.
    pub empirical_pi_tilde: Vec<f64>,
    /// Fraction of time the source spends in each state.
    pub source_occupancy: Vec<f64>,
    pub occupancy_std_error: Vec<f64>,
    pub fresh_time: f64,
    pub elapsed_sim_time: f64,
}

/// Raw sample path, recorded only on request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathEvent {
    /// A query at `time` returned `state`; the estimator uses `rate` and,
    /// when `alt` is set, the alternate plan row.
    Sample { time: f64, state: usize, rate: f64, alt: bool },
    Jump { time: f64, to: usize },
}

#[derive(Default, Clone)]
struct Batch {
    fresh: f64,
    time: f64,
    count: f64,
    occupancy: Vec<f64>,
}

struct Jumps {
    exit: Vec<f64>,
    // cumulative destination weights per state
    cumulative: Vec<Vec<(usize, f64)>>,
}

impl Jumps {
    fn new(chain: &Ctmc) -> Self {
        let n = chain.n_states();
        let mut cumulative = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = 0.0;
            let mut row = Vec::new();
            for j in (0..n).filter(|&j| j != i) {
                let q = chain.rate(i, j);
                if q > 0.0 {
                    acc += q;
                    row.push((j, acc));
                }
            }
            cumulative.push(row);
        }
        Jumps {
            exit: (0..n).map(|i| chain.exit_rate(i)).collect(),
            cumulative,
        }
    }

    fn holding<R: Rng>(&self, rng: &mut R, i: usize) -> f64 {
        if self.exit[i] > 0.0 {
            rng.sample::<f64, _>(Exp1) / self.exit[i]
        } else {
            f64::INFINITY
        }
    }

    fn next<R: Rng>(&self, rng: &mut R, i: usize) -> usize {
        let row = &self.cumulative[i];
        let u = rng.random::<f64>() * row.last().map_or(0.0, |x| x.1);
        row.iter().find(|&&(_, c)| u < c).unwrap_or(row.last().unwrap()).0
    }
}

fn draw_initial<R: Rng>(rng: &mut R, pi: &[f64]) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    pi.len() - 1
}

/// Fresh time in the source segment `[a, b)` (ages since the last sample)
/// spent in `state`. `stage` is a cursor into the row's stages that only
/// moves forward within one inter-sample interval.
fn fresh_in_segment(row: &StageSequence, stage: &mut usize, a: f64, b: f64, state: usize) -> f64 {
    let bounds = row.boundaries();
    let values = row.values();
    while bounds[*stage + 1] <= a {
        *stage += 1;
    }
    let mut fresh = 0.0;
    let mut lo = a;
    let mut k = *stage;
    loop {
        let hi = bounds[k + 1].min(b);
        if values[k] == state {
            fresh += hi - lo;
        }
        if hi >= b {
            break;
        }
        lo = hi;
        k += 1;
    }
    fresh
}

/// Runs one simulation.
pub fn simulate(config: &SimConfig<'_>) -> SimResult {
    run(config, None)
}

/// Runs one simulation and records its sample path.
pub fn simulate_traced(config: &SimConfig<'_>) -> (SimResult, Vec<PathEvent>) {
    let mut trace = Vec::new();
    let result = run(config, Some(&mut trace));
    (result, trace)
}

fn run(config: &SimConfig<'_>, mut trace: Option<&mut Vec<PathEvent>>) -> SimResult {
    let chain = config.chain;
    let n = chain.n_states();
    let jumps = Jumps::new(chain);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let measured = config.n_samples - config.warmup_samples;
    let n_batches = DEFAULT_BATCHES.min(measured as usize).max(1);
    let mut batches = vec![
        Batch {
            occupancy: vec![0.0; n],
            ..Default::default()
        };
        n_batches
    ];
    let mut anchor_time = vec![0.0; n];

    let mut source = draw_initial(&mut rng, chain.stationary());
    let mut clock = 0.0_f64;
    let mut next_jump = jumps.holding(&mut rng, source);

    for epoch in 0..config.n_samples {
        let anchor = source;
        let (rate, alt) = match config.policy.randomized() {
            Some(x) if x.state == anchor => {
                if rng.random::<f64>() < x.p {
                    (x.rate_a, true)
                } else {
                    (x.rate_b, false)
                }
            }
            _ => (config.policy.rates()[anchor], false),
        };
        let row = match (alt, config.alt_plan) {
            (true, Some(p)) => p.row(anchor),
            _ => config.plan.row(anchor),
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(PathEvent::Sample { time: clock, state: anchor, rate, alt });
        }
        let length: f64 = rng.sample::<f64, _>(Exp1) / rate;
        let end = clock + length;
        let counted = epoch >= config.warmup_samples;
        let batch = if counted {
            Some(((epoch - config.warmup_samples) as usize * n_batches) / measured as usize)
        } else {
            None
        };

        let mut stage = 0;
        let mut fresh = 0.0;
        let mut seg_start = clock;
        while next_jump < end {
            fresh += fresh_in_segment(row, &mut stage, seg_start - clock, next_jump - clock, source);
            if let Some(b) = batch {
                batches[b].occupancy[source] += next_jump - seg_start;
            }
            source = jumps.next(&mut rng, source);
            if let Some(t) = trace.as_deref_mut() {
                t.push(PathEvent::Jump { time: next_jump, to: source });
            }
            seg_start = next_jump;
            next_jump += jumps.holding(&mut rng, source);
        }
        fresh += fresh_in_segment(row, &mut stage, seg_start - clock, length, source);
        if let Some(b) = batch {
            batches[b].occupancy[source] += end - seg_start;
            batches[b].fresh += fresh;
            batches[b].time += length;
            batches[b].count += 1.0;
            anchor_time[anchor] += length;
        }
        clock = end;
    }

    summarize(config.seed, measured, &batches, &anchor_time)
}

fn ratio_stats(batches: &[Batch], num: impl Fn(&Batch) -> f64) -> (f64, f64) {
    let total_time: f64 = batches.iter().map(|b| b.time).sum();
    let mean = batches.iter().map(&num).sum::<f64>() / total_time;
    let k = batches.len();
    if k < 2 {
        return (mean, f64::INFINITY);
    }
    let ratios: Vec<f64> = batches.iter().map(|b| num(b) / b.time).collect();
    let avg = ratios.iter().sum::<f64>() / k as f64;
    let var = ratios.iter().map(|r| (r - avg) * (r - avg)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

fn summarize(seed: u64, epochs: u64, batches: &[Batch], anchor_time: &[f64]) -> SimResult {
    let n = anchor_time.len();
    let total_time: f64 = batches.iter().map(|b| b.time).sum();
    let fresh_time: f64 = batches.iter().map(|b| b.fresh).sum();
    let (mbf, se) = ratio_stats(batches, |b| b.fresh);
    let (omega, omega_se) = ratio_stats(batches, |b| b.count);
    let mut occupancy = Vec::with_capacity(n);
    let mut occupancy_se = Vec::with_capacity(n);
    for i in 0..n {
        let (m, s) = ratio_stats(batches, |b| b.occupancy[i]);
        occupancy.push(m);
        occupancy_se.push(s);
    }
    SimResult {
        seed,
        epochs,
        empirical_mbf: mbf.clamp(0.0, 1.0),
        std_error: se,
        empirical_omega: omega,
        omega_std_error: omega_se,
        empirical_pi_tilde: anchor_time.iter().map(|t| t / total_time).collect(),
        source_occupancy: occupancy,
        occupancy_std_error: occupancy_se,
        fresh_time,
        elapsed_sim_time: total_time,
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `r`; depends only on `(seed, r)`.
pub fn replicate_seed(seed: u64, r: u64) -> u64 {
    splitmix64(seed.wrapping_add((r + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Independent replications, returned in replication order.
pub fn replicate(config: &SimConfig<'_>, n_reps: usize) -> Result<Vec<SimResult>> {
    if n_reps == 0 {
        return Err(Error::InvalidInput("need at least one replication".into()));
    }
    Ok((0..n_reps as u64)
        .into_par_iter()
        .map(|r| simulate(&config.with_seed(replicate_seed(config.seed, r))))
        .collect())
}

/// Pools replications by total time; standard errors combine with time
/// weights. Order of `results` does not matter beyond rounding.
pub fn pool(results: &[SimResult]) -> Result<SimResult> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to pool".into()))?;
    let n = first.source_occupancy.len();
    let total: f64 = results.iter().map(|r| r.elapsed_sim_time).sum();
    let weighted = |f: &dyn Fn(&SimResult) -> f64| results.iter().map(|r| r.elapsed_sim_time / total * f(r)).sum::<f64>();
    let combined = |f: &dyn Fn(&SimResult) -> f64| {
        results
            .iter()
            .map(|r| (r.elapsed_sim_time / total * f(r)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let fresh_time: f64 = results.iter().map(|r| r.fresh_time).sum();
    let epochs: u64 = results.iter().map(|r| r.epochs).sum();
    Ok(SimResult {
        seed: first.seed,
        epochs,
        empirical_mbf: (fresh_time / total).clamp(0.0, 1.0),
        std_error: combined(&|r| r.std_error),
        empirical_omega: epochs as f64 / total,
        omega_std_error: combined(&|r| r.omega_std_error),
        empirical_pi_tilde: (0..n).map(|i| weighted(&|r| r.empirical_pi_tilde[i])).collect(),
        source_occupancy: (0..n).map(|i| weighted(&|r| r.source_occupancy[i])).collect(),
        occupancy_std_error: (0..n).map(|i| combined(&|r| r.occupancy_std_error[i])).collect(),
        fresh_time,
        elapsed_sim_time: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{martingale_plan, tau_map_plan};

    fn sym() -> Ctmc {
        Ctmc::from_rates(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    #[test]
    fn symmetric_martingale() {
        let c = sym();
        let plan = martingale_plan(&c);
        let pol = SamplingPolicy::uniform(2, 1.0).unwrap();
        let r = simulate(&SimConfig::new(&c, &plan, &pol, 7, 1_000_000).unwrap());
        assert!((r.empirical_mbf - 2.0 / 3.0).abs() < 0.002, "{}", r.empirical_mbf);
        assert!((r.empirical_pi_tilde.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r.empirical_omega - 1.0).abs() < 4.0 * r.omega_std_error);
        assert_eq!(r.epochs, 990_000);
    }

    #[test]
    fn rare_sampling_limit() {
        let c = sym();
        let plan = martingale_plan(&c);
        let pol = SamplingPolicy::uniform(2, 1e-6).unwrap();
        let r = simulate(&SimConfig::new(&c, &plan, &pol, 3, 20).unwrap());
        assert!((r.empirical_mbf - 0.5).abs() < 0.01, "{}", r.empirical_mbf);
    }

    #[test]
    fn deterministic_for_seed() {
        let c = sym();
        let plan = martingale_plan(&c);
        let pol = SamplingPolicy::uniform(2, 1.0).unwrap();
        let cfg = SimConfig::new(&c, &plan, &pol, 11, 10_000).unwrap();
        assert_eq!(simulate(&cfg), simulate(&cfg));
        assert_ne!(simulate(&cfg), simulate(&cfg.with_seed(12)));
    }

    #[test]
    fn config_validation() {
        let c = sym();
        let plan = martingale_plan(&c);
        let pol = SamplingPolicy::uniform(3, 1.0).unwrap();
        assert!(SimConfig::new(&c, &plan, &pol, 0, 10).is_err());
        let pol = SamplingPolicy::uniform(2, 1.0).unwrap();
        assert!(SimConfig::new(&c, &plan, &pol, 0, 0).is_err());
        let cfg = SimConfig::new(&c, &plan, &pol, 0, 10).unwrap();
        assert!(cfg.with_warmup(10).is_err());
        assert!(cfg.with_warmup(9).is_ok());
    }

    #[test]
    fn segment_slicing() {
        let row = StageSequence::new(vec![0.0, 1.0, 2.0, f64::INFINITY], vec![0, 1, 0]).unwrap();
        let mut k = 0;
        assert_eq!(fresh_in_segment(&row, &mut k, 0.5, 2.5, 0), 1.0);
        let mut k = 0;
        assert_eq!(fresh_in_segment(&row, &mut k, 0.5, 2.5, 1), 1.0);
        assert_eq!(fresh_in_segment(&row, &mut k, 2.5, 4.0, 0), 1.5);
    }

    #[test]
    fn seeds_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|r| replicate_seed(5, r)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn pooled_error_shrinks() {
        let c = Ctmc::from_rates(2, &[(0, 1, 2.0), (1, 0, 1.0)]).unwrap();
        let plan = tau_map_plan(&c, 0.3).unwrap();
        let pol = SamplingPolicy::simple(vec![0.7, 1.4]).unwrap();
        let cfg = SimConfig::new(&c, &plan, &pol, 1, 100_000).unwrap();
        let reps = replicate(&cfg, 4).unwrap();
        let pooled = pool(&reps).unwrap();
        let ratio = pooled.std_error / reps[0].std_error;
        assert!(ratio > 0.3 && ratio < 0.75, "{ratio}");
        let mut rev = reps.clone();
        rev.reverse();
        assert!((pool(&rev).unwrap().empirical_mbf - pooled.empirical_mbf).abs() < 1e-12);
    }
}
