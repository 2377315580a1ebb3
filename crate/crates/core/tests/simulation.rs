use mbf_core::estimators::{martingale_plan, tau_map_plan};
use mbf_core::freshness::{avg_sampling_rate, joint_stationary, mbf_general, mbf_martingale};
use mbf_core::policy::SamplingPolicy;
use mbf_core::sim::{pool, replicate, simulate, simulate_traced, PathEvent, SimConfig};
use mbf_core::Ctmc;

fn bdc4() -> Ctmc {
    Ctmc::from_rates(
        4,
        &[(0, 1, 1.0), (1, 2, 0.8), (2, 3, 0.5), (1, 0, 0.4), (2, 1, 0.6), (3, 2, 1.0)],
    )
    .unwrap()
}

fn ring3() -> Ctmc {
    Ctmc::from_rates(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap()
}

#[test]
fn source_occupancy_matches_stationary_law() {
    for chain in [bdc4(), ring3()] {
        let plan = martingale_plan(&chain);
        let policy = SamplingPolicy::uniform(chain.n_states(), 0.7).unwrap();
        let r = simulate(&SimConfig::new(&chain, &plan, &policy, 11, 200_000).unwrap());
        for (i, p) in chain.stationary().iter().enumerate() {
            let d = (r.source_occupancy[i] - p).abs();
            assert!(d <= 3.0 * r.occupancy_std_error[i] + 1e-3, "state {i}: {} vs {p}", r.source_occupancy[i]);
        }
    }
}

#[test]
fn sampling_rate_and_anchor_law_match() {
    let chain = bdc4();
    let mu = [0.3, 1.5, 0.8, 2.5];
    let plan = martingale_plan(&chain);
    let policy = SamplingPolicy::simple(mu.to_vec()).unwrap();
    let r = simulate(&SimConfig::new(&chain, &plan, &policy, 5, 300_000).unwrap());
    let omega = avg_sampling_rate(&chain, &mu).unwrap();
    assert!((r.empirical_omega - omega).abs() <= 3.0 * r.omega_std_error, "{} vs {omega}", r.empirical_omega);
    let js = joint_stationary(&chain, &mu).unwrap();
    let pi_tilde = js.estimator_marginal();
    for (a, b) in r.empirical_pi_tilde.iter().zip(pi_tilde) {
        assert!((a - b).abs() < 5e-3, "{a} vs {b}");
    }
}

#[test]
fn replicated_runs_agree_with_theory() {
    let chain = ring3();
    let mu = vec![1.0, 0.5, 2.0];
    let plan = tau_map_plan(&chain, 0.8).unwrap();
    let policy = SamplingPolicy::simple(mu.clone()).unwrap();
    let config = SimConfig::new(&chain, &plan, &policy, 3, 100_000).unwrap();
    let pooled = pool(&replicate(&config, 4).unwrap()).unwrap();
    let exact = mbf_general(&chain, &plan, &mu).unwrap().mbf;
    assert!((pooled.empirical_mbf - exact).abs() <= (3.0 * pooled.std_error).max(0.005));
}

#[test]
fn fresh_time_is_recoverable_from_the_path() {
    let chain = bdc4();
    let mu = [0.5, 1.0, 2.0, 0.25];
    let plan = martingale_plan(&chain);
    let policy = SamplingPolicy::simple(mu.to_vec()).unwrap();
    let config = SimConfig::new(&chain, &plan, &policy, 99, 20_000).unwrap().with_warmup(0).unwrap();
    let (r, path) = simulate_traced(&config);

    // fresh exactly while the source sits in the last sampled state
    let mut fresh = 0.0;
    let mut anchor = None;
    let mut source = None;
    let mut last = 0.0;
    for ev in &path {
        let t = match *ev {
            PathEvent::Sample { time, .. } | PathEvent::Jump { time, .. } => time,
        };
        if anchor.is_some() && anchor == source {
            fresh += t - last;
        }
        last = t;
        match *ev {
            PathEvent::Sample { state, .. } => {
                anchor = Some(state);
                source = Some(state);
            }
            PathEvent::Jump { to, .. } => source = Some(to),
        }
    }
    if anchor == source {
        fresh += r.elapsed_sim_time - last;
    }
    assert!((fresh - r.fresh_time).abs() <= 1e-9 * r.elapsed_sim_time);
    let samples = path.iter().filter(|e| matches!(e, PathEvent::Sample { .. })).count();
    assert_eq!(samples as u64, r.epochs);

    let exact = mbf_martingale(&chain, &mu).unwrap().mbf;
    assert!((r.empirical_mbf - exact).abs() <= (3.0 * r.std_error).max(0.01));
}
