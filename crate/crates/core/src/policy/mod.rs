//! Constrained sampling-rate optimization.

mod constrained;
mod sampling;
mod smdp;

pub use constrained::{
    solve_constrained, ConstrainedOptions, ConstrainedSolution, TracePoint, DEFAULT_BISECT_TOL,
};
pub use sampling::{PolicyKind, Randomized, SamplingPolicy};
pub use smdp::{
    brute_force, build_smdp, build_smdp_via, default_grid, evaluate_policy, geometric_grid, policy_iteration,
    sampled_transition_row, PolicyIterationResult, PolicyValue, SmdpModel, IMPROVEMENT_TOL, MAX_POLICY_ITERATIONS,
    TRANSITION_SUM_TOL,
};
