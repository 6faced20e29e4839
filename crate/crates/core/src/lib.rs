//! Solvers for discounted constrained Markov decision processes.
//!
//! The crate evaluates policies exactly, solves the constrained problem as a
//! linear program over occupancy measures, and runs primal-dual natural
//! policy gradient methods in exact, function-approximation and sample-based
//! form.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod bench;
pub mod error;
pub mod exact;
pub mod fa;
pub mod io;
pub mod linalg;
pub mod model;
pub mod occupancy;
pub mod policy;
pub mod sampling;
pub mod simplex;
pub mod trace;

pub use error::{Error, Result};
pub use model::{
    evaluate_policy, lagrangian, state_action_visitation, value_iteration_scalarized, visitation, Channel, Cmdp,
    ScalarizedOptimum, TabularPolicy, ValueBundle, Violation, VisitationDist,
};
pub use occupancy::{occupancy_to_policy, policy_to_occupancy, solve_lp, LpOutcome, LpSolution, OccupancyMeasure};
pub use policy::{
    direct_gradient, fisher_matrix, natural_gradient, policy_gradient, project_simplex, DirectParams, FeatureMap,
    LogLinearParams, SmoothPolicy, SoftmaxParams,
};
pub use exact::{
    conservative_wrap, dual_descent, npgpd_step, pgpd_step, primal_feasibility_step, run_solver, Algorithm,
    ConservativeProblem, PdState, Primal, SolverConfig, SolverRun,
};
pub use trace::{IterateLog, IterateRecord};
pub use fa::{
    compatible_least_squares, fa_diagnostics, npgpd_fa_step, run_fa, CompatibleRegression, FaConfig, FaDiagnostics,
    NuStarKind, TargetKind,
};
pub use sampling::{
    projected_sgd, rollout_geometric, sample_npgpd, sgd_compatible, unbiased_estimate, Anchor, EstimateKind,
    RngStream, RolloutCap, RolloutEstimate, SampleConfig, SampleMode, SgdConfig,
};
pub use bench::{
    figure1_cmdp, figure1_segment, figure1_values, random_cmdp, theorem_bounds, ExperimentConfig, ExperimentSummary,
    TheoremBounds,
};
