//! Age-of-Information analysis and optimization for slotted random-access
//! protocols described as two-matrix Markov processes.
//!
//! A protocol is a finite-state machine one user runs per time slot: in the
//! dedicated transmission state the user transmits, and the next state is
//! drawn from matrix `M0` when the channel was quiet (`α = 0`) or `M1` when
//! another user transmitted (`α = 1`). The crate provides:
//!
//! - [`protocol`]: the protocol description, validation, JSON I/O, and
//!   builders for the age-threshold ALOHA and pure ALOHA families;
//! - [`meanfield`]: the mean-field fixed point for `N` users, the delivery
//!   rate `m`, the temporal variance `v²` of the delivery process, and the
//!   second-order approximation of the expected Age of Information;
//! - [`optimizer`]: grid search for the AoI-minimizing age-threshold
//!   parameters, published baseline parameter rules, and ε-sweeps;
//! - [`simulator`]: a seeded slot-level Monte Carlo simulator with
//!   empirical AoI, rate, and variance estimators;
//! - [`error`]: the crate-wide error type.
//!
//! The commonly used items are re-exported at the crate root.

pub mod error;
pub mod meanfield;
pub mod optimizer;
pub mod protocol;
pub mod simulator;

pub use error::{Error, Result, DEGENERATE_RATE_MIN};
pub use meanfield::{
    analyze, aoi_second_order, delivery_rate, fixed_point_residual, solve_fixed_point,
    stationary_distribution, temporal_variance, AnalysisSettings, MeanFieldSolution,
    TemporalVariance,
};
pub use optimizer::{
    optimize_age_threshold, optimize_age_threshold_with_progress, optimize_grid,
    reference_params, sweep_epsilon, EpsilonPoint, GridSearchResult, GridSpec, ProgressFn,
    ReferenceKind, SkippedPoint, SurfacePoint,
};
pub use protocol::{
    build_age_threshold_aloha, build_pure_aloha, read_spec, validate_spec, write_spec,
    AgeThresholdParams, ProtocolSpec, ValidationReport, ROW_SUM_TOL,
};
pub use simulator::{
    compare_policies, empirical_aoi, estimate_temporal_variance, simulate, ComparisonCell,
    RunStats, SimConfig, SimResult,
};
