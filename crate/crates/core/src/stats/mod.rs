//! Estimators built on simulated walks.
//!
//! Every estimator takes a [`SeedSchedule`](crate::prf::SeedSchedule) and
//! reduces per-replica results in replica order, so the output does not
//! depend on the number of worker threads.

mod clt;
mod first_slab;
mod intersections;
mod nested;
mod velocity;

pub use clt::{energy_distance_to_gaussian, quenched_clt_distance, standardizer, CltCentering, CltReport, Standardizer};
pub use first_slab::{conditioned_first_slab_moment, FirstSlabEstimate, FirstSlabOutcome};
pub use intersections::{
    decorrelation_curve, fit_growth_exponent, intersection_replica, intersection_stats, DecorrelationCurve,
    DecorrelationPoint, GrowthFit, IntersectionConfig, IntersectionReplica, IntersectionStats,
};
pub use nested::{
    fit_decay_exponent, fit_decay_exponent_with, quenched_expectation, variance_decay, DecayFit, EnvSummary,
    NestedMCResult, NestedRow, QuenchedEstimate, VarianceDecayConfig,
};
pub use velocity::{
    collect_increments, estimate_annealed_covariance, estimate_v0, CovarianceEstimate, VelocityEstimate,
};

use crate::env::{EnvironmentHandle, LatticePoint};
use crate::error::Result;
use crate::regen::scan_levels;
use crate::walk::{simulate_walk, Trajectory};

/// A walk from the origin together with its first confirmed regeneration time.
pub(crate) fn anchored_walk(
    handle: &EnvironmentHandle,
    horizon: usize,
    margin: i64,
    walk_seed: u64,
) -> Result<(Trajectory, Option<usize>)> {
    let origin = LatticePoint::origin(handle.dimension());
    let traj = simulate_walk(handle, &origin, horizon, walk_seed)?;
    let tau1 = scan_levels(&traj.levels(handle.model().axis()), margin).confirmed.first().copied();
    Ok((traj, tau1))
}
