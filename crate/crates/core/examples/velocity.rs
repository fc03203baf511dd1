//! Estimate the velocity and the annealed covariance from regeneration increments.
use std::sync::Arc;

use rwre::stats::{collect_increments, estimate_annealed_covariance, estimate_v0};
use rwre::{EnvironmentModel, Family, SeedSchedule};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let seeds = SeedSchedule::new(1);
    let v = estimate_v0(&model, &seeds, 10_000, 100, 4)?;
    println!("v0 = {:?} +- {:?}", v.v0, v.std_error);
    println!("regeneration ratio = {:?} +- {:?}", v.regen_ratio, v.regen_ratio_std_error);

    let incs = collect_increments(&model, &seeds, 10_000, 100, 4)?;
    let cov = estimate_annealed_covariance(&incs, &v.v0)?;
    println!("Sigma = {:?} from {} increments", cov.matrix, cov.increments);
    Ok(())
}
