//! Distance of standardized quenched endpoints from the standard Gaussian in one fixed environment.
use std::sync::Arc;

use rwre::stats::{collect_increments, estimate_annealed_covariance, estimate_v0, quenched_clt_distance, CltCentering};
use rwre::{EnvironmentHandle, EnvironmentModel, Family, SeedSchedule};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let seeds = SeedSchedule::new(31);
    let v = estimate_v0(&model, &seeds, 10_000, 100, 4)?;
    let cov = estimate_annealed_covariance(&collect_increments(&model, &seeds, 10_000, 100, 4)?, &v.v0)?;

    let handle = EnvironmentHandle::new(model, seeds.env(1000));
    let walks: Vec<u64> = (0..1000).map(|m| seeds.walk(1000, m)).collect();
    let reports = quenched_clt_distance(&handle, &[64, 256, 1024], &walks, &cov.matrix, &v.v0, 1500, 4, CltCentering::Velocity)?;
    for r in reports {
        println!("n = {:>5}: max KS {:.4}, energy distance {:.4}", r.n, r.max_ks, r.energy_distance);
    }
    Ok(())
}
