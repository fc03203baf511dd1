//! Second moment of the first level-crossing time conditioned on not backtracking first.
use std::sync::Arc;

use rwre::stats::conditioned_first_slab_moment;
use rwre::{EnvironmentModel, Family, SeedSchedule};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let est = conditioned_first_slab_moment(&model, &[1, 2, 4, 8, 16], 400, 50_000, 0.01, 100_000, &SeedSchedule::new(3))?;
    for e in est {
        println!(
            "level {:>2}: E[T^2 | no return] = {:>8.2} +- {:.2}  (acceptance {:.3}, {} samples)",
            e.level, e.second_moment, e.std_error, e.acceptance_rate, e.accepted
        );
    }
    Ok(())
}
