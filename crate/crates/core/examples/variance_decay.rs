//! Nested Monte Carlo estimate of the quenched variance and its decay exponent.
use std::sync::Arc;

use rwre::paths::Functional;
use rwre::stats::{fit_decay_exponent, variance_decay, VarianceDecayConfig};
use rwre::{EnvironmentModel, Family, SeedSchedule};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let seeds = SeedSchedule::new(5);
    let cfg = VarianceDecayConfig {
        n_grid: vec![64, 128, 256, 512, 1024],
        outer: 60,
        inner: 32,
        horizon: 4096,
        margin: 4,
        v0: vec![0.3, 0.0],
        functional: Functional::EndpointCoord { coord: 1, clip: 1.0 },
    };
    let res = variance_decay(&model, &cfg, &seeds)?;
    res.write_csv(std::io::stdout(), "example")?;
    match fit_decay_exponent(&res, &mut seeds.stream("fit")) {
        Ok(fit) => println!("exponent {:.3}, 90% CI [{:.3}, {:.3}]", fit.exponent, fit.ci_low, fit.ci_high),
        Err(e) => println!("fit not available: {e}"),
    }
    Ok(())
}
