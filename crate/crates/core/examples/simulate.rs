//! Simulate one walk and an independent pair in a shared environment.
use std::sync::Arc;

use rwre::{simulate_pair, simulate_walk, EnvironmentHandle, EnvironmentModel, Family, LatticePoint, SeedSchedule};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let seeds = SeedSchedule::new(2024);
    let handle = EnvironmentHandle::new(model, seeds.env(0));
    let origin = LatticePoint::origin(2);

    let walk = simulate_walk(&handle, &origin, 1000, seeds.walk(0, 0))?;
    println!("X_1000 = {:?}", walk.position(1000));

    let pair = simulate_pair(&handle, &origin, &LatticePoint::new(vec![0, 3]), 1000, seeds.walk(0, 1), seeds.walk(0, 2))?;
    println!("pair endpoints {:?} and {:?}", pair.first.position(1000), pair.second.position(1000));

    // the first few steps in the trajectory CSV format
    let mut buf = Vec::new();
    simulate_walk(&handle, &origin, 5, seeds.walk(0, 0))?.write_csv(&mut buf, "example")?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}
