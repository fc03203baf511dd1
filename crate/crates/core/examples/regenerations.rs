//! Detect regeneration times of a walk and summarize the increments between them.
use std::sync::Arc;

use rwre::regen::{detect_regenerations, regeneration_increment_stats};
use rwre::{simulate_walk, ConfirmationPolicy, EnvironmentHandle, EnvironmentModel, Family, LatticePoint, TailHandling};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let handle = EnvironmentHandle::new(model, 11);
    let walk = simulate_walk(&handle, &LatticePoint::origin(2), 20_000, 5)?;

    let policy = ConfirmationPolicy::new(4, TailHandling::Censor)?;
    let records = detect_regenerations(&walk, 0, &policy)?;
    let confirmed = records.iter().filter(|r| r.is_confirmed()).count();
    println!("{confirmed} confirmed, {} censored", records.len() - confirmed);
    for r in records.iter().take(5) {
        println!("  tau = {:>4}  level = {:>3}  at {}", r.time, r.level, r.position);
    }

    let stats = regeneration_increment_stats(&records, &walk)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}
