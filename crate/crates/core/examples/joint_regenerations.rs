//! Joint regeneration levels of walk pairs and the Markov slab test.
use std::sync::Arc;

use rwre::regen::{detect_joint_regenerations, markov_slab_test};
use rwre::{simulate_pair, ConfirmationPolicy, EnvironmentHandle, EnvironmentModel, Family, LatticePoint, SeedSchedule};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let seeds = SeedSchedule::new(9);
    let policy = ConfirmationPolicy::default();
    let origin = LatticePoint::origin(2);

    let pairs = (0..300)
        .map(|k| {
            let h = EnvironmentHandle::new(model.clone(), seeds.env(k));
            simulate_pair(&h, &origin, &origin, 2000, seeds.walk(k, 0), seeds.walk(k, 1))
        })
        .collect::<rwre::Result<Vec<_>>>()?;

    let joint = detect_joint_regenerations(&pairs[0], 0, &policy)?;
    println!("pair 0: {} joint levels; first five:", joint.len());
    for r in joint.iter().take(5) {
        println!("  L = {:>3}  mu1 = {:>4}  mu2 = {:>4}", r.level, r.mu1, r.mu2);
    }

    let report = markov_slab_test(&pairs, 0, &policy, 2)?;
    println!(
        "pre/post duration correlation {:.4} (threshold {:.4}, independent: {})",
        report.correlation, report.threshold, report.independent
    );
    Ok(())
}
