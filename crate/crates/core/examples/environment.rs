//! Sample site kernels from a Dirichlet environment and check the model assumptions.
use std::sync::Arc;

use rwre::env::validate_model;
use rwre::{EnvironmentHandle, EnvironmentModel, Family, LatticePoint};

fn main() -> rwre::Result<()> {
    let model = EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?;
    let handle = EnvironmentHandle::new(Arc::new(model.clone()), 42);
    for x in 0..3 {
        let site = LatticePoint::new(vec![x, 0]);
        let k = handle.kernel_at(&site)?;
        println!("kernel at {site}: {:?} (drift {:?})", k.probs, k.drift());
    }
    let diag = validate_model(&model, 10_000, 7)?;
    println!("{}", serde_json::to_string_pretty(&diag)?);
    diag.check_assumptions(model.axis())
}
