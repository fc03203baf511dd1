//! Diffusively rescaled paths, bounded Lipschitz functionals and path concatenation.
use std::sync::Arc;

use rwre::paths::{concatenate, evaluate_functional, scaled_process, Functional};
use rwre::{simulate_walk, EnvironmentHandle, EnvironmentModel, Family, LatticePoint};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let handle = EnvironmentHandle::new(model, 3);
    let walk = simulate_walk(&handle, &LatticePoint::origin(2), 2000, 8)?;

    let w = scaled_process(&walk, 1024, &[0.3, 0.0], 10)?;
    println!("W(1) = {:?}, sup norm {:.3}", w.endpoint(), w.sup_norm());
    println!("W(0.5) = {:?}", w.eval(0.5));
    for f in [
        Functional::EndpointCoord { coord: 1, clip: 1.0 },
        Functional::SupNormClipped,
        Functional::SmoothedHalfspace { a: vec![0.0, 1.0], b: 2.0 },
    ] {
        println!("{:>20}: {:+.4}", f.name(), evaluate_functional(&f, &w));
    }

    let p = |v: &[[i64; 2]]| v.iter().map(|x| LatticePoint::new(x.to_vec())).collect::<Vec<_>>();
    let joined = concatenate(&p(&[[0, 0], [1, 0], [1, 1]]), &p(&[[0, 0], [0, -1], [1, -1]]));
    println!("concatenation: {}", joined.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "));
    Ok(())
}
