//! Excise the regeneration slab around a visited site and compare the glued path with the original.
use std::sync::Arc;

use rwre::paths::{glue_at_site, surgery_bound_check};
use rwre::regen::confirmed_times;
use rwre::{simulate_walk, EnvironmentHandle, EnvironmentModel, Family, LatticePoint};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let handle = EnvironmentHandle::new(model.clone(), 17);
    let walk = simulate_walk(&handle, &LatticePoint::origin(2), 600, 4)?;
    let confirmed = confirmed_times(&walk, 0, 4);
    let n = 64;

    for u in [0usize, 10, 25, 40] {
        let z = walk.point(u);
        let (_, meta) = glue_at_site(&walk, &confirmed, &z, n, 0)?;
        let r = surgery_bound_check(&walk, &confirmed, &z, n, 0, model.r0())?;
        println!(
            "z = {z}: tau- = {:?}, tau+ = {:?}, tau* = {:?}, slab {:?}, lhs {:.4} rhs {:.4} holds {} (2 rhs: {})",
            meta.tau_minus, meta.tau_plus, meta.tau_bullet, r.j_star, r.lhs, r.rhs, r.holds, r.holds_corrected
        );
    }
    Ok(())
}
