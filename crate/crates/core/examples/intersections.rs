//! Intersection counts of walk pairs across joint regeneration slabs, and the decorrelation curve.
use std::sync::Arc;

use rwre::stats::{decorrelation_curve, fit_growth_exponent, intersection_stats, IntersectionConfig};
use rwre::{EnvironmentModel, Family, SeedSchedule};

fn main() -> rwre::Result<()> {
    let model = Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] })?);
    let seeds = SeedSchedule::new(21);
    let mut all = Vec::new();
    for n in [64, 256, 1024] {
        let cfg = IntersectionConfig { n, eps: 0.1, g_exponent: None, replicas: 50, horizon: 12 * n, max_horizon: 200 * n, margin: 4 };
        let s = intersection_stats(&model, &cfg, &seeds)?;
        println!(
            "n = {n:>5}: |JRL<=| {:.2}  |JRLC| {:.2}  decorrelation {:.3}  O_n {:.2}  censored {}",
            s.mean_jrl_le, s.mean_jrlc, s.mean_decorr_sum, s.freq_o_n, s.censored
        );
        all.push(s);
    }
    let fit = fit_growth_exponent(&all, 0.9, &mut seeds.stream("growth"))?;
    println!("growth exponent {:.3} [{:.3}, {:.3}]", fit.exponent, fit.ci_low, fit.ci_high);
    let curve = decorrelation_curve(&all)?;
    for p in &curve.points {
        println!("n = {:>5}: sqrt(n) x decorrelation {:.2}, n x g_hat {:.2}", p.n, p.sqrt_n_scaled, p.n_g_hat);
    }
    Ok(())
}
