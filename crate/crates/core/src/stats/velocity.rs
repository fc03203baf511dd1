use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{EnvironmentHandle, EnvironmentModel, LatticePoint};
use crate::error::{config, insufficient, Result};
use crate::numeric;
use crate::prf::SeedSchedule;
use crate::regen::{increments_from_times, scan_levels, Increment};
use crate::walk::simulate_walk;

/// Number of bootstrap resamples behind every reported interval.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VelocityEstimate {
    pub v0: Vec<f64>,
    pub std_error: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub level: f64,
    pub replicas: usize,
    pub horizon: usize,
    /// `sum ΔX / sum τ̃` over regeneration increments with `k >= 1`.
    pub regen_ratio: Option<Vec<f64>>,
    pub regen_ratio_std_error: Option<Vec<f64>>,
}

struct ReplicaVelocity {
    endpoint: Vec<f64>,
    displacement: Vec<f64>,
    duration: f64,
}

/// Estimates `lim X_n / n` from one walk per environment.
pub fn estimate_v0(
    model: &Arc<EnvironmentModel>,
    schedule: &SeedSchedule,
    horizon: usize,
    replicas: usize,
    margin: i64,
) -> Result<VelocityEstimate> {
    if replicas < 2 {
        return Err(insufficient("velocity estimate needs at least 2 replicas"));
    }
    if horizon == 0 {
        return Err(config("velocity estimate needs a positive horizon"));
    }
    let d = model.dimension();
    let axis = model.axis();
    let per: Vec<ReplicaVelocity> = (0..replicas as u64)
        .into_par_iter()
        .map(|k| -> Result<ReplicaVelocity> {
            let h = EnvironmentHandle::new(model.clone(), schedule.env(k));
            let t = simulate_walk(&h, &LatticePoint::origin(d), horizon, schedule.walk(k, 0))?;
            let times = scan_levels(&t.levels(axis), margin).confirmed;
            let mut disp = vec![0.0; d];
            let mut dur = 0.0;
            if times.len() >= 2 {
                let (a, b) = (times[0], *times.last().unwrap());
                for (i, v) in disp.iter_mut().enumerate() {
                    *v = (t.position(b)[i] - t.position(a)[i]) as f64;
                }
                dur = (b - a) as f64;
            }
            Ok(ReplicaVelocity {
                endpoint: t.position(horizon).iter().map(|&x| x as f64 / horizon as f64).collect(),
                displacement: disp,
                duration: dur,
            })
        })
        .collect::<Result<_>>()?;

    let mut rng = schedule.stream("v0-bootstrap");
    let level = 0.95;
    let mut est = VelocityEstimate {
        v0: Vec::with_capacity(d),
        std_error: Vec::with_capacity(d),
        ci_low: Vec::with_capacity(d),
        ci_high: Vec::with_capacity(d),
        level,
        replicas,
        horizon,
        regen_ratio: None,
        regen_ratio_std_error: None,
    };
    for i in 0..d {
        let col: Vec<f64> = per.iter().map(|r| r.endpoint[i]).collect();
        est.v0.push(numeric::mean(&col));
        est.std_error.push(numeric::std_error(&col));
        let (lo, hi) = numeric::bootstrap_mean_ci(&col, level, BOOTSTRAP_RESAMPLES, &mut rng);
        est.ci_low.push(lo);
        est.ci_high.push(hi);
    }

    // ratio of means with the replica as the sampling unit (delta method)
    let dur: Vec<f64> = per.iter().map(|r| r.duration).collect();
    let mean_dur = numeric::mean(&dur);
    if mean_dur > 0.0 {
        let k = per.len() as f64;
        let mut ratio = Vec::with_capacity(d);
        let mut se = Vec::with_capacity(d);
        for i in 0..d {
            let num: f64 = per.iter().map(|r| r.displacement[i]).sum();
            let r = num / dur.iter().sum::<f64>();
            let ss: f64 = per.iter().map(|p| (p.displacement[i] - r * p.duration).powi(2)).sum();
            ratio.push(r);
            se.push((ss / (k * (k - 1.0))).sqrt() / mean_dur);
        }
        est.regen_ratio = Some(ratio);
        est.regen_ratio_std_error = Some(se);
    }
    Ok(est)
}

/// Regeneration increments (`k >= 1`) of one walk per environment, in replica order.
pub fn collect_increments(
    model: &Arc<EnvironmentModel>,
    schedule: &SeedSchedule,
    horizon: usize,
    replicas: usize,
    margin: i64,
) -> Result<Vec<Increment>> {
    let d = model.dimension();
    let axis = model.axis();
    let per: Vec<Vec<Increment>> = (0..replicas as u64)
        .into_par_iter()
        .map(|k| -> Result<Vec<Increment>> {
            let h = EnvironmentHandle::new(model.clone(), schedule.env(k));
            let t = simulate_walk(&h, &LatticePoint::origin(d), horizon, schedule.walk(k, 0))?;
            let times = scan_levels(&t.levels(axis), margin).confirmed;
            Ok(increments_from_times(&times, &t))
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    pub matrix: Vec<Vec<f64>>,
    pub increments: usize,
    pub mean_duration: f64,
    pub min_eigenvalue: f64,
}

/// `Cov(ΔX − v0 τ̃) / E[τ̃]` over regeneration increments.
pub fn estimate_annealed_covariance(incs: &[Increment], v0: &[f64]) -> Result<CovarianceEstimate> {
    if incs.len() < 100 {
        return Err(insufficient(format!(
            "covariance needs at least 100 increments, found {}",
            incs.len()
        )));
    }
    let d = v0.len();
    if incs[0].displacement.len() != d {
        return Err(config("velocity dimension does not match the increments"));
    }
    let m = incs.len();
    let y: Vec<Vec<f64>> = incs
        .iter()
        .map(|inc| (0..d).map(|i| inc.displacement[i] as f64 - v0[i] * inc.duration as f64).collect())
        .collect();
    let mean_y: Vec<f64> = (0..d).map(|i| y.iter().map(|r| r[i]).sum::<f64>() / m as f64).collect();
    let mean_duration = incs.iter().map(|i| i.duration as f64).sum::<f64>() / m as f64;
    let mut c = DMatrix::<f64>::zeros(d, d);
    for r in &y {
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += (r[i] - mean_y[i]) * (r[j] - mean_y[j]);
            }
        }
    }
    c /= (m - 1) as f64 * mean_duration;
    let c = (&c + c.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(c.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CovarianceEstimate {
        matrix: (0..d).map(|i| (0..d).map(|j| c[(i, j)]).collect()).collect(),
        increments: m,
        mean_duration,
        min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Family;

    fn straight() -> Arc<EnvironmentModel> {
        Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::Homogeneous { probs: vec![1.0, 0.0, 0.0, 0.0] }).unwrap())
    }

    #[test]
    fn deterministic_walk_has_unit_velocity_and_no_spread() {
        let s = SeedSchedule::new(1);
        let v = estimate_v0(&straight(), &s, 50, 4, 2).unwrap();
        assert_eq!(v.v0, vec![1.0, 0.0]);
        assert_eq!(v.regen_ratio, Some(vec![1.0, 0.0]));
        let incs = collect_increments(&straight(), &s, 60, 3, 2).unwrap();
        let c = estimate_annealed_covariance(&incs, &[1.0, 0.0]).unwrap();
        assert!(c.matrix.iter().flatten().all(|&x| x == 0.0));
        assert!(estimate_v0(&straight(), &s, 50, 1, 2).is_err());
    }
}
