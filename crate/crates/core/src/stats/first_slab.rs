use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{EnvironmentHandle, EnvironmentModel, LatticePoint};
use crate::error::{config, Result};
use crate::numeric;
use crate::prf::SeedSchedule;
use crate::walk::Walker;

/// Result of one rejection-sampling attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FirstSlabOutcome {
    /// The walk reached the level before returning to its start level; carries `T_ℓ`.
    Accepted(usize),
    Rejected,
    /// Neither happened within the step cap.
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FirstSlabEstimate {
    pub level: i64,
    pub accepted: usize,
    pub attempts: usize,
    pub undecided: usize,
    pub acceptance_rate: f64,
    pub mean: f64,
    /// `E_0[T_ℓ² | D ≥ T_ℓ]`.
    pub second_moment: f64,
    pub std_error: f64,
    pub censored: bool,
}

/// One walk in a fresh environment, stopped at `T_ℓ` or at the first return
/// to a level `<= 0`.
fn attempt(handle: &EnvironmentHandle, level: i64, walk_seed: u64, cap: usize) -> FirstSlabOutcome {
    let d = handle.dimension();
    let axis = handle.model().axis();
    let mut w = Walker::new(handle, LatticePoint::origin(d).coords(), walk_seed).expect("origin has model dimension");
    for t in 1..=cap {
        let l = w.step()[axis];
        if l >= level {
            return FirstSlabOutcome::Accepted(t);
        }
        if l <= 0 {
            return FirstSlabOutcome::Rejected;
        }
    }
    FirstSlabOutcome::Undecided
}

/// Estimates `E_0[T_ℓ² | D^{v*} ≥ T_ℓ]` under the annealed law for each level.
///
/// Attempts run in batches until `target` samples are accepted, `max_attempts`
/// is exhausted, or the acceptance rate falls below `min_rate`; estimates with
/// fewer than `target` acceptances are censored.
pub fn conditioned_first_slab_moment(
    model: &Arc<EnvironmentModel>,
    levels: &[i64],
    target: usize,
    max_attempts: usize,
    min_rate: f64,
    step_cap: usize,
    schedule: &SeedSchedule,
) -> Result<Vec<FirstSlabEstimate>> {
    if levels.iter().any(|&l| l < 1) {
        return Err(config("first-slab levels must be >= 1"));
    }
    if target == 0 || max_attempts == 0 {
        return Err(config("first-slab sampling needs positive target and attempt budget"));
    }
    levels
        .iter()
        .map(|&level| {
            let sched = schedule.child(&format!("first-slab-{level}"));
            let mut samples = Vec::with_capacity(target);
            let mut attempts = 0usize;
            let mut undecided = 0usize;
            let batch = target.max(64);
            while samples.len() < target && attempts < max_attempts {
                let end = (attempts + batch).min(max_attempts);
                let out: Vec<FirstSlabOutcome> = (attempts as u64..end as u64)
                    .into_par_iter()
                    .map(|k| attempt(&EnvironmentHandle::new(model.clone(), sched.env(k)), level, sched.walk(k, 0), step_cap))
                    .collect();
                for o in out {
                    attempts += 1;
                    match o {
                        FirstSlabOutcome::Accepted(t) if samples.len() < target => samples.push(t as f64),
                        FirstSlabOutcome::Undecided => undecided += 1,
                        _ => {}
                    }
                    if samples.len() >= target {
                        break;
                    }
                }
                if attempts >= 1000 && (samples.len() as f64) < min_rate * attempts as f64 {
                    break;
                }
            }
            let sq: Vec<f64> = samples.iter().map(|t| t * t).collect();
            Ok(FirstSlabEstimate {
                level,
                accepted: samples.len(),
                attempts,
                undecided,
                acceptance_rate: samples.len() as f64 / attempts.max(1) as f64,
                mean: numeric::mean(&samples),
                second_moment: numeric::mean(&sq),
                std_error: numeric::std_error(&sq),
                censored: samples.len() < target,
            })
        })
        .collect()
}
