use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::anchored_walk;
use crate::env::{EnvironmentHandle, EnvironmentModel};
use crate::error::{config, insufficient, Error, Result};
use crate::numeric;
use crate::paths::{evaluate_functional, scaled_process, Functional};
use crate::prf::{SeedSchedule, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuenchedEstimate {
    pub mean: f64,
    pub inner_variance: f64,
    pub used: usize,
    pub censored: usize,
}

/// `E^ω_0[F(W^(n))]` from walks anchored at their own first regeneration.
///
/// Walks without a confirmed regeneration early enough to fit `n` steps
/// inside the horizon are censored and counted.
pub fn quenched_expectation(
    handle: &EnvironmentHandle,
    f: &Functional,
    n: usize,
    v0: &[f64],
    walk_seeds: &[u64],
    horizon: usize,
    margin: i64,
) -> Result<QuenchedEstimate> {
    if walk_seeds.len() < 2 {
        return Err(config("a quenched expectation needs at least 2 walks"));
    }
    f.validate(handle.dimension())?;
    let mut values = Vec::with_capacity(walk_seeds.len());
    for &seed in walk_seeds {
        let (t, tau1) = anchored_walk(handle, horizon, margin, seed)?;
        match tau1 {
            Some(a) if a + n <= horizon => values.push(evaluate_functional(f, &scaled_process(&t, n, v0, a)?)),
            _ => {}
        }
    }
    if values.is_empty() {
        return Err(insufficient("every walk was censored"));
    }
    Ok(QuenchedEstimate {
        mean: numeric::mean(&values),
        inner_variance: numeric::variance(&values),
        used: values.len(),
        censored: walk_seeds.len() - values.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceDecayConfig {
    pub n_grid: Vec<usize>,
    /// Environments `K`.
    pub outer: usize,
    /// Walks per environment `M`.
    pub inner: usize,
    pub horizon: usize,
    pub margin: i64,
    pub v0: Vec<f64>,
    pub functional: Functional,
}

impl VarianceDecayConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.outer < 2 || self.inner < 2 {
            return Err(config("variance decay needs K >= 2 environments and M >= 2 walks"));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(config("n_grid must be non-empty, positive and strictly increasing"));
        }
        if self.v0.len() != dim {
            return Err(config("v0 dimension does not match the model"));
        }
        if *self.n_grid.last().unwrap() >= self.horizon {
            return Err(config("horizon must exceed the largest n"));
        }
        self.functional.validate(dim)
    }
}

/// Per-environment sample of `F(W^(n))` summarized at one `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvSummary {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NestedRow {
    pub n: usize,
    /// Environments with at least two usable walks.
    pub outer: usize,
    pub inner: usize,
    pub raw_variance: f64,
    pub mean_inner_variance: f64,
    pub corrected_variance: f64,
    pub standard_error: f64,
    pub negative: bool,
    pub censored_walks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NestedMCResult {
    pub rows: Vec<NestedRow>,
    /// `per_env[i][e]`: summary of environment `e` at `rows[i].n`; `None` if censored.
    #[serde(skip)]
    pub per_env: Vec<Vec<Option<EnvSummary>>>,
}

/// `(raw, mean_inner, corrected)` for a set of environment summaries.
///
/// With `M_e` usable walks in environment `e` and nominal inner count `M`,
/// `mean_inner = mean_e(var_e M / M_e)` so that `raw − corrected = mean_inner / M`.
fn decompose(envs: &[EnvSummary], inner: usize) -> (f64, f64, f64) {
    let means: Vec<f64> = envs.iter().map(|e| e.mean).collect();
    let raw = numeric::variance(&means);
    let mean_inner = envs.iter().map(|e| e.variance * inner as f64 / e.count as f64).sum::<f64>() / envs.len() as f64;
    (raw, mean_inner, raw - mean_inner / inner as f64)
}

fn jackknife_se(envs: &[EnvSummary], inner: usize) -> f64 {
    let k = envs.len();
    if k < 3 {
        return f64::NAN;
    }
    let mut loo = Vec::with_capacity(k);
    let mut buf = Vec::with_capacity(k - 1);
    for i in 0..k {
        buf.clear();
        buf.extend(envs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, e)| *e));
        loo.push(decompose(&buf, inner).2);
    }
    let m = numeric::mean(&loo);
    ((k - 1) as f64 / k as f64 * loo.iter().map(|v| (v - m) * (v - m)).sum::<f64>()).sqrt()
}

impl NestedMCResult {
    /// Assembles rows from per-environment summaries (`per_env[i]` belongs to `n_grid[i]`).
    pub fn from_summaries(n_grid: &[usize], inner: usize, per_env: Vec<Vec<Option<EnvSummary>>>, censored: &[usize]) -> Self {
        let rows = n_grid
            .iter()
            .zip(&per_env)
            .enumerate()
            .map(|(i, (&n, envs))| {
                let usable: Vec<EnvSummary> = envs.iter().flatten().copied().collect();
                let (raw, mean_inner, corrected) = if usable.len() >= 2 {
                    decompose(&usable, inner)
                } else {
                    (f64::NAN, f64::NAN, f64::NAN)
                };
                NestedRow {
                    n,
                    outer: usable.len(),
                    inner,
                    raw_variance: raw,
                    mean_inner_variance: mean_inner,
                    corrected_variance: corrected,
                    standard_error: jackknife_se(&usable, inner),
                    negative: corrected < 0.0,
                    censored_walks: censored.get(i).copied().unwrap_or(0),
                }
            })
            .collect();
        NestedMCResult { rows, per_env }
    }

    /// Writes `n,K,M,raw_var,mean_inner_var,corrected_var,stderr`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, digest: &str) -> Result<()> {
        writeln!(w, "# manifest_digest={digest}")?;
        writeln!(w, "n,K,M,raw_var,mean_inner_var,corrected_var,stderr")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.n, r.outer, r.inner, r.raw_variance, r.mean_inner_variance, r.corrected_variance, r.standard_error
            )?;
        }
        Ok(())
    }
}

/// Nested Monte Carlo estimate of `Var(E^ω_0[F(W^(n))])` over an `n` grid.
///
/// Each walk is simulated once and evaluated at every `n`, so the grid
/// points share their randomness.
pub fn variance_decay(
    model: &Arc<EnvironmentModel>,
    cfg: &VarianceDecayConfig,
    schedule: &SeedSchedule,
) -> Result<NestedMCResult> {
    cfg.validate(model.dimension())?;
    let g = cfg.n_grid.len();
    // per environment: values[i] = F at n_grid[i] for each usable walk
    let per_env: Vec<Vec<Vec<f64>>> = (0..cfg.outer as u64)
        .into_par_iter()
        .map(|k| -> Result<Vec<Vec<f64>>> {
            let h = EnvironmentHandle::new(model.clone(), schedule.env(k));
            let mut vals = vec![Vec::with_capacity(cfg.inner); g];
            for m in 0..cfg.inner as u64 {
                let (t, tau1) = anchored_walk(&h, cfg.horizon, cfg.margin, schedule.walk(k, m))?;
                let Some(a) = tau1 else { continue };
                for (i, &n) in cfg.n_grid.iter().enumerate() {
                    if a + n <= cfg.horizon {
                        vals[i].push(evaluate_functional(&cfg.functional, &scaled_process(&t, n, &cfg.v0, a)?));
                    }
                }
            }
            Ok(vals)
        })
        .collect::<Result<_>>()?;

    let mut summaries = vec![Vec::with_capacity(cfg.outer); g];
    let mut censored = vec![0usize; g];
    for env in &per_env {
        for i in 0..g {
            let v = &env[i];
            censored[i] += cfg.inner - v.len();
            summaries[i].push((v.len() >= 2).then(|| EnvSummary {
                mean: numeric::mean(v),
                variance: numeric::variance(v),
                count: v.len(),
            }));
        }
    }
    let res = NestedMCResult::from_summaries(&cfg.n_grid, cfg.inner, summaries, &censored);
    if res.rows.iter().all(|r| r.outer < 2) {
        return Err(insufficient("no grid point has two usable environments"));
    }
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub r_squared: f64,
    /// Grid points with positive corrected variance used by the fit.
    pub grid: Vec<usize>,
    pub bootstrap_resamples: usize,
}

fn log_fit(ns: &[usize], vs: &[f64]) -> Option<numeric::LineFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .zip(vs)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(&n, &v)| ((n as f64).ln(), v.ln()))
        .unzip();
    if x.len() < 3 {
        return None;
    }
    numeric::ols(&x, &y)
}

/// Log-log fit of the corrected variances with a 90% environment-bootstrap interval.
pub fn fit_decay_exponent(result: &NestedMCResult, rng: &mut StreamRng) -> Result<DecayFit> {
    fit_decay_exponent_with(result, 0.90, super::velocity::BOOTSTRAP_RESAMPLES, rng)
}

pub fn fit_decay_exponent_with(result: &NestedMCResult, level: f64, resamples: usize, rng: &mut StreamRng) -> Result<DecayFit> {
    let ns: Vec<usize> = result.rows.iter().map(|r| r.n).collect();
    let vs: Vec<f64> = result.rows.iter().map(|r| r.corrected_variance).collect();
    let fit = log_fit(&ns, &vs).ok_or_else(|| Error::Fit("fewer than 3 positive corrected variances".into()))?;
    let grid: Vec<usize> = ns.iter().zip(&vs).filter(|(_, v)| **v > 0.0).map(|(n, _)| *n).collect();
    let inner = result.rows.first().map(|r| r.inner).unwrap_or(2);
    let k = result.per_env.first().map(|e| e.len()).unwrap_or(0);
    let (lo, hi) = if k >= 2 {
        let mut buf = Vec::with_capacity(k);
        numeric::bootstrap_ci(k, level, resamples, rng, |idx| {
            let boot: Vec<f64> = result
                .per_env
                .iter()
                .map(|envs| {
                    buf.clear();
                    buf.extend(idx.iter().filter_map(|&i| envs[i]));
                    if buf.len() < 2 {
                        f64::NAN
                    } else {
                        decompose(&buf, inner).2
                    }
                })
                .collect();
            log_fit(&ns, &boot).map(|f| f.slope).unwrap_or(f64::NAN)
        })
    } else {
        (fit.slope, fit.slope)
    };
    Ok(DecayFit {
        exponent: fit.slope,
        intercept: fit.intercept,
        ci_low: lo,
        ci_high: hi,
        level,
        r_squared: fit.r_squared,
        grid,
        bootstrap_resamples: resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(ns: &[usize], vs: &[f64]) -> NestedMCResult {
        NestedMCResult {
            rows: ns
                .iter()
                .zip(vs)
                .map(|(&n, &v)| NestedRow {
                    n,
                    outer: 10,
                    inner: 2,
                    raw_variance: v,
                    mean_inner_variance: 0.0,
                    corrected_variance: v,
                    standard_error: 0.0,
                    negative: v < 0.0,
                    censored_walks: 0,
                })
                .collect(),
            per_env: Vec::new(),
        }
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let ns: Vec<usize> = (7..=13).map(|e| 1usize << e).collect();
        let mut rng = StreamRng::new(1);
        let vs: Vec<f64> = ns.iter().map(|&n| (n as f64).powf(-0.5)).collect();
        let f = fit_decay_exponent(&rows(&ns, &vs), &mut rng).unwrap();
        assert!((f.exponent + 0.5).abs() < 1e-9);
        let flat = fit_decay_exponent(&rows(&ns, &[0.3; 7]), &mut rng).unwrap();
        assert!(flat.exponent.abs() < 1e-12);
    }

    #[test]
    fn too_few_positive_points_is_a_fit_error() {
        let mut rng = StreamRng::new(1);
        let r = rows(&[1, 2, 4, 8], &[1.0, -0.1, 0.5, 0.0]);
        assert!(matches!(fit_decay_exponent(&r, &mut rng), Err(Error::Fit(_))));
    }

    #[test]
    fn decomposition_identity_is_exact() {
        let envs = [
            EnvSummary { mean: 0.1, variance: 0.4, count: 8 },
            EnvSummary { mean: -0.3, variance: 0.2, count: 6 },
            EnvSummary { mean: 0.5, variance: 0.9, count: 8 },
        ];
        let (raw, inner, corrected) = decompose(&envs, 8);
        assert!((raw - corrected - inner / 8.0).abs() < 1e-15);
    }
}
