use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::anchored_walk;
use crate::env::EnvironmentHandle;
use crate::error::{config, insufficient, Result};
use crate::numeric::{self, KsResult};

/// Relative eigenvalue floor below which the covariance is treated as singular.
const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CltCentering {
    /// Subtract `v0 n` only.
    #[default]
    Velocity,
    /// Additionally subtract the sample mean of the endpoints.
    Empirical,
}

/// `Σ^{-1/2}` (or its pseudo-inverse on the non-degenerate eigenspace).
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub pseudo_inverse: bool,
}

pub fn standardizer(sigma: &[Vec<f64>]) -> Result<Standardizer> {
    let d = sigma.len();
    if d == 0 || sigma.iter().any(|r| r.len() != d) {
        return Err(config("covariance must be a non-empty square matrix"));
    }
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (sigma[i][j] + sigma[j][i]));
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut inv_sqrt = DVector::zeros(d);
    let mut rank = 0;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if top > 0.0 && l > EIGEN_FLOOR * top {
            inv_sqrt[i] = 1.0 / l.sqrt();
            rank += 1;
        }
    }
    let q = &eig.eigenvectors;
    Ok(Standardizer {
        matrix: q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose(),
        rank,
        pseudo_inverse: rank < d,
    })
}

/// `E‖x − Z‖` for `Z ~ N(0, I_d)`: the mean of a noncentral chi variable.
fn mean_distance_to_gaussian(x2: f64, d: usize) -> f64 {
    let k = d as f64;
    let c = std::f64::consts::SQRT_2 * (ln_gamma((k + 1.0) / 2.0) - ln_gamma(k / 2.0)).exp();
    let z = x2 / 2.0;
    if z > 300.0 {
        // large-argument expansion of the noncentral chi mean
        return (x2 + k - 1.0).sqrt();
    }
    // c · e^{-z} · 1F1((k+1)/2; k/2; z), summed in log space
    let (a, b) = ((k + 1.0) / 2.0, k / 2.0);
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 0..2000 {
        let jf = j as f64;
        term *= (a + jf) / (b + jf) * z / (jf + 1.0);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    c * (sum.ln() - z).exp()
}

/// Energy distance between the empirical law of `xs` and `N(0, I_d)`.
pub fn energy_distance_to_gaussian(xs: &[Vec<f64>]) -> f64 {
    let m = xs.len();
    if m == 0 {
        return f64::NAN;
    }
    let d = xs[0].len();
    let k = d as f64;
    let e_zz = 2.0 * (ln_gamma((k + 1.0) / 2.0) - ln_gamma(k / 2.0)).exp();
    let e_xz: f64 = xs.iter().map(|x| mean_distance_to_gaussian(x.iter().map(|v| v * v).sum(), d)).sum::<f64>() / m as f64;
    let mut e_xx = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            e_xx += xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    e_xx = 2.0 * e_xx / (m * m) as f64;
    2.0 * e_xz - e_xx - e_zz
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub walks: usize,
    pub censored: usize,
    pub centering: CltCentering,
    pub degenerate: bool,
    pub pseudo_inverse: bool,
    pub ks: Vec<KsResult>,
    pub max_ks: f64,
    pub energy_distance: f64,
}

impl CltReport {
    /// Distances of already standardized samples.
    pub fn from_standardized(n: usize, zs: &[Vec<f64>], censored: usize, centering: CltCentering, pseudo: bool) -> Self {
        let d = zs.first().map(|z| z.len()).unwrap_or(0);
        let degenerate = (0..d).all(|i| numeric::variance(&zs.iter().map(|z| z[i]).collect::<Vec<_>>()) == 0.0);
        if degenerate {
            return CltReport {
                n,
                walks: zs.len(),
                censored,
                centering,
                degenerate: true,
                pseudo_inverse: pseudo,
                ks: Vec::new(),
                max_ks: f64::NAN,
                energy_distance: f64::NAN,
            };
        }
        let ks: Vec<KsResult> = (0..d)
            .map(|i| numeric::ks_one_sample(&zs.iter().map(|z| z[i]).collect::<Vec<_>>(), numeric::standard_normal_cdf))
            .collect();
        CltReport {
            n,
            walks: zs.len(),
            censored,
            centering,
            degenerate: false,
            pseudo_inverse: pseudo,
            max_ks: ks.iter().map(|k| k.statistic).fold(0.0, f64::max),
            ks,
            energy_distance: energy_distance_to_gaussian(zs),
        }
    }
}

/// Distance of the standardized endpoints `Σ^{-1/2} B̄^(n)_1` from `N(0, I)` in a fixed environment.
///
/// Every walk is evaluated at each `n` in `ns`, one report per `n`.
pub fn quenched_clt_distance(
    handle: &EnvironmentHandle,
    ns: &[usize],
    walk_seeds: &[u64],
    sigma: &[Vec<f64>],
    v0: &[f64],
    horizon: usize,
    margin: i64,
    centering: CltCentering,
) -> Result<Vec<CltReport>> {
    let d = handle.dimension();
    if v0.len() != d || sigma.len() != d {
        return Err(config("velocity and covariance must match the model dimension"));
    }
    if ns.iter().any(|&n| n == 0 || n >= horizon) {
        return Err(config("every n must be positive and below the horizon"));
    }
    let st = standardizer(sigma)?;
    let per_walk: Vec<Vec<Option<Vec<f64>>>> = walk_seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<Option<Vec<f64>>>> {
            let (t, tau1) = anchored_walk(handle, horizon, margin, seed)?;
            Ok(ns
                .iter()
                .map(|&n| match tau1 {
                    Some(a) if a + n <= horizon => {
                        let root = (n as f64).sqrt();
                        let (p, q) = (t.position(a + n), t.position(a));
                        Some((0..d).map(|c| ((p[c] - q[c]) as f64 - v0[c] * n as f64) / root).collect())
                    }
                    _ => None,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut ends: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(walk_seeds.len()); ns.len()];
    let mut censored = vec![0usize; ns.len()];
    for w in per_walk {
        for (i, e) in w.into_iter().enumerate() {
            match e {
                Some(e) => ends[i].push(e),
                None => censored[i] += 1,
            }
        }
    }
    ns.iter()
        .zip(ends)
        .zip(censored)
        .map(|((&n, mut e), c)| {
            if e.len() < 2 {
                return Err(insufficient(format!("fewer than two uncensored walks at n = {n}")));
            }
            if centering == CltCentering::Empirical {
                let mean: Vec<f64> = (0..d).map(|i| numeric::mean(&e.iter().map(|x| x[i]).collect::<Vec<_>>())).collect();
                for x in e.iter_mut() {
                    for i in 0..d {
                        x[i] -= mean[i];
                    }
                }
            }
            let zs: Vec<Vec<f64>> = e
                .iter()
                .map(|x| (&st.matrix * DVector::from_column_slice(x)).iter().copied().collect())
                .collect();
            Ok(CltReport::from_standardized(n, &zs, c, centering, st.pseudo_inverse))
        })
        .collect()
}
