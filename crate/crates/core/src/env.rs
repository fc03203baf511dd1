//! Environment families and the site kernel oracle.
//!
//! An environment is never stored: the kernel at a site is recomputed from
//! `(env_seed, site)` through [`crate::prf::site_key`]. Two walks sharing an
//! [`EnvironmentHandle`] therefore see the same environment, and a worker can
//! replay any replica from its seed alone.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::prf::{self, StreamRng};

/// Tolerance on `|sum(probs) - 1|` for every emitted kernel.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// A point of `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        LatticePoint(coords)
    }

    pub fn origin(d: usize) -> Self {
        LatticePoint(vec![0; d])
    }

    /// `scale * e_axis` in dimension `d`.
    pub fn axis(d: usize, axis: usize, scale: i64) -> Self {
        let mut v = vec![0; d];
        v[axis] = scale;
        LatticePoint(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }

    pub fn sup_norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

impl From<&[i64]> for LatticePoint {
    fn from(c: &[i64]) -> Self {
        LatticePoint(c.to_vec())
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The ordered support of the jump kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpSet {
    dim: usize,
    offsets: Vec<LatticePoint>,
}

impl JumpSet {
    pub fn new(offsets: Vec<LatticePoint>) -> Result<Self> {
        let first = offsets
            .first()
            .ok_or_else(|| Error::Model("jump set is empty".into()))?;
        let dim = first.dim();
        for (i, o) in offsets.iter().enumerate() {
            if o.dim() != dim {
                return Err(Error::Model(format!(
                    "jump offset {o} has dimension {} but expected {dim}",
                    o.dim()
                )));
            }
            if offsets[..i].contains(o) {
                return Err(Error::Model(format!("jump offset {o} appears twice")));
            }
        }
        Ok(JumpSet { dim, offsets })
    }

    /// `{+e_1, -e_1, +e_2, -e_2, ...}` in that order.
    pub fn nearest_neighbor(d: usize) -> Self {
        let offsets = (0..d)
            .flat_map(|i| [LatticePoint::axis(d, i, 1), LatticePoint::axis(d, i, -1)])
            .collect();
        JumpSet { dim: d, offsets }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[LatticePoint] {
        &self.offsets
    }

    pub fn offset(&self, i: usize) -> &[i64] {
        &self.offsets[i].0
    }

    pub fn index_of(&self, step: &[i64]) -> Option<usize> {
        self.offsets.iter().position(|o| o.0 == step)
    }

    pub fn max_norm(&self) -> f64 {
        self.offsets.iter().map(LatticePoint::norm).fold(0.0, f64::max)
    }

    /// True when the offsets selected by `mask` span at least two dimensions.
    pub fn non_collinear(&self, mask: &[bool]) -> bool {
        let chosen: Vec<&[i64]> = self
            .offsets
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(o, _)| o.coords())
            .collect();
        for (a_idx, a) in chosen.iter().enumerate() {
            for b in &chosen[a_idx + 1..] {
                for i in 0..self.dim {
                    for j in i + 1..self.dim {
                        if a[i] * b[j] != a[j] * b[i] {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// One-step jump law at a site, aligned with a [`JumpSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct SiteKernel {
    pub jumps: Arc<JumpSet>,
    pub probs: Vec<f64>,
}

impl SiteKernel {
    /// Mean displacement `sum_z p(z) z`.
    pub fn drift(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.jumps.dim()];
        for (o, p) in self.jumps.offsets().iter().zip(&self.probs) {
            for (mi, &c) in m.iter_mut().zip(o.coords()) {
                *mi += p * c as f64;
            }
        }
        m
    }

    pub fn normalization_error(&self) -> f64 {
        (self.probs.iter().sum::<f64>() - 1.0).abs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    /// Multiplicative noise uniform on `[-1, 1]`.
    Uniform,
    /// Multiplicative noise uniform on `{-1, 1}`.
    Rademacher,
}

/// The i.i.d. law of the site kernels. Probability vectors are aligned with the
/// model's jump set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Homogeneous {
        probs: Vec<f64>,
    },
    DirichletNeighbors {
        alpha: Vec<f64>,
    },
    EpsilonPerturbedDrift {
        base: Vec<f64>,
        epsilon: f64,
        noise: NoiseLaw,
    },
    TwoKernelMixture {
        q: f64,
        kernel_a: Vec<f64>,
        kernel_b: Vec<f64>,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Homogeneous { .. } => "homogeneous",
            Family::DirichletNeighbors { .. } => "dirichlet_neighbors",
            Family::EpsilonPerturbedDrift { .. } => "epsilon_perturbed_drift",
            Family::TwoKernelMixture { .. } => "two_kernel_mixture",
        }
    }

    pub const NAMES: [&'static str; 4] = [
        "homogeneous",
        "dirichlet_neighbors",
        "epsilon_perturbed_drift",
        "two_kernel_mixture",
    ];
}

/// Support specification in a model file: either a named support or an
/// explicit list of offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JumpSpec {
    Named(String),
    Explicit(Vec<Vec<i64>>),
}

/// Serializable description of an [`EnvironmentModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dimension: usize,
    #[serde(default)]
    pub axis: usize,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_jumps")]
    pub jumps: JumpSpec,
    pub family: Family,
}

fn default_r0() -> f64 {
    1.0
}

fn default_jumps() -> JumpSpec {
    JumpSpec::Named("nearest".into())
}

/// A validated environment law.
#[derive(Clone, Debug)]
pub struct EnvironmentModel {
    spec: ModelSpec,
    jumps: Arc<JumpSet>,
    gammas: Vec<Gamma<f64>>,
}

impl EnvironmentModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let d = spec.dimension;
        if d < 2 {
            return Err(config(format!("dimension must be at least 2, got {d}")));
        }
        if spec.axis >= d {
            return Err(config(format!(
                "direction axis {} out of range for dimension {d}",
                spec.axis
            )));
        }
        if !(spec.r0 >= 1.0) {
            return Err(config(format!("r0 must be >= 1, got {}", spec.r0)));
        }
        let jumps = match &spec.jumps {
            JumpSpec::Named(name) if name == "nearest" => JumpSet::nearest_neighbor(d),
            JumpSpec::Named(name) => {
                return Err(config(format!(
                    "unknown named jump set '{name}' (valid: nearest)"
                )))
            }
            JumpSpec::Explicit(list) => {
                JumpSet::new(list.iter().cloned().map(LatticePoint).collect())?
            }
        };
        if jumps.dim() != d {
            return Err(config(format!(
                "jump set dimension {} does not match model dimension {d}",
                jumps.dim()
            )));
        }
        for o in jumps.offsets() {
            if o.norm() > spec.r0 + 1e-12 {
                return Err(Error::Model(format!(
                    "offset {o} has norm {} > r0 = {}",
                    o.norm(),
                    spec.r0
                )));
            }
        }
        let k = jumps.len();
        let check_probs = |name: &str, p: &[f64]| -> Result<()> {
            if p.len() != k {
                return Err(config(format!(
                    "{name} has {} entries but the jump set has {k}",
                    p.len()
                )));
            }
            if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Model(format!("{name} has a negative or non-finite entry")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Model(format!("{name} sums to {s}, not 1")));
            }
            Ok(())
        };
        let mut gammas = Vec::new();
        match &spec.family {
            Family::Homogeneous { probs } => check_probs("probs", probs)?,
            Family::DirichletNeighbors { alpha } => {
                if alpha.len() != k {
                    return Err(config(format!(
                        "alpha has {} entries but the jump set has {k}",
                        alpha.len()
                    )));
                }
                for &a in alpha {
                    let g = Gamma::new(a, 1.0)
                        .map_err(|_| config(format!("alpha entries must be positive, got {a}")))?;
                    if !(a > 0.0) {
                        return Err(config(format!("alpha entries must be positive, got {a}")));
                    }
                    gammas.push(g);
                }
            }
            Family::EpsilonPerturbedDrift { base, epsilon, .. } => {
                check_probs("base", base)?;
                if !(0.0..1.0).contains(epsilon) {
                    return Err(config(format!("epsilon must lie in [0, 1), got {epsilon}")));
                }
            }
            Family::TwoKernelMixture {
                q,
                kernel_a,
                kernel_b,
            } => {
                check_probs("kernel_a", kernel_a)?;
                check_probs("kernel_b", kernel_b)?;
                if !(0.0..=1.0).contains(q) {
                    return Err(config(format!("q must lie in [0, 1], got {q}")));
                }
            }
        }
        Ok(EnvironmentModel {
            spec,
            jumps: Arc::new(jumps),
            gammas,
        })
    }

    /// Convenience constructor on the nearest-neighbour support.
    pub fn nearest_neighbor(d: usize, axis: usize, family: Family) -> Result<Self> {
        Self::new(ModelSpec {
            dimension: d,
            axis,
            r0: 1.0,
            jumps: default_jumps(),
            family,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn axis(&self) -> usize {
        self.spec.axis
    }

    pub fn r0(&self) -> f64 {
        self.spec.r0
    }

    pub fn jumps(&self) -> &Arc<JumpSet> {
        &self.jumps
    }

    pub fn family(&self) -> &Family {
        &self.spec.family
    }

    /// `E[omega_0(z)]` when it has a closed form.
    pub fn analytic_mean_kernel(&self) -> Option<Vec<f64>> {
        match &self.spec.family {
            Family::Homogeneous { probs } => Some(probs.clone()),
            Family::DirichletNeighbors { alpha } => {
                let s: f64 = alpha.iter().sum();
                Some(alpha.iter().map(|a| a / s).collect())
            }
            Family::TwoKernelMixture {
                q,
                kernel_a,
                kernel_b,
            } => Some(
                kernel_a
                    .iter()
                    .zip(kernel_b)
                    .map(|(a, b)| q * a + (1.0 - q) * b)
                    .collect(),
            ),
            Family::EpsilonPerturbedDrift { .. } => None,
        }
    }

    /// True when every site carries the same kernel.
    pub fn is_homogeneous(&self) -> bool {
        match &self.spec.family {
            Family::Homogeneous { .. } => true,
            Family::EpsilonPerturbedDrift { epsilon, .. } => *epsilon == 0.0,
            Family::TwoKernelMixture {
                q,
                kernel_a,
                kernel_b,
            } => *q == 0.0 || *q == 1.0 || kernel_a == kernel_b,
            Family::DirichletNeighbors { .. } => false,
        }
    }

    /// Writes the kernel keyed by `key` into `out` (length = jump set size).
    fn fill_from_key(&self, key: u64, out: &mut [f64]) {
        let mut rng = StreamRng::new(key);
        match &self.spec.family {
            Family::Homogeneous { probs } => out.copy_from_slice(probs),
            Family::DirichletNeighbors { .. } => {
                for (o, g) in out.iter_mut().zip(&self.gammas) {
                    *o = g.sample(&mut rng);
                }
            }
            Family::EpsilonPerturbedDrift {
                base,
                epsilon,
                noise,
            } => {
                for (o, b) in out.iter_mut().zip(base) {
                    let u = match noise {
                        NoiseLaw::Uniform => 2.0 * rng.next_unit() - 1.0,
                        NoiseLaw::Rademacher => {
                            if rng.next_unit() < 0.5 {
                                -1.0
                            } else {
                                1.0
                            }
                        }
                    };
                    *o = b * (1.0 + epsilon * u);
                }
            }
            Family::TwoKernelMixture {
                q,
                kernel_a,
                kernel_b,
            } => {
                let src = if rng.next_unit() < *q { kernel_a } else { kernel_b };
                out.copy_from_slice(src);
            }
        }
        let s: f64 = out.iter().sum();
        if s > 0.0 {
            for o in out.iter_mut() {
                *o /= s;
            }
        } else {
            // Gamma draws underflowed for every offset; fall back to the mean.
            let n = out.len() as f64;
            out.iter_mut().for_each(|o| *o = 1.0 / n);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    #[default]
    None,
    Bounded(usize),
}

#[derive(Debug)]
struct KernelCache {
    max_sites: usize,
    map: Mutex<HashMap<Vec<i64>, Box<[f64]>>>,
}

/// One realization of the environment, identified by its seed.
#[derive(Debug, Clone)]
pub struct EnvironmentHandle {
    model: Arc<EnvironmentModel>,
    env_seed: u64,
    policy: CachePolicy,
    cache: Option<Arc<KernelCache>>,
    resampled: Option<(Vec<i64>, u64)>,
}

impl EnvironmentHandle {
    pub fn new(model: Arc<EnvironmentModel>, env_seed: u64) -> Self {
        Self::with_cache(model, env_seed, CachePolicy::None)
    }

    pub fn with_cache(model: Arc<EnvironmentModel>, env_seed: u64, policy: CachePolicy) -> Self {
        let cache = match policy {
            CachePolicy::None => None,
            CachePolicy::Bounded(max_sites) => Some(Arc::new(KernelCache {
                max_sites: max_sites.max(1),
                map: Mutex::new(HashMap::new()),
            })),
        };
        EnvironmentHandle {
            model,
            env_seed,
            policy,
            cache,
            resampled: None,
        }
    }

    /// The same environment except that the kernel at `site` is redrawn from
    /// an independent stream keyed by `seed`.
    pub fn with_resampled_site(&self, site: &LatticePoint, seed: u64) -> Self {
        let mut h = Self::with_cache(self.model.clone(), self.env_seed, self.policy);
        h.resampled = Some((site.0.clone(), seed));
        h
    }

    pub fn model(&self) -> &Arc<EnvironmentModel> {
        &self.model
    }

    pub fn env_seed(&self) -> u64 {
        self.env_seed
    }

    pub fn cache_policy(&self) -> CachePolicy {
        self.policy
    }

    pub fn dimension(&self) -> usize {
        self.model.dimension()
    }

    /// The kernel `omega_site`.
    pub fn kernel_at(&self, site: &LatticePoint) -> Result<SiteKernel> {
        let d = self.model.dimension();
        if site.dim() != d {
            return Err(config(format!(
                "site {site} has dimension {} but the model has dimension {d}",
                site.dim()
            )));
        }
        let mut probs = vec![0.0; self.model.jumps.len()];
        self.fill_kernel(site.coords(), &mut probs);
        Ok(SiteKernel {
            jumps: self.model.jumps.clone(),
            probs,
        })
    }

    /// Writes `omega_site` into `out`. `site` must have the model dimension.
    #[inline]
    pub fn fill_kernel(&self, site: &[i64], out: &mut [f64]) {
        debug_assert_eq!(site.len(), self.model.dimension());
        let key = match &self.resampled {
            Some((s, seed)) if s.as_slice() == site => prf::site_key(*seed ^ 0xA5A5_5A5A_C3C3_3C3C, site),
            _ => prf::site_key(self.env_seed, site),
        };
        match &self.cache {
            None => self.model.fill_from_key(key, out),
            Some(cache) => {
                let mut map = cache.map.lock().expect("kernel cache poisoned");
                if let Some(p) = map.get(site) {
                    out.copy_from_slice(p);
                    return;
                }
                self.model.fill_from_key(key, out);
                if map.len() >= cache.max_sites {
                    map.clear();
                }
                map.insert(site.to_vec(), out.to_vec().into_boxed_slice());
            }
        }
    }

    /// Index of the offset chosen by inverse CDF at uniform `u`.
    #[inline]
    pub fn sample_offset(&self, site: &[i64], u: f64, scratch: &mut [f64]) -> usize {
        self.fill_kernel(site, scratch);
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in scratch.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }
}

/// Empirical checks of the bounded-step, non-collinearity and drift assumptions.
#[derive(Clone, Debug, Serialize)]
pub struct ModelDiagnostics {
    pub samples: usize,
    pub r0: f64,
    pub max_support_norm: f64,
    pub support_within_radius: bool,
    pub non_collinear: bool,
    pub min_ellipticity: f64,
    pub max_normalization_error: f64,
    pub mean_kernel: Vec<f64>,
    pub drift: Vec<f64>,
    pub drift_std_error: Vec<f64>,
}

/// Samples `samples` independent kernels and reports the model diagnostics.
pub fn validate_model(model: &EnvironmentModel, samples: usize, seed: u64) -> Result<ModelDiagnostics> {
    if samples == 0 {
        return Err(Error::Input("validate_model needs at least one sample".into()));
    }
    let model = Arc::new(model.clone());
    let d = model.dimension();
    let k = model.jumps.len();
    let mut mean = vec![0.0; k];
    let mut drift_sum = vec![0.0; d];
    let mut drift_sq = vec![0.0; d];
    let mut min_ell = f64::INFINITY;
    let mut max_norm_err: f64 = 0.0;
    let origin = LatticePoint::origin(d);
    for s in 0..samples {
        let h = EnvironmentHandle::new(model.clone(), prf::derive(seed, &[prf::tag("validate"), s as u64]));
        let kern = h.kernel_at(&origin)?;
        let err = kern.normalization_error();
        if err > NORMALIZATION_TOL || kern.probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Model(format!(
                "family {} emitted an invalid kernel (normalization error {err})",
                model.family().name()
            )));
        }
        max_norm_err = max_norm_err.max(err);
        for (m, p) in mean.iter_mut().zip(&kern.probs) {
            *m += p;
        }
        min_ell = min_ell.min(kern.probs.iter().cloned().fold(f64::INFINITY, f64::min));
        for (i, v) in kern.drift().into_iter().enumerate() {
            drift_sum[i] += v;
            drift_sq[i] += v * v;
        }
    }
    let n = samples as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let drift: Vec<f64> = drift_sum.iter().map(|s| s / n).collect();
    let drift_std_error = drift_sq
        .iter()
        .zip(&drift)
        .map(|(sq, m)| {
            if samples < 2 {
                0.0
            } else {
                ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
            }
        })
        .collect();
    let mask: Vec<bool> = mean.iter().map(|&m| m > 0.0).collect();
    let max_support_norm = model
        .jumps
        .offsets()
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(o, _)| o.norm())
        .fold(0.0, f64::max);
    Ok(ModelDiagnostics {
        samples,
        r0: model.r0(),
        max_support_norm,
        support_within_radius: max_support_norm <= model.r0() + 1e-12,
        non_collinear: model.jumps.non_collinear(&mask),
        min_ellipticity: min_ell,
        max_normalization_error: max_norm_err,
        mean_kernel: mean,
        drift,
        drift_std_error,
    })
}

impl ModelDiagnostics {
    /// Rejects models that cannot be directionally transient along `axis`.
    pub fn check_assumptions(&self, axis: usize) -> Result<()> {
        if !self.support_within_radius {
            return Err(Error::Model("support exceeds r0".into()));
        }
        if !self.non_collinear {
            return Err(Error::Model("support is collinear".into()));
        }
        if !(self.drift[axis] > 0.0) {
            return Err(Error::Model(format!(
                "mean drift along axis {axis} is {} (must be positive)",
                self.drift[axis]
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirichlet(alpha: Vec<f64>) -> Arc<EnvironmentModel> {
        Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha }).unwrap())
    }

    #[test]
    fn homogeneous_kernel_is_site_independent() {
        let p = vec![0.4, 0.1, 0.25, 0.25];
        let m = Arc::new(
            EnvironmentModel::nearest_neighbor(2, 0, Family::Homogeneous { probs: p.clone() }).unwrap(),
        );
        let h = EnvironmentHandle::new(m, 9);
        let a = h.kernel_at(&LatticePoint::new(vec![3, -1])).unwrap();
        let b = h.kernel_at(&LatticePoint::new(vec![-7, 12])).unwrap();
        assert_eq!(a.probs, b.probs);
        for (x, y) in a.probs.iter().zip(&p) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_lookup_is_pure_with_and_without_cache() {
        let m = dirichlet(vec![1.0, 0.5, 0.7, 0.7]);
        let plain = EnvironmentHandle::new(m.clone(), 77);
        let cached = EnvironmentHandle::with_cache(m, 77, CachePolicy::Bounded(3));
        for x in -5..5 {
            for y in -5..5 {
                let site = LatticePoint::new(vec![x, y]);
                let a = plain.kernel_at(&site).unwrap();
                let b = plain.kernel_at(&site).unwrap();
                let c = cached.kernel_at(&site).unwrap();
                let c2 = cached.kernel_at(&site).unwrap();
                assert_eq!(a.probs, b.probs);
                assert_eq!(a.probs, c.probs);
                assert_eq!(a.probs, c2.probs);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let h = EnvironmentHandle::new(dirichlet(vec![1.0; 4]), 1);
        let err = h.kernel_at(&LatticePoint::new(vec![1, 2, 3])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn dirichlet_mean_matches_alpha_ratio() {
        let alpha = vec![2.0, 0.5, 1.0, 1.5];
        let total: f64 = alpha.iter().sum();
        let h = EnvironmentHandle::new(dirichlet(alpha.clone()), 123);
        let n = 100_000;
        let mut sum = vec![0.0; 4];
        let mut sq = vec![0.0; 4];
        let mut buf = vec![0.0; 4];
        for i in 0..n {
            h.fill_kernel(&[i, 17], &mut buf);
            for j in 0..4 {
                sum[j] += buf[j];
                sq[j] += buf[j] * buf[j];
            }
        }
        for j in 0..4 {
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            let target = alpha[j] / total;
            assert!((mean - target).abs() < 3.0 * se, "offset {j}: {mean} vs {target} (se {se})");
        }
    }

    #[test]
    fn neighbouring_sites_are_uncorrelated() {
        let m = dirichlet(vec![1.0, 1.0, 1.0, 1.0]);
        let n = 20_000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut a = vec![0.0; 4];
        let mut b = vec![0.0; 4];
        for s in 0..n {
            let h = EnvironmentHandle::new(m.clone(), prf::derive(99, &[s]));
            h.fill_kernel(&[0, 0], &mut a);
            h.fill_kernel(&[1, 0], &mut b);
            sx += a[0];
            sy += b[0];
            sxx += a[0] * a[0];
            syy += b[0] * b[0];
            sxy += a[0] * b[0];
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(corr.abs() < 4.0 / nf.sqrt(), "corr = {corr}");
    }

    #[test]
    fn every_family_emits_normalized_kernels_within_radius() {
        let base = vec![0.4, 0.1, 0.25, 0.25];
        let families = vec![
            Family::Homogeneous { probs: base.clone() },
            Family::DirichletNeighbors { alpha: vec![0.3, 0.2, 0.4, 0.4] },
            Family::EpsilonPerturbedDrift {
                base: base.clone(),
                epsilon: 0.9,
                noise: NoiseLaw::Uniform,
            },
            Family::EpsilonPerturbedDrift {
                base: base.clone(),
                epsilon: 0.5,
                noise: NoiseLaw::Rademacher,
            },
            Family::TwoKernelMixture {
                q: 0.3,
                kernel_a: base.clone(),
                kernel_b: vec![0.7, 0.1, 0.1, 0.1],
            },
        ];
        for f in families {
            let m = EnvironmentModel::nearest_neighbor(2, 0, f).unwrap();
            let diag = validate_model(&m, 2000, 5).unwrap();
            assert!(diag.max_normalization_error <= NORMALIZATION_TOL);
            assert!(diag.support_within_radius);
            assert_eq!(diag.max_support_norm, 1.0);
            assert!(diag.non_collinear);
            assert!(diag.drift[0] > 0.0);
            diag.check_assumptions(0).unwrap();
        }
    }

    #[test]
    fn collinear_support_is_flagged() {
        let m = EnvironmentModel::new(ModelSpec {
            dimension: 2,
            axis: 0,
            r0: 2.0,
            jumps: JumpSpec::Explicit(vec![vec![1, 0], vec![2, 0]]),
            family: Family::Homogeneous { probs: vec![0.5, 0.5] },
        })
        .unwrap();
        let diag = validate_model(&m, 10, 1).unwrap();
        assert!(!diag.non_collinear);
        assert_eq!(diag.max_support_norm, 2.0);
        assert!(diag.check_assumptions(0).is_err());
    }

    #[test]
    fn dirichlet_drift_matches_closed_form() {
        let alpha = vec![3.0, 1.0, 1.0, 1.0];
        let m = EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha }).unwrap();
        let diag = validate_model(&m, 20_000, 11).unwrap();
        // sum_z z alpha_z / sum alpha = (3 - 1) / 6 along e1, 0 along e2
        let target = [2.0 / 6.0, 0.0];
        for i in 0..2 {
            assert!(
                (diag.drift[i] - target[i]).abs() < 3.0 * diag.drift_std_error[i],
                "coord {i}: {} vs {}",
                diag.drift[i],
                target[i]
            );
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(EnvironmentModel::nearest_neighbor(1, 0, Family::Homogeneous { probs: vec![0.5, 0.5] }).is_err());
        assert!(EnvironmentModel::nearest_neighbor(2, 2, Family::Homogeneous { probs: vec![0.25; 4] }).is_err());
        assert!(EnvironmentModel::nearest_neighbor(2, 0, Family::Homogeneous { probs: vec![0.5; 4] }).is_err());
        assert!(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![1.0, 0.0, 1.0, 1.0] }).is_err());
        let too_far = ModelSpec {
            dimension: 2,
            axis: 0,
            r0: 1.0,
            jumps: JumpSpec::Explicit(vec![vec![2, 0], vec![0, 1]]),
            family: Family::Homogeneous { probs: vec![0.5, 0.5] },
        };
        assert!(matches!(EnvironmentModel::new(too_far), Err(Error::Model(_))));
        let dup = JumpSet::new(vec![LatticePoint::new(vec![1, 0]), LatticePoint::new(vec![1, 0])]);
        assert!(dup.is_err());
    }

    #[test]
    fn resampled_site_changes_only_that_site() {
        let m = dirichlet(vec![1.0; 4]);
        let h = EnvironmentHandle::new(m, 3);
        let z = LatticePoint::new(vec![2, 1]);
        let g = h.with_resampled_site(&z, 1234);
        assert_ne!(h.kernel_at(&z).unwrap().probs, g.kernel_at(&z).unwrap().probs);
        let other = LatticePoint::new(vec![2, 2]);
        assert_eq!(h.kernel_at(&other).unwrap().probs, g.kernel_at(&other).unwrap().probs);
    }
}
