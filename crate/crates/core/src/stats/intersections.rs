use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvironmentHandle, EnvironmentModel, LatticePoint};
use crate::error::{config, insufficient, Result};
use crate::numeric::{self, SpearmanTest};
use crate::prf::{SeedSchedule, StreamRng};
use crate::regen::{merge_joint, scan_levels, JointRegenRecord};
use crate::walk::{simulate_pair, Trajectory, TrajectoryPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionConfig {
    /// Number of joint regeneration slabs examined.
    pub n: usize,
    pub eps: f64,
    /// Exponent of the slab-width threshold in the `G_n` event; `eps / d` when absent.
    #[serde(default)]
    pub g_exponent: Option<f64>,
    pub replicas: usize,
    /// Initial horizon; doubled up to `max_horizon` until enough regenerations are confirmed.
    pub horizon: usize,
    pub max_horizon: usize,
    pub margin: i64,
}

impl IntersectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.replicas == 0 {
            return Err(config("intersections need n >= 1 and at least one replica"));
        }
        if !(self.eps > 0.0) {
            return Err(config("eps must be positive"));
        }
        if self.horizon == 0 || self.max_horizon < self.horizon {
            return Err(config("need 0 < horizon <= max_horizon"));
        }
        if self.margin < 1 {
            return Err(config("margin must be >= 1"));
        }
        Ok(())
    }
}

/// Per-replica intersection quantities for one pair started at the origin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntersectionReplica {
    pub replica: u64,
    pub n: usize,
    pub eps: f64,
    pub censored: bool,
    pub horizon: usize,
    /// `|{k <= n : ‖X1_{μk} − X2_{μk}‖_∞ <= n^ε}|`.
    pub jrl_le: usize,
    /// Joint slabs `i <= n` in which the two paths share a site.
    pub jrlc: usize,
    pub decorr_sum: f64,
    /// `sum_{i <= n} (μ̃1_i/√n ∧ 1)(μ̃2_i/√n ∧ 1)` over all joint slabs.
    pub g_sum: f64,
    pub o_n: bool,
    pub g_n: bool,
    pub e_n: bool,
    pub j_n: usize,
    pub max_k_n: usize,
    /// `JRLC(n) ⊆ JRL^≤(n, ε)`; checked on every replica, guaranteed on `E_n`.
    pub jrlc_in_jrl_le: bool,
}

impl IntersectionReplica {
    fn censored(replica: u64, cfg: &IntersectionConfig, horizon: usize) -> Self {
        IntersectionReplica {
            replica,
            n: cfg.n,
            eps: cfg.eps,
            censored: true,
            horizon,
            jrl_le: 0,
            jrlc: 0,
            decorr_sum: 0.0,
            g_sum: 0.0,
            o_n: false,
            g_n: false,
            e_n: false,
            j_n: 0,
            max_k_n: 0,
            jrlc_in_jrl_le: true,
        }
    }

    /// `n · ĝ` for this replica.
    pub fn n_g_hat(&self) -> f64 {
        self.g_sum
    }
}

fn sup_dist(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).max().unwrap_or(0)
}

/// Sorted, deduplicated sites visited on the inclusive time window `[a, b]`.
fn sites(t: &Trajectory, a: usize, b: usize) -> Vec<&[i64]> {
    let mut v: Vec<&[i64]> = (a..=b).map(|s| t.position(s)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn intersects(a: &[&[i64]], b: &[&[i64]]) -> bool {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().any(|x| large.binary_search(x).is_ok())
}

/// Max `‖X_t − X_a‖_∞` over `t ∈ [a, b]`.
fn excursion(t: &Trajectory, a: usize, b: usize) -> i64 {
    let base = t.position(a);
    (a..=b).map(|s| sup_dist(t.position(s), base)).max().unwrap_or(0)
}

/// Computes every intersection quantity of a pair whose records suffice.
///
/// Returns `None` when the pair lacks `n + 1` joint levels or `n + 2`
/// regenerations of either walk.
pub fn intersection_replica(
    pair: &TrajectoryPair,
    axis: usize,
    margin: i64,
    n: usize,
    eps: f64,
    g_exponent: f64,
) -> Option<IntersectionReplica> {
    let (a, b) = (&pair.first, &pair.second);
    let la = a.levels(axis);
    let lb = b.levels(axis);
    let ta = scan_levels(&la, margin).confirmed;
    let tb = scan_levels(&lb, margin).confirmed;
    let joint: Vec<JointRegenRecord> = merge_joint(&la, &ta, &lb, &tb);
    if joint.len() < n + 1 || ta.len() < n + 2 || tb.len() < n + 2 {
        return None;
    }
    let nf = n as f64;
    let root = nf.sqrt();
    let thr_close = nf.powf(eps);

    let mut jrl_le = vec![false; n];
    for k in 0..n {
        let r = &joint[k];
        jrl_le[k] = sup_dist(a.position(r.mu1), b.position(r.mu2)) as f64 <= thr_close;
    }

    let mut jrlc = 0;
    let mut decorr_sum = 0.0;
    let mut g_sum = 0.0;
    let mut subset = true;
    let mut e_n = true;
    for i in 0..n {
        let (r, s) = (&joint[i], &joint[i + 1]);
        let w1 = ((s.mu1 - r.mu1) as f64 / root).min(1.0);
        let w2 = ((s.mu2 - r.mu2) as f64 / root).min(1.0);
        g_sum += w1 * w2;
        let wide = excursion(a, r.mu1, s.mu1).max(excursion(b, r.mu2, s.mu2));
        if wide as f64 > thr_close / 2.0 {
            e_n = false;
        }
        if intersects(&sites(a, r.mu1, s.mu1), &sites(b, r.mu2, s.mu2)) {
            jrlc += 1;
            decorr_sum += w1 * w2;
            if !jrl_le[i] {
                subset = false;
            }
        }
    }

    let o_n = [(a, ta[0]), (b, tb[0])]
        .iter()
        .all(|(t, tau1)| excursion(t, 0, *tau1) as f64 <= thr_close);

    let thr_g = nf.powf(g_exponent);
    let g_n = [(a, &ta), (b, &tb)]
        .iter()
        .all(|(t, taus)| (2..=n + 1).all(|j| excursion(t, taus[j - 2], taus[j - 1]) as f64 <= thr_g));

    // τ_j in the 1-based notation is taus[j - 1]; slab j covers [τ_j, τ_{j+1} − 1]
    let b_range = sites(b, tb[0], tb[n]);
    let b_slabs: Vec<Vec<&[i64]>> = (2..=n + 1).map(|k| sites(b, tb[k - 1], tb[k] - 1)).collect();
    // levels of slab k lie in [lb[τ_k], lb[τ_{k+1}]), increasing in k
    let b_low: Vec<i64> = (2..=n + 1).map(|k| lb[tb[k - 1]]).collect();
    let b_high: Vec<i64> = (2..=n + 1).map(|k| lb[tb[k]]).collect();
    let mut j_n = 0;
    let mut max_k_n = 0;
    for j in 2..=n + 1 {
        let sj = sites(a, ta[j - 1], ta[j] - 1);
        if intersects(&sj, &b_range) {
            j_n += 1;
        }
        let (lo, hi) = (la[ta[j - 1]], la[ta[j]]);
        let first = b_high.partition_point(|&h| h <= lo);
        let last = b_low.partition_point(|&l| l < hi);
        let k_count = (first..last.max(first)).filter(|&k| intersects(&b_slabs[k], &sj)).count();
        max_k_n = max_k_n.max(k_count);
    }

    Some(IntersectionReplica {
        replica: 0,
        n,
        eps,
        censored: false,
        horizon: a.horizon(),
        jrl_le: jrl_le.iter().filter(|&&x| x).count(),
        jrlc,
        decorr_sum,
        g_sum,
        o_n,
        g_n,
        e_n,
        j_n,
        max_k_n,
        jrlc_in_jrl_le: subset,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntersectionStats {
    pub n: usize,
    pub eps: f64,
    pub replicas: usize,
    pub censored: usize,
    pub mean_jrl_le: f64,
    pub mean_jrl_le_ci: (f64, f64),
    pub mean_jrlc: f64,
    pub mean_decorr_sum: f64,
    pub mean_decorr_sum_ci: (f64, f64),
    /// Mean over all joint slabs of `(μ̃1/√n ∧ 1)(μ̃2/√n ∧ 1)`.
    pub g_hat: f64,
    pub freq_o_n: f64,
    pub freq_g_n: f64,
    pub freq_e_n: f64,
    pub mean_j_n: f64,
    pub mean_max_k_n: f64,
    #[serde(skip)]
    pub rows: Vec<IntersectionReplica>,
}

impl IntersectionStats {
    pub fn usable(&self) -> impl Iterator<Item = &IntersectionReplica> {
        self.rows.iter().filter(|r| !r.censored)
    }

    /// Writes `replica,n,eps,jrl_le,jrlc,decorr_sum,o_n,g_n,e_n` for every usable replica.
    pub fn write_csv<W: std::io::Write>(stats: &[IntersectionStats], mut w: W, digest: &str) -> Result<()> {
        writeln!(w, "# manifest_digest={digest}")?;
        writeln!(w, "replica,n,eps,jrl_le,jrlc,decorr_sum,o_n,g_n,e_n")?;
        for s in stats {
            for r in s.usable() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    r.replica, r.n, r.eps, r.jrl_le, r.jrlc, r.decorr_sum, r.o_n as u8, r.g_n as u8, r.e_n as u8
                )?;
            }
        }
        Ok(())
    }
}

/// Simulates `replicas` pairs from the origin and aggregates their intersection quantities.
pub fn intersection_stats(
    model: &Arc<EnvironmentModel>,
    cfg: &IntersectionConfig,
    schedule: &SeedSchedule,
) -> Result<IntersectionStats> {
    cfg.validate()?;
    let d = model.dimension();
    let axis = model.axis();
    let g_exp = cfg.g_exponent.unwrap_or(cfg.eps / d as f64);
    let origin = LatticePoint::origin(d);
    let rows: Vec<IntersectionReplica> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|k| -> Result<IntersectionReplica> {
            let h = EnvironmentHandle::new(model.clone(), schedule.env(k));
            let mut horizon = cfg.horizon;
            loop {
                let pair = simulate_pair(&h, &origin, &origin, horizon, schedule.walk(k, 0), schedule.walk(k, 1))?;
                if let Some(mut r) = intersection_replica(&pair, axis, cfg.margin, cfg.n, cfg.eps, g_exp) {
                    r.replica = k;
                    return Ok(r);
                }
                if horizon >= cfg.max_horizon {
                    return Ok(IntersectionReplica::censored(k, cfg, horizon));
                }
                horizon = (horizon * 2).min(cfg.max_horizon);
            }
        })
        .collect::<Result<_>>()?;
    let mut rng = schedule.stream(&format!("intersections-{}", cfg.n));
    aggregate(cfg.n, cfg.eps, rows, &mut rng)
}

fn aggregate(n: usize, eps: f64, rows: Vec<IntersectionReplica>, rng: &mut StreamRng) -> Result<IntersectionStats> {
    let ok: Vec<&IntersectionReplica> = rows.iter().filter(|r| !r.censored).collect();
    if ok.is_empty() {
        return Err(insufficient(format!("every intersection replica at n = {n} was censored")));
    }
    let col = |f: &dyn Fn(&IntersectionReplica) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let jrl = col(&|r| r.jrl_le as f64);
    let dec = col(&|r| r.decorr_sum);
    let freq = |f: &dyn Fn(&IntersectionReplica) -> bool| ok.iter().filter(|r| f(r)).count() as f64 / ok.len() as f64;
    Ok(IntersectionStats {
        n,
        eps,
        replicas: rows.len(),
        censored: rows.len() - ok.len(),
        mean_jrl_le: numeric::mean(&jrl),
        mean_jrl_le_ci: numeric::bootstrap_mean_ci(&jrl, 0.95, super::velocity::BOOTSTRAP_RESAMPLES, rng),
        mean_jrlc: numeric::mean(&col(&|r| r.jrlc as f64)),
        mean_decorr_sum: numeric::mean(&dec),
        mean_decorr_sum_ci: numeric::bootstrap_mean_ci(&dec, 0.95, super::velocity::BOOTSTRAP_RESAMPLES, rng),
        g_hat: ok.iter().map(|r| r.g_sum).sum::<f64>() / (n * ok.len()) as f64,
        freq_o_n: freq(&|r| r.o_n),
        freq_g_n: freq(&|r| r.g_n),
        freq_e_n: freq(&|r| r.e_n),
        mean_j_n: numeric::mean(&col(&|r| r.j_n as f64)),
        mean_max_k_n: numeric::mean(&col(&|r| r.max_k_n as f64)),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub exponent: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    pub level: f64,
    pub grid: Vec<usize>,
}

/// Log-log slope of mean `|JRL^≤|` against `n`, with a replica bootstrap
/// performed independently at each `n`.
pub fn fit_growth_exponent(stats: &[IntersectionStats], level: f64, rng: &mut StreamRng) -> Result<GrowthFit> {
    if stats.len() < 2 {
        return Err(insufficient("growth fit needs at least two n values"));
    }
    let xs: Vec<f64> = stats.iter().map(|s| (s.n as f64).ln()).collect();
    let samples: Vec<Vec<f64>> = stats.iter().map(|s| s.usable().map(|r| r.jrl_le as f64).collect()).collect();
    let slope = |means: &[f64]| -> f64 {
        if means.iter().any(|&m| !(m > 0.0)) {
            return f64::NAN;
        }
        let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
        numeric::ols(&xs, &ys).map(|f| f.slope).unwrap_or(f64::NAN)
    };
    let exponent = slope(&samples.iter().map(|s| numeric::mean(s)).collect::<Vec<_>>());
    let mut boot = Vec::with_capacity(super::velocity::BOOTSTRAP_RESAMPLES);
    for _ in 0..super::velocity::BOOTSTRAP_RESAMPLES {
        let means: Vec<f64> = samples
            .iter()
            .map(|s| {
                let m = s.len();
                (0..m).map(|_| s[rand::Rng::random_range(rng, 0..m)]).sum::<f64>() / m as f64
            })
            .collect();
        let b = slope(&means);
        if b.is_finite() {
            boot.push(b);
        }
    }
    let (lo, hi) = if boot.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let a = (1.0 - level) / 2.0;
        (numeric::quantile(&boot, a), numeric::quantile(&boot, 1.0 - a))
    };
    Ok(GrowthFit {
        exponent,
        ci_low: lo,
        ci_high: hi,
        half_width: (hi - lo) / 2.0,
        level,
        grid: stats.iter().map(|s| s.n).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecorrelationPoint {
    pub n: usize,
    pub mean_decorr_sum: f64,
    pub ci: (f64, f64),
    pub sqrt_n_scaled: f64,
    pub g_hat: f64,
    pub n_g_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecorrelationCurve {
    pub points: Vec<DecorrelationPoint>,
    /// Spearman test of `√n · decorr_sum` (per replica) against `n`.
    pub trend_sqrt_n_decorr: SpearmanTest,
    /// Spearman test of `n · ĝ` (per replica) against `n`.
    pub trend_n_g_hat: SpearmanTest,
    /// Significant upward trend in either scaled quantity at 5%.
    pub upward_trend: bool,
}

pub fn decorrelation_curve(stats: &[IntersectionStats]) -> Result<DecorrelationCurve> {
    if stats.len() < 2 {
        return Err(insufficient("decorrelation curve needs at least two n values"));
    }
    let mut x = Vec::new();
    let mut y_dec = Vec::new();
    let mut y_g = Vec::new();
    for s in stats {
        let root = (s.n as f64).sqrt();
        for r in s.usable() {
            x.push(s.n as f64);
            y_dec.push(root * r.decorr_sum);
            y_g.push(r.n_g_hat());
        }
    }
    let t_dec = numeric::spearman(&x, &y_dec);
    let t_g = numeric::spearman(&x, &y_g);
    Ok(DecorrelationCurve {
        points: stats
            .iter()
            .map(|s| DecorrelationPoint {
                n: s.n,
                mean_decorr_sum: s.mean_decorr_sum,
                ci: s.mean_decorr_sum_ci,
                sqrt_n_scaled: s.mean_decorr_sum * (s.n as f64).sqrt(),
                g_hat: s.g_hat,
                n_g_hat: s.g_hat * s.n as f64,
            })
            .collect(),
        upward_trend: t_dec.p_increasing < 0.05 || t_g.p_increasing < 0.05,
        trend_sqrt_n_decorr: t_dec,
        trend_n_g_hat: t_g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: Vec<Vec<i64>>, b: Vec<Vec<i64>>) -> TrajectoryPair {
        TrajectoryPair {
            first: Trajectory::from_points(&a, 1, 0).unwrap(),
            second: Trajectory::from_points(&b, 2, 0).unwrap(),
        }
    }

    #[test]
    fn parallel_pair_never_intersects() {
        let p = pair((0..=40).map(|t| vec![t, 0]).collect(), (0..=40).map(|t| vec![t, 1]).collect());
        let r = intersection_replica(&p, 0, 2, 8, 0.1, 0.05).unwrap();
        assert_eq!(r.jrlc, 0);
        assert_eq!(r.decorr_sum, 0.0);
        assert_eq!(r.jrl_le, 8);
        assert!(r.jrlc_in_jrl_le);
        assert_eq!(r.j_n, 0);
    }

    #[test]
    fn identical_paths_meet_in_every_slab() {
        let path: Vec<Vec<i64>> = (0..=40).map(|t| vec![t, 0]).collect();
        let p = pair(path.clone(), path);
        let r = intersection_replica(&p, 0, 2, 8, 0.1, 0.05).unwrap();
        assert_eq!(r.jrlc, 8);
        // slabs of length one give (1/√8)^2 each
        assert!((r.decorr_sum - 1.0).abs() < 1e-12);
        assert!(r.decorr_sum <= r.jrlc as f64);
        // unit slabs exceed n^eps / 2 ~ 0.62
        assert!(r.o_n && r.g_n && !r.e_n);
    }

    #[test]
    fn short_pair_is_censored() {
        let p = pair((0..=5).map(|t| vec![t, 0]).collect(), (0..=5).map(|t| vec![t, 1]).collect());
        assert!(intersection_replica(&p, 0, 2, 8, 0.1, 0.05).is_none());
    }
}
