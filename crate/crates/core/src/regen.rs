//! Regeneration times, joint regeneration levels and their i.i.d./Markov checks.
//!
//! A candidate is the first time the level `X_t · e_axis` strictly exceeds
//! the running maximum. It is confirmed when the walk never returns to its
//! level for the rest of the horizon and climbs at least `margin` levels above
//! it, censored when it never returns but the margin is not reached, and
//! discarded otherwise. After a discard the running maximum becomes the
//! largest level seen up to the return time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::LatticePoint;
use crate::error::{config, insufficient, Error, Result};
use crate::numeric;
use crate::walk::{Trajectory, TrajectoryPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailHandling {
    Censor,
    #[default]
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfirmationPolicy {
    pub margin: i64,
    #[serde(default)]
    pub tail_handling: TailHandling,
}

impl Default for ConfirmationPolicy {
    fn default() -> Self {
        ConfirmationPolicy {
            margin: 4,
            tail_handling: TailHandling::Drop,
        }
    }
}

impl ConfirmationPolicy {
    pub fn new(margin: i64, tail_handling: TailHandling) -> Result<Self> {
        let p = ConfirmationPolicy { margin, tail_handling };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.margin < 1 {
            return Err(config(format!("confirmation margin must be >= 1, got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegenStatus {
    Confirmed { margin: i64 },
    Censored,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RegenerationRecord {
    pub time: usize,
    pub position: LatticePoint,
    pub level: i64,
    pub status: RegenStatus,
}

impl RegenerationRecord {
    pub fn is_confirmed(&self) -> bool {
        matches!(self.status, RegenStatus::Confirmed { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JointRegenRecord {
    pub mu1: usize,
    pub mu2: usize,
    pub level: i64,
}

/// Confirmed and censored candidate times of a level sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RegenScan {
    pub confirmed: Vec<usize>,
    pub censored: Vec<usize>,
}

/// Runs the candidate recursion on a raw level sequence.
pub fn scan_levels(levels: &[i64], margin: i64) -> RegenScan {
    let mut out = RegenScan::default();
    let h = match levels.len() {
        0 => return out,
        n => n - 1,
    };
    // suffix_min[t] = min(levels[t..]); suffix_min[h + 1] = +inf
    let mut suffix_min = vec![i64::MAX; h + 2];
    for t in (0..=h).rev() {
        suffix_min[t] = suffix_min[t + 1].min(levels[t]);
    }
    let global_max = suffix_max_of(levels);
    let mut cur = 0usize;
    let mut running_max = levels[0];
    loop {
        let Some(s) = (cur + 1..=h).find(|&t| levels[t] > running_max) else {
            break;
        };
        let ls = levels[s];
        if suffix_min[s + 1] > ls {
            if global_max >= ls + margin {
                out.confirmed.push(s);
            } else {
                out.censored.push(s);
            }
            running_max = ls;
            cur = s;
        } else {
            let r = (s + 1..=h).find(|&t| levels[t] <= ls).expect("return exists");
            running_max = levels[s..=r].iter().copied().max().unwrap_or(ls);
            cur = r;
        }
    }
    out
}

fn suffix_max_of(levels: &[i64]) -> i64 {
    levels.iter().copied().max().unwrap_or(i64::MIN)
}

/// Detects regeneration times along `axis`.
///
/// Censored records are returned after the confirmed ones unless the policy
/// drops them.
pub fn detect_regenerations(traj: &Trajectory, axis: usize, policy: &ConfirmationPolicy) -> Result<Vec<RegenerationRecord>> {
    check_trajectory(traj, axis)?;
    policy.validate()?;
    let levels = traj.levels(axis);
    let scan = scan_levels(&levels, policy.margin);
    let mut out = Vec::with_capacity(scan.confirmed.len() + scan.censored.len());
    for &t in &scan.confirmed {
        out.push(RegenerationRecord {
            time: t,
            position: traj.point(t),
            level: levels[t],
            status: RegenStatus::Confirmed { margin: policy.margin },
        });
    }
    if policy.tail_handling == TailHandling::Censor {
        for &t in &scan.censored {
            out.push(RegenerationRecord {
                time: t,
                position: traj.point(t),
                level: levels[t],
                status: RegenStatus::Censored,
            });
        }
    }
    Ok(out)
}

/// Confirmed regeneration times only (the fast path used by the estimators).
pub fn confirmed_times(traj: &Trajectory, axis: usize, margin: i64) -> Vec<usize> {
    scan_levels(&traj.levels(axis), margin).confirmed
}

fn check_trajectory(traj: &Trajectory, axis: usize) -> Result<()> {
    if traj.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    if axis >= traj.dim() {
        return Err(config(format!("axis {axis} out of range for dimension {}", traj.dim())));
    }
    Ok(())
}

/// Joint levels from two confirmed regeneration time sequences.
///
/// Both sequences are strictly increasing in time and level, so the minimal
/// ordered pairs with equal level are exactly the common levels.
pub fn merge_joint(levels1: &[i64], times1: &[usize], levels2: &[i64], times2: &[usize]) -> Vec<JointRegenRecord> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < times1.len() && j < times2.len() {
        let (a, b) = (levels1[times1[i]], levels2[times2[j]]);
        match a.cmp(&b) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(JointRegenRecord {
                    mu1: times1[i],
                    mu2: times2[j],
                    level: a,
                });
                i += 1;
                j += 1;
            }
        }
    }
    out
}

pub fn detect_joint_regenerations(
    pair: &TrajectoryPair,
    axis: usize,
    policy: &ConfirmationPolicy,
) -> Result<Vec<JointRegenRecord>> {
    check_trajectory(&pair.first, axis)?;
    check_trajectory(&pair.second, axis)?;
    policy.validate()?;
    let l1 = pair.first.levels(axis);
    let l2 = pair.second.levels(axis);
    let t1 = scan_levels(&l1, policy.margin).confirmed;
    let t2 = scan_levels(&l2, policy.margin).confirmed;
    Ok(merge_joint(&l1, &t1, &l2, &t2))
}

/// One inter-regeneration increment.
#[derive(Clone, Debug, PartialEq)]
pub struct Increment {
    pub duration: usize,
    pub displacement: Vec<i64>,
    /// `sup_{τ_k <= t <= τ_{k+1}} ‖X_t − X_{τ_k}‖_∞`.
    pub slab_sup: i64,
}

/// Increments between consecutive confirmed records, `k >= 1`.
pub fn increments(records: &[RegenerationRecord], traj: &Trajectory) -> Vec<Increment> {
    let times: Vec<usize> = records.iter().filter(|r| r.is_confirmed()).map(|r| r.time).collect();
    increments_from_times(&times, traj)
}

pub fn increments_from_times(times: &[usize], traj: &Trajectory) -> Vec<Increment> {
    times
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let base = traj.position(a);
            let mut sup = 0;
            for t in a..=b {
                for (x, y) in traj.position(t).iter().zip(base) {
                    sup = sup.max((x - y).abs());
                }
            }
            Increment {
                duration: b - a,
                displacement: traj.position(b).iter().zip(base).map(|(x, y)| x - y).collect(),
                slab_sup: sup,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailSummary {
    pub mean: f64,
    pub variance: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
}

impl TailSummary {
    pub fn of(x: &[f64]) -> Self {
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        TailSummary {
            mean: numeric::mean(x),
            variance: numeric::variance(x),
            q50: numeric::quantile_sorted(&s, 0.5),
            q90: numeric::quantile_sorted(&s, 0.9),
            q99: numeric::quantile_sorted(&s, 0.99),
            max: *s.last().unwrap_or(&f64::NAN),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IncrementStats {
    pub count: usize,
    pub duration: TailSummary,
    pub displacement_mean: Vec<f64>,
    pub displacement_variance: Vec<f64>,
    /// Lag-1..5 autocorrelations of the durations.
    pub duration_autocorrelation: Vec<f64>,
    pub slab_sup: TailSummary,
    /// Mean displacement over mean duration.
    pub velocity: Vec<f64>,
}

impl IncrementStats {
    pub fn from_increments(incs: &[Increment]) -> Result<Self> {
        if incs.is_empty() {
            return Err(insufficient("no regeneration increments"));
        }
        let d = incs[0].displacement.len();
        let dur: Vec<f64> = incs.iter().map(|i| i.duration as f64).collect();
        let sup: Vec<f64> = incs.iter().map(|i| i.slab_sup as f64).collect();
        let mut dm = Vec::with_capacity(d);
        let mut dv = Vec::with_capacity(d);
        for c in 0..d {
            let col: Vec<f64> = incs.iter().map(|i| i.displacement[c] as f64).collect();
            dm.push(numeric::mean(&col));
            dv.push(numeric::variance(&col));
        }
        let mean_dur = numeric::mean(&dur);
        Ok(IncrementStats {
            count: incs.len(),
            duration: TailSummary::of(&dur),
            velocity: dm.iter().map(|m| m / mean_dur).collect(),
            displacement_mean: dm,
            displacement_variance: dv,
            duration_autocorrelation: (1..=5).map(|lag| numeric::autocorrelation(&dur, lag)).collect(),
            slab_sup: TailSummary::of(&sup),
        })
    }
}

/// Increment statistics over `k >= 1`; needs at least three confirmed records.
pub fn regeneration_increment_stats(records: &[RegenerationRecord], traj: &Trajectory) -> Result<IncrementStats> {
    let confirmed = records.iter().filter(|r| r.is_confirmed()).count();
    if confirmed < 3 {
        return Err(insufficient(format!("need at least 3 confirmed regenerations, found {confirmed}")));
    }
    IncrementStats::from_increments(&increments(records, traj))
}

/// Inter-walk displacement classes (sup norm) used by the Markov test.
pub const DISPLACEMENT_CLASSES: [(i64, i64); 6] = [(0, 0), (1, 1), (2, 2), (3, 4), (5, 8), (9, i64::MAX)];

/// Minimum sample size on each side before a class is compared.
pub const MIN_CLASS_SAMPLES: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassComparison {
    pub lo: i64,
    pub hi: i64,
    pub n_first: usize,
    pub n_second: usize,
    pub ks_distance: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovTestReport {
    pub k: usize,
    pub replicas_used: usize,
    pub replicas_skipped: usize,
    pub correlation: f64,
    /// `4 / sqrt(replicas_used)`.
    pub threshold: f64,
    pub independent: bool,
    pub classes: Vec<ClassComparison>,
}

/// Pre/post duration correlation at the interior joint level `k` plus
/// class-matched comparisons of the post-`L_k` and post-`L_{k+1}` durations.
pub fn markov_slab_test(
    pairs: &[TrajectoryPair],
    axis: usize,
    policy: &ConfirmationPolicy,
    k: usize,
) -> Result<MarkovTestReport> {
    if k < 1 {
        return Err(config("markov test level index must be >= 1"));
    }
    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut first: Vec<Vec<f64>> = vec![Vec::new(); DISPLACEMENT_CLASSES.len()];
    let mut second: Vec<Vec<f64>> = vec![Vec::new(); DISPLACEMENT_CLASSES.len()];
    let mut skipped = 0;
    for pair in pairs {
        let joint = detect_joint_regenerations(pair, axis, policy)?;
        // mu[0] = (0, 0); mu[i] = i-th joint record
        if joint.len() < k + 1 {
            skipped += 1;
            continue;
        }
        let mu1 = |i: usize| if i == 0 { 0 } else { joint[i - 1].mu1 };
        pre.push((mu1(k) - mu1(k - 1)) as f64);
        post.push((mu1(k + 1) - mu1(k)) as f64);
        let class = |i: usize| {
            let r = &joint[i - 1];
            let dx = pair
                .first
                .position(r.mu1)
                .iter()
                .zip(pair.second.position(r.mu2))
                .map(|(a, b)| (a - b).abs())
                .max()
                .unwrap_or(0);
            DISPLACEMENT_CLASSES.iter().position(|&(lo, hi)| dx >= lo && dx <= hi).expect("classes cover")
        };
        first[class(k)].push((mu1(k + 1) - mu1(k)) as f64);
        if joint.len() >= k + 2 {
            second[class(k + 1)].push((mu1(k + 2) - mu1(k + 1)) as f64);
        }
    }
    if pre.len() < 100 {
        return Err(insufficient(format!(
            "markov test needs 100 pairs with {} joint levels, found {}",
            k + 1,
            pre.len()
        )));
    }
    let correlation = numeric::pearson(&pre, &post);
    let threshold = 4.0 / (pre.len() as f64).sqrt();
    let classes = DISPLACEMENT_CLASSES
        .iter()
        .enumerate()
        .filter(|(c, _)| first[*c].len() >= MIN_CLASS_SAMPLES && second[*c].len() >= MIN_CLASS_SAMPLES)
        .map(|(c, &(lo, hi))| {
            let ks = numeric::ks_two_sample(&first[c], &second[c]);
            ClassComparison {
                lo,
                hi,
                n_first: first[c].len(),
                n_second: second[c].len(),
                ks_distance: ks.statistic,
                p_value: ks.p_value,
            }
        })
        .collect();
    Ok(MarkovTestReport {
        k,
        replicas_used: pre.len(),
        replicas_skipped: skipped,
        correlation,
        threshold,
        independent: correlation.abs() < threshold,
        classes,
    })
}

/// Writes `k,time,level,x_1..x_d,status`.
pub fn write_regen_csv<W: Write>(mut w: W, records: &[RegenerationRecord], dim: usize, digest: &str) -> Result<()> {
    writeln!(w, "# manifest_digest={digest}")?;
    write!(w, "k,time,level")?;
    for i in 1..=dim {
        write!(w, ",x_{i}")?;
    }
    writeln!(w, ",status")?;
    for (k, r) in records.iter().enumerate() {
        write!(w, "{},{},{}", k + 1, r.time, r.level)?;
        for c in r.position.coords() {
            write!(w, ",{c}")?;
        }
        writeln!(w, ",{}", if r.is_confirmed() { "confirmed" } else { "censored" })?;
    }
    Ok(())
}

/// Writes `k,mu1,mu2,level,dx_1..dx_d` with `dx = X^(1)_{mu1} − X^(2)_{mu2}`.
pub fn write_joint_csv<W: Write>(mut w: W, records: &[JointRegenRecord], pair: &TrajectoryPair, digest: &str) -> Result<()> {
    let dim = pair.first.dim();
    writeln!(w, "# manifest_digest={digest}")?;
    write!(w, "k,mu1,mu2,level")?;
    for i in 1..=dim {
        write!(w, ",dx_{i}")?;
    }
    writeln!(w)?;
    for (k, r) in records.iter().enumerate() {
        write!(w, "{},{},{},{}", k + 1, r.mu1, r.mu2, r.level)?;
        for (a, b) in pair.first.position(r.mu1).iter().zip(pair.second.position(r.mu2)) {
            write!(w, ",{}", a - b)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
