//! Rescaled polygonal paths, test functionals and the site surgery.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::LatticePoint;
use crate::error::{config, Error, Result};
use crate::walk::Trajectory;

/// Slack used when comparing the surgery distance with its bound.
pub const SURGERY_TOL: f64 = 1e-9;

/// Polygonal path on `[0, 1]` with knots at `k / n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPath {
    n: usize,
    dim: usize,
    knots: Vec<f64>,
    pub anchor_time: usize,
}

impl ScaledPath {
    /// Builds a path from `n + 1` knots of equal dimension.
    pub fn from_knots(knots: &[Vec<f64>], anchor_time: usize) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Input("a scaled path needs at least two knots".into()));
        }
        let dim = knots[0].len();
        if knots.iter().any(|k| k.len() != dim) {
            return Err(Error::Input("knots have mixed dimensions".into()));
        }
        Ok(ScaledPath {
            n: knots.len() - 1,
            dim,
            knots: knots.concat(),
            anchor_time,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn knot(&self, k: usize) -> &[f64] {
        &self.knots[k * self.dim..(k + 1) * self.dim]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.knot(self.n)
    }

    /// Linear interpolation at `t ∈ [0, 1]` (clamped).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let x = t.clamp(0.0, 1.0) * self.n as f64;
        let k = (x.floor() as usize).min(self.n - 1);
        let frac = x - k as f64;
        let (a, b) = (self.knot(k), self.knot(k + 1));
        a.iter().zip(b).map(|(p, q)| p + (q - p) * frac).collect()
    }

    /// `sup_t |w(t)|`, attained at a knot.
    pub fn sup_norm(&self) -> f64 {
        (0..=self.n).map(|k| euclid(self.knot(k))).fold(0.0, f64::max)
    }

    /// `sup_t |w(t) − w'(t)|`, evaluated on the union of both knot grids.
    pub fn sup_distance(&self, other: &ScaledPath) -> f64 {
        assert_eq!(self.dim, other.dim, "paths of different dimension");
        if self.n == other.n {
            return (0..=self.n)
                .map(|k| {
                    let d: Vec<f64> = self.knot(k).iter().zip(other.knot(k)).map(|(a, b)| a - b).collect();
                    euclid(&d)
                })
                .fold(0.0, f64::max);
        }
        let mut grid: Vec<f64> = (0..=self.n)
            .map(|k| k as f64 / self.n as f64)
            .chain((0..=other.n).map(|k| k as f64 / other.n as f64))
            .collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid.iter()
            .map(|&t| {
                let d: Vec<f64> = self.eval(t).iter().zip(other.eval(t)).map(|(a, b)| a - b).collect();
                euclid(&d)
            })
            .fold(0.0, f64::max)
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `W(k/n) = (X_{anchor+k} − X_anchor − v0 k) / sqrt(n)`, `k = 0..n`.
pub fn scaled_process(traj: &Trajectory, n: usize, v0: &[f64], anchor: usize) -> Result<ScaledPath> {
    if n == 0 {
        return Err(config("scale n must be positive"));
    }
    if v0.len() != traj.dim() {
        return Err(config("velocity dimension does not match the trajectory"));
    }
    if anchor + n > traj.horizon() {
        return Err(Error::Input(format!(
            "horizon {} too short for anchor {anchor} and n = {n}",
            traj.horizon()
        )));
    }
    Ok(scale_positions(n, traj.dim(), |k| traj.position(anchor + k), v0, anchor))
}

fn scale_positions<'a, F: Fn(usize) -> &'a [i64]>(n: usize, dim: usize, pos: F, v0: &[f64], anchor: usize) -> ScaledPath {
    let root = (n as f64).sqrt();
    let base = pos(0);
    let mut knots = Vec::with_capacity((n + 1) * dim);
    for k in 0..=n {
        let p = pos(k);
        for i in 0..dim {
            knots.push(((p[i] - base[i]) as f64 - v0[i] * k as f64) / root);
        }
    }
    ScaledPath { n, dim, knots, anchor_time: anchor }
}

/// Bounded 1-Lipschitz functionals on the uniform-norm path space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    /// `clamp(w(1)_coord, ±clip) / max(1, clip)`.
    EndpointCoord {
        coord: usize,
        #[serde(default = "one")]
        clip: f64,
    },
    /// `min(sup_t |w(t)|, 1)`.
    SupNormClipped,
    /// `clamp(b (w(1)·a), ±1) / max(1, |b| |a|)`.
    SmoothedHalfspace { a: Vec<f64>, b: f64 },
}

fn one() -> f64 {
    1.0
}

impl Functional {
    pub fn name(&self) -> &'static str {
        match self {
            Functional::EndpointCoord { .. } => "endpoint_coord",
            Functional::SupNormClipped => "sup_norm_clipped",
            Functional::SmoothedHalfspace { .. } => "smoothed_halfspace",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Functional::EndpointCoord { coord, clip } => {
                if *coord >= dim {
                    return Err(config(format!("functional coordinate {coord} out of range for dimension {dim}")));
                }
                if !(*clip > 0.0) {
                    return Err(config("functional clip must be positive"));
                }
            }
            Functional::SupNormClipped => {}
            Functional::SmoothedHalfspace { a, b } => {
                if a.len() != dim {
                    return Err(config("halfspace direction has the wrong dimension"));
                }
                if !b.is_finite() || a.iter().any(|x| !x.is_finite()) {
                    return Err(config("halfspace parameters must be finite"));
                }
            }
        }
        Ok(())
    }
}

pub fn evaluate_functional(f: &Functional, p: &ScaledPath) -> f64 {
    match f {
        Functional::EndpointCoord { coord, clip } => p.endpoint()[*coord].clamp(-clip, *clip) / clip.max(1.0),
        Functional::SupNormClipped => p.sup_norm().min(1.0),
        Functional::SmoothedHalfspace { a, b } => {
            let dot: f64 = p.endpoint().iter().zip(a).map(|(x, y)| x * y).sum();
            (b * dot).clamp(-1.0, 1.0) / (b.abs() * euclid(a)).max(1.0)
        }
    }
}

/// `π1 ∘ π2`: follows `p1` up to its end, then `p1(m) + p2(s − m)`.
pub fn concatenate(p1: &[LatticePoint], p2: &[LatticePoint]) -> Vec<LatticePoint> {
    if p2.is_empty() {
        return p1.to_vec();
    }
    let Some(last) = p1.last() else {
        return p2.to_vec();
    };
    let mut out = Vec::with_capacity(p1.len() + p2.len() - 1);
    out.extend_from_slice(&p1[..p1.len() - 1]);
    for q in p2 {
        out.push(LatticePoint::new(last.coords().iter().zip(q.coords()).map(|(a, b)| a + b).collect()));
    }
    out
}

/// Stopping times of the surgery at a site `z`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SurgeryMeta {
    /// First time the level reaches `z`'s level.
    pub tau_minus: Option<usize>,
    /// First confirmed regeneration strictly above `z`'s level.
    pub tau_plus: Option<usize>,
    /// First fresh maximum in `[1, tau_minus]` without return up to `tau_minus`.
    pub tau_bullet: Option<usize>,
    pub censored: bool,
}

/// Computes the surgery times and, unless censored, the glued path anchored
/// at `tau_bullet`.
pub fn glue_at_site(
    traj: &Trajectory,
    confirmed: &[usize],
    z: &LatticePoint,
    n: usize,
    axis: usize,
) -> Result<(Option<ScaledPath>, SurgeryMeta)> {
    check_site(traj, z, axis)?;
    let h = traj.horizon();
    let lz = z.coords()[axis];
    let mut meta = SurgeryMeta::default();
    let Some(tm) = (0..=h).find(|&t| traj.level(t, axis) >= lz) else {
        meta.censored = true;
        return Ok((None, meta));
    };
    meta.tau_minus = Some(tm);
    meta.tau_bullet = Some(tau_bullet(traj, tm, axis));
    meta.tau_plus = confirmed.iter().copied().find(|&t| traj.level(t, axis) > lz);
    let (Some(tp), Some(tb)) = (meta.tau_plus, meta.tau_bullet) else {
        meta.censored = true;
        return Ok((None, meta));
    };
    // glued time s maps to s for s <= tm and to tp + (s − tm) afterwards
    let end = tb + n;
    if end > tm && tp + (end - tm) > h {
        meta.censored = true;
        return Ok((None, meta));
    }
    let d = traj.dim();
    let shift: Vec<i64> = (0..d).map(|i| traj.position(tm)[i] - traj.position(tp)[i]).collect();
    let glued = |s: usize| -> Vec<i64> {
        if s <= tm {
            traj.position(s).to_vec()
        } else {
            traj.position(tp + s - tm).iter().zip(&shift).map(|(x, c)| x + c).collect()
        }
    };
    let pts: Vec<Vec<i64>> = (tb..=end).map(glued).collect();
    let zero = vec![0.0; d];
    let path = scale_positions(n, d, |k| &pts[k], &zero, tb);
    Ok((Some(path), meta))
}

fn tau_bullet(traj: &Trajectory, tm: usize, axis: usize) -> usize {
    if tm == 0 {
        return 0;
    }
    // suffix minimum of levels over (k, tm]
    let mut suffix = vec![i64::MAX; tm + 2];
    for t in (1..=tm).rev() {
        suffix[t] = suffix[t + 1].min(traj.level(t, axis));
    }
    let mut running = traj.level(0, axis);
    for k in 1..=tm {
        let lk = traj.level(k, axis);
        if lk > running && suffix[k + 1] > lk {
            return k;
        }
        running = running.max(lk);
    }
    tm
}

fn check_site(traj: &Trajectory, z: &LatticePoint, axis: usize) -> Result<()> {
    if traj.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    if z.dim() != traj.dim() {
        return Err(config("site dimension does not match the trajectory"));
    }
    if axis >= traj.dim() {
        return Err(config(format!("axis {axis} out of range")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurgeryReport {
    pub env_seed: u64,
    pub walk_seed: u64,
    pub z: LatticePoint,
    pub n: usize,
    pub hit: bool,
    /// Index `j` of the regeneration slab `[τ_{j−1}, τ_j)` containing the first visit to `z`.
    pub j_star: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Twice the displayed bound, which is what the triangle inequality yields.
    pub corrected_rhs: f64,
    pub holds_corrected: bool,
    pub censored: bool,
    pub meta: SurgeryMeta,
}

/// Compares `sup |W − W̃|` with the pathwise surgery bound at `z`.
///
/// `W` is anchored at the first confirmed regeneration, `W̃` at `tau_bullet`.
pub fn surgery_bound_check(
    traj: &Trajectory,
    confirmed: &[usize],
    z: &LatticePoint,
    n: usize,
    axis: usize,
    r0: f64,
) -> Result<SurgeryReport> {
    check_site(traj, z, axis)?;
    let mut rep = SurgeryReport {
        env_seed: traj.env_seed,
        walk_seed: traj.walk_seed,
        z: z.clone(),
        n,
        hit: false,
        j_star: None,
        lhs: f64::NAN,
        rhs: f64::NAN,
        holds: false,
        corrected_rhs: f64::NAN,
        holds_corrected: false,
        censored: false,
        meta: SurgeryMeta::default(),
    };
    let Some(first_visit) = (0..=traj.horizon()).find(|&t| traj.position(t) == z.coords()) else {
        return Ok(rep);
    };
    rep.hit = true;
    // slab j covers times [τ_{j−1}, τ_j − 1] with τ_0 = 0
    let j = 1 + confirmed.iter().take_while(|&&t| t <= first_visit).count();
    let (glued, meta) = glue_at_site(traj, confirmed, z, n, axis)?;
    rep.meta = meta;
    let (Some(glued), Some(&tau1)) = (glued, confirmed.first()) else {
        rep.censored = true;
        return Ok(rep);
    };
    if j > confirmed.len() || tau1 + n > traj.horizon() {
        rep.censored = true;
        return Ok(rep);
    }
    rep.j_star = Some(j);
    let zero = vec![0.0; traj.dim()];
    let w = scaled_process(traj, n, &zero, tau1)?;
    let root = (n as f64).sqrt();
    rep.lhs = w.sup_distance(&glued);
    rep.rhs = if j == 1 {
        let tm = rep.meta.tau_minus.expect("glued path has tau_minus");
        let tb = rep.meta.tau_bullet.expect("glued path has tau_bullet");
        r0 * (tm - tb) as f64 / root
    } else if j <= n + 1 {
        r0 * (confirmed[j - 1] - confirmed[j - 2]) as f64 / root
    } else {
        0.0
    };
    rep.corrected_rhs = 2.0 * rep.rhs;
    rep.holds = rep.lhs <= rep.rhs + SURGERY_TOL;
    rep.holds_corrected = rep.lhs <= rep.corrected_rhs + SURGERY_TOL;
    Ok(rep)
}

/// Writes the header of the surgery CSV.
pub fn write_surgery_header<W: Write>(mut w: W, dim: usize, digest: &str) -> Result<()> {
    writeln!(w, "# manifest_digest={digest}")?;
    write!(w, "env_seed,walk_seed")?;
    for i in 1..=dim {
        write!(w, ",z_{i}")?;
    }
    writeln!(w, ",n,hit,j_star,lhs,rhs,holds,censored,corrected_rhs,holds_corrected")?;
    Ok(())
}

/// Writes one report row; undefined values are left empty.
pub fn write_surgery_row<W: Write>(mut w: W, r: &SurgeryReport) -> Result<()> {
    write!(w, "{},{}", r.env_seed, r.walk_seed)?;
    for c in r.z.coords() {
        write!(w, ",{c}")?;
    }
    let decided = r.hit && !r.censored;
    let j = r.j_star.map(|j| j.to_string()).unwrap_or_default();
    if decided {
        writeln!(
            w,
            ",{},{},{j},{},{},{},{},{},{}",
            r.n, r.hit, r.lhs, r.rhs, r.holds, r.censored, r.corrected_rhs, r.holds_corrected
        )?;
    } else {
        writeln!(w, ",{},{},{j},,,,{},,", r.n, r.hit, r.censored)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regen::scan_levels;
    use proptest::prelude::*;

    fn traj(points: &[Vec<i64>]) -> Trajectory {
        Trajectory::from_points(points, 0, 0).unwrap()
    }

    fn straight(h: i64) -> Trajectory {
        traj(&(0..=h).map(|t| vec![t, 0]).collect::<Vec<_>>())
    }

    #[test]
    fn exact_centering_gives_the_zero_path() {
        let t = straight(20);
        let p = scaled_process(&t, 8, &[1.0, 0.0], 3).unwrap();
        assert!((0..=8).all(|k| p.knot(k) == [0.0, 0.0]));
        let raw = scaled_process(&t, 4, &[0.0, 0.0], 0).unwrap();
        assert_eq!(raw.endpoint(), &[2.0, 0.0]);
        assert!(scaled_process(&t, 18, &[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn interpolation_is_linear_between_knots() {
        let p = ScaledPath::from_knots(&[vec![0.0, 0.0], vec![2.0, -2.0]], 0).unwrap();
        assert_eq!(p.eval(0.25), vec![0.5, -0.5]);
        let q = ScaledPath::from_knots(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]], 0).unwrap();
        assert!((p.sup_distance(&q) - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn functionals_on_simple_paths() {
        let zero = ScaledPath::from_knots(&[vec![0.0, 0.0], vec![0.0, 0.0]], 0).unwrap();
        let e = Functional::EndpointCoord { coord: 1, clip: 1.0 };
        assert_eq!(evaluate_functional(&e, &zero), 0.0);
        let big = ScaledPath::from_knots(&[vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 0.0]], 0).unwrap();
        assert_eq!(evaluate_functional(&Functional::SupNormClipped, &big), 1.0);
    }

    #[test]
    fn concatenation_identities_and_hand_example() {
        let lp = |v: &[i64]| LatticePoint::new(v.to_vec());
        let p1 = vec![lp(&[0, 0]), lp(&[1, 0]), lp(&[1, 1]), lp(&[2, 1])];
        let p2 = vec![lp(&[0, 0]), lp(&[0, -1]), lp(&[1, -1]), lp(&[1, -2])];
        assert_eq!(concatenate(&p1, &[]), p1);
        assert_eq!(concatenate(&[lp(&[0, 0])], &p2), p2);
        let c = concatenate(&p1, &p2);
        let want = [[0, 0], [1, 0], [1, 1], [2, 1], [2, 0], [3, 0], [3, -1]];
        assert_eq!(c.len(), 7);
        for (a, b) in c.iter().zip(want) {
            assert_eq!(a.coords(), &b);
        }
    }

    #[test]
    fn straight_walk_surgery_removes_one_step() {
        let t = straight(30);
        let conf = scan_levels(&t.levels(0), 3).confirmed;
        let z = LatticePoint::new(vec![5, 0]);
        let (p, meta) = glue_at_site(&t, &conf, &z, 4, 0).unwrap();
        assert_eq!(meta.tau_minus, Some(5));
        assert_eq!(meta.tau_plus, Some(6));
        assert_eq!(meta.tau_bullet, Some(1));
        assert!(p.is_some());
        let r = surgery_bound_check(&t, &conf, &z, 4, 0, 1.0).unwrap();
        assert!(r.hit && !r.censored);
        assert_eq!(r.j_star, Some(6));
        assert!(r.lhs <= 1.0 / 2.0 + 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn unvisited_site_skips_the_check() {
        let t = straight(30);
        let conf = scan_levels(&t.levels(0), 3).confirmed;
        let r = surgery_bound_check(&t, &conf, &LatticePoint::new(vec![3, 1]), 4, 0, 1.0).unwrap();
        assert!(!r.hit);
        let (_, meta) = glue_at_site(&t, &conf, &LatticePoint::new(vec![-2, 5]), 4, 0).unwrap();
        assert_eq!(meta.tau_minus, Some(0));
        assert_eq!(meta.tau_bullet, Some(0));
    }

    #[test]
    fn unit_slab_and_a_later_sideways_step_exceeds_the_displayed_bound() {
        // z is visited at τ_1, the slab [τ_1, τ_2) has length one and a later
        // step is sideways, so |W − W̃| picks up |e1 − e2| = sqrt(2) units.
        let pts = vec![vec![0, 0], vec![1, 0], vec![2, 0], vec![3, 0], vec![3, 1], vec![4, 1], vec![5, 1], vec![6, 1], vec![7, 1], vec![8, 1]];
        let t = traj(&pts);
        let conf = scan_levels(&t.levels(0), 1).confirmed;
        assert_eq!(&conf[..3], &[1, 2, 5]);
        let r = surgery_bound_check(&t, &conf, &LatticePoint::new(vec![1, 0]), 4, 0, 1.0).unwrap();
        assert_eq!(r.j_star, Some(2));
        assert!((r.rhs - 0.5).abs() < 1e-12);
        assert!((r.lhs - 2f64.sqrt() / 2.0).abs() < 1e-12);
        assert!(!r.holds);
        assert!(r.holds_corrected);
    }

    #[test]
    fn surgery_csv_row() {
        let t = straight(30);
        let conf = scan_levels(&t.levels(0), 3).confirmed;
        let r = surgery_bound_check(&t, &conf, &LatticePoint::new(vec![5, 0]), 4, 0, 1.0).unwrap();
        let mut buf = Vec::new();
        write_surgery_header(&mut buf, 2, "x").unwrap();
        write_surgery_row(&mut buf, &r).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[1], "env_seed,walk_seed,z_1,z_2,n,hit,j_star,lhs,rhs,holds,censored,corrected_rhs,holds_corrected");
        assert!(lines[2].starts_with("0,0,5,0,4,true,6,"));
        assert!(lines[2].contains(",true,false,"), "{}", lines[2]);
        assert!(lines[2].ends_with(",true"));
    }

    fn lattice_path(max_len: usize) -> impl Strategy<Value = Vec<LatticePoint>> {
        prop::collection::vec((-2i64..3, -2i64..3), 0..max_len)
            .prop_map(|v| v.into_iter().map(|(a, b)| LatticePoint::new(vec![a, b])).collect())
    }

    proptest! {
        #[test]
        fn concatenation_is_associative(a in lattice_path(6), b in lattice_path(6), c in lattice_path(6)) {
            prop_assert_eq!(concatenate(&concatenate(&a, &b), &c), concatenate(&a, &concatenate(&b, &c)));
        }

        #[test]
        fn functionals_are_bounded_and_lipschitz(
            xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -0.5f64..0.5, -0.5f64..0.5), 2..10),
            b in -4.0f64..4.0,
        ) {
            let p = ScaledPath::from_knots(&xs.iter().map(|x| vec![x.0, x.1]).collect::<Vec<_>>(), 0).unwrap();
            let q = ScaledPath::from_knots(&xs.iter().map(|x| vec![x.0 + x.2, x.1 + x.3]).collect::<Vec<_>>(), 0).unwrap();
            let dist = p.sup_distance(&q);
            for f in [
                Functional::EndpointCoord { coord: 0, clip: 1.0 },
                Functional::EndpointCoord { coord: 1, clip: 2.5 },
                Functional::SupNormClipped,
                Functional::SmoothedHalfspace { a: vec![0.6, -0.8], b },
            ] {
                let (fp, fq) = (evaluate_functional(&f, &p), evaluate_functional(&f, &q));
                prop_assert!(fp.abs() <= 1.0 && fq.abs() <= 1.0);
                prop_assert!((fp - fq).abs() <= dist + 1e-12);
            }
        }
    }
}
