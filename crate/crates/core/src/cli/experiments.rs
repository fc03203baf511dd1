use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{
    CltParams, Experiment, FirstSlabParams, IntersectionParams, JointRegenParams, RegenParams, RunConfig,
    SimulateParams, SurgeryParams, VarianceDecayParams, VelocityParams,
};
use super::manifest::OutputSet;
use crate::env::{EnvironmentHandle, EnvironmentModel, LatticePoint};
use crate::error::{Error, Result};
use crate::numeric::{self, KsResult};
use crate::paths::{surgery_bound_check, write_surgery_header, write_surgery_row};
use crate::prf::{SeedSchedule, StreamRng};
use crate::regen::{
    detect_joint_regenerations, detect_regenerations, increments_from_times, markov_slab_test, scan_levels,
    write_joint_csv, write_regen_csv, IncrementStats, MarkovTestReport,
};
use crate::stats::{
    collect_increments, conditioned_first_slab_moment, decorrelation_curve, estimate_annealed_covariance,
    estimate_v0, fit_decay_exponent, fit_growth_exponent, intersection_stats, quenched_clt_distance,
    variance_decay, IntersectionConfig, IntersectionStats, VarianceDecayConfig,
};
use crate::walk::{simulate_pair, simulate_walk, TrajectoryPair};

/// Non-fatal shortfall of a run whose main outputs were written.
pub type Partial = Option<Error>;

/// Runs the configured experiment, writing its outputs into `out`.
pub fn execute(cfg: &RunConfig, out: &mut OutputSet) -> Result<Partial> {
    let model = Arc::new(EnvironmentModel::new(cfg.model.clone())?);
    crate::env::validate_model(&model, 1000, cfg.master_seed)?.check_assumptions(model.axis())?;
    let schedule = SeedSchedule::new(cfg.master_seed);
    let ctx = Ctx { cfg, model, schedule };
    match &cfg.experiment {
        Experiment::Simulate(p) => ctx.simulate(p, out),
        Experiment::Regen(p) => ctx.regen(p, out),
        Experiment::Jointregen(p) => ctx.jointregen(p, out),
        Experiment::VarianceDecay(p) => ctx.variance_decay(p, out),
        Experiment::Intersections(p) => ctx.intersections(p, out, false),
        Experiment::Decorrelation(p) => ctx.intersections(p, out, true),
        Experiment::Clt(p) => ctx.clt(p, out),
        Experiment::SurgeryCheck(p) => ctx.surgery(p, out),
        Experiment::FirstSlab(p) => ctx.first_slab(p, out),
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    model: Arc<EnvironmentModel>,
    schedule: SeedSchedule,
}

#[derive(Serialize)]
struct FitFailure {
    error: String,
}

#[derive(Serialize)]
struct RegenSummary {
    replicas: usize,
    mean_confirmed: f64,
    mean_censored: f64,
    /// Pooled increments with `k >= 1`.
    increments: Option<IncrementStats>,
    /// First regeneration time against the following increment, one pair per replica.
    first_vs_later: Option<KsResult>,
    mean_first: f64,
    mean_later: f64,
}

#[derive(Serialize)]
struct JointSummary {
    replicas: usize,
    mean_joint_levels: f64,
    mean_single_regenerations: f64,
    /// Joint levels per single-walk regeneration.
    joint_fraction: f64,
    markov: Option<MarkovTestReport>,
    markov_skipped: Option<String>,
}

#[derive(Serialize)]
struct Annealed {
    v0: Vec<f64>,
    sigma: Option<Vec<Vec<f64>>>,
    increments: Option<usize>,
}

#[derive(Serialize)]
struct CltEnvironment {
    environment: u64,
    env_seed: u64,
    reports: Vec<crate::stats::CltReport>,
    /// Every coordinate's KS distance at the last `n` is at most the one at the first.
    non_increasing: bool,
    max_ks_non_increasing: bool,
}

#[derive(Serialize)]
struct CltSummary {
    v0: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    n_grid: Vec<usize>,
    environments: Vec<CltEnvironment>,
    non_increasing_count: usize,
}

#[derive(Serialize, Default)]
struct SurgerySummary {
    samples: usize,
    hits: usize,
    censored: usize,
    decided: usize,
    holds: usize,
    holds_corrected: usize,
    max_ratio: f64,
}

impl Ctx<'_> {
    fn origin(&self) -> LatticePoint {
        LatticePoint::origin(self.model.dimension())
    }

    fn handle(&self, k: u64) -> EnvironmentHandle {
        EnvironmentHandle::new(self.model.clone(), self.schedule.env(k))
    }

    fn velocity(&self, p: &VelocityParams) -> Result<Vec<f64>> {
        let s = self.schedule.child("velocity");
        Ok(estimate_v0(&self.model, &s, p.horizon, p.replicas, self.cfg.policy.margin)?.v0)
    }

    fn simulate(&self, p: &SimulateParams, out: &mut OutputSet) -> Result<Partial> {
        let start = p.start.clone().map(LatticePoint::new).unwrap_or_else(|| self.origin());
        let trajs: Vec<_> = (0..p.replicas as u64)
            .into_par_iter()
            .map(|k| simulate_walk(&self.handle(k), &start, p.horizon, self.schedule.walk(k, 0)))
            .collect::<Result<_>>()?;
        let digest = out.digest().to_string();
        for (k, t) in trajs.iter().enumerate() {
            out.write(&format!("trajectory_{k:04}.csv"), |b| t.write_csv(b, &digest))?;
        }
        Ok(None)
    }

    fn regen(&self, p: &RegenParams, out: &mut OutputSet) -> Result<Partial> {
        let axis = self.model.axis();
        let policy = self.cfg.policy;
        let dim = self.model.dimension();
        let digest = out.digest().to_string();
        let per: Vec<_> = (0..p.replicas as u64)
            .into_par_iter()
            .map(|k| -> Result<_> {
                let t = simulate_walk(&self.handle(k), &self.origin(), p.horizon, self.schedule.walk(k, 0))?;
                let recs = detect_regenerations(&t, axis, &policy)?;
                let times = scan_levels(&t.levels(axis), policy.margin).confirmed;
                let censored = scan_levels(&t.levels(axis), policy.margin).censored.len();
                let incs = increments_from_times(&times, &t);
                let first = (times.len() >= 2).then(|| (times[0] as f64, (times[1] - times[0]) as f64));
                let mut csv = Vec::new();
                if (k as usize) < p.dump {
                    write_regen_csv(&mut csv, &recs, dim, &digest)?;
                }
                Ok((times.len(), censored, incs, first, csv))
            })
            .collect::<Result<_>>()?;
        for (k, r) in per.iter().enumerate().take(p.dump) {
            out.write(&format!("regen_{k:04}.csv"), |b| {
                b.extend_from_slice(&r.4);
                Ok(())
            })?;
        }
        let incs: Vec<_> = per.iter().flat_map(|r| r.2.iter().cloned()).collect();
        let firsts: Vec<f64> = per.iter().filter_map(|r| r.3.map(|x| x.0)).collect();
        let laters: Vec<f64> = per.iter().filter_map(|r| r.3.map(|x| x.1)).collect();
        let increments = IncrementStats::from_increments(&incs);
        let partial = increments.as_ref().err().map(|e| Error::InsufficientData(e.to_string()));
        let summary = RegenSummary {
            replicas: p.replicas,
            mean_confirmed: numeric::mean(&per.iter().map(|r| r.0 as f64).collect::<Vec<_>>()),
            mean_censored: numeric::mean(&per.iter().map(|r| r.1 as f64).collect::<Vec<_>>()),
            increments: increments.ok(),
            first_vs_later: (firsts.len() >= 2).then(|| numeric::ks_two_sample(&firsts, &laters)),
            mean_first: numeric::mean(&firsts),
            mean_later: numeric::mean(&laters),
        };
        out.write_json("regen_summary.json", &summary)?;
        Ok(partial)
    }

    fn jointregen(&self, p: &JointRegenParams, out: &mut OutputSet) -> Result<Partial> {
        let axis = self.model.axis();
        let policy = self.cfg.policy;
        let start2 = p.start2.clone().map(LatticePoint::new).unwrap_or_else(|| self.origin());
        let pairs: Vec<TrajectoryPair> = (0..p.replicas as u64)
            .into_par_iter()
            .map(|k| {
                let (s1, s2) = (self.schedule.walk(k, 0), self.schedule.walk(k, 1));
                simulate_pair(&self.handle(k), &self.origin(), &start2, p.horizon, s1, s2)
            })
            .collect::<Result<_>>()?;
        let counts: Vec<(f64, f64)> = pairs
            .par_iter()
            .map(|pair| -> Result<(f64, f64)> {
                let joint = detect_joint_regenerations(pair, axis, &policy)?.len() as f64;
                let single = |t| scan_levels(&crate::walk::Trajectory::levels(t, axis), policy.margin).confirmed.len();
                Ok((joint, 0.5 * (single(&pair.first) + single(&pair.second)) as f64))
            })
            .collect::<Result<_>>()?;
        let digest = out.digest().to_string();
        for (k, pair) in pairs.iter().enumerate().take(p.dump) {
            let recs = detect_joint_regenerations(pair, axis, &policy)?;
            out.write(&format!("joint_{k:04}.csv"), |b| write_joint_csv(b, &recs, pair, &digest))?;
        }
        let (markov, markov_skipped) = match markov_slab_test(&pairs, axis, &policy, p.markov_k) {
            Ok(r) => (Some(r), None),
            Err(Error::InsufficientData(m)) => (None, Some(m)),
            Err(e) => return Err(e),
        };
        let joint: f64 = counts.iter().map(|c| c.0).sum();
        let single: f64 = counts.iter().map(|c| c.1).sum();
        let summary = JointSummary {
            replicas: p.replicas,
            mean_joint_levels: joint / p.replicas as f64,
            mean_single_regenerations: single / p.replicas as f64,
            joint_fraction: if single > 0.0 { joint / single } else { 0.0 },
            markov,
            markov_skipped,
        };
        out.write_json("jointregen_summary.json", &summary)?;
        Ok(None)
    }

    fn variance_decay(&self, p: &VarianceDecayParams, out: &mut OutputSet) -> Result<Partial> {
        let v0 = match &p.v0 {
            Some(v) => v.clone(),
            None => {
                let v = self.velocity(&p.velocity)?;
                out.write_json("velocity.json", &Annealed { v0: v.clone(), sigma: None, increments: None })?;
                v
            }
        };
        let vd = VarianceDecayConfig {
            n_grid: p.n_grid.clone(),
            outer: p.outer,
            inner: p.inner,
            horizon: self.cfg.horizon_for(p.horizon, *p.n_grid.last().expect("validated grid")),
            margin: self.cfg.policy.margin,
            v0,
            functional: p.functional.clone(),
        };
        let res = variance_decay(&self.model, &vd, &self.schedule)?;
        let digest = out.digest().to_string();
        out.write("variance_decay.csv", |b| res.write_csv(b, &digest))?;
        match fit_decay_exponent(&res, &mut self.schedule.stream("decay-fit")) {
            Ok(fit) => {
                out.write_json("fit.json", &fit)?;
                Ok(None)
            }
            Err(e) => {
                out.write_json("fit.json", &FitFailure { error: e.to_string() })?;
                Ok(Some(e))
            }
        }
    }

    fn intersections(&self, p: &IntersectionParams, out: &mut OutputSet, curve: bool) -> Result<Partial> {
        let mut all: Vec<IntersectionStats> = Vec::with_capacity(p.n_grid.len());
        for &n in &p.n_grid {
            let ic = IntersectionConfig {
                n,
                eps: p.eps,
                g_exponent: p.g_exponent,
                replicas: p.replicas,
                horizon: p.horizon_factor * n,
                max_horizon: p.max_horizon_factor * n,
                margin: self.cfg.policy.margin,
            };
            all.push(intersection_stats(&self.model, &ic, &self.schedule)?);
        }
        let digest = out.digest().to_string();
        out.write("intersections.csv", |b| IntersectionStats::write_csv(&all, b, &digest))?;
        out.write_json("intersection_stats.json", &all)?;
        let (name, result) = if curve {
            ("decorrelation.json", decorrelation_curve(&all).and_then(|c| Ok(serde_json::to_value(c)?)))
        } else {
            let fit = fit_growth_exponent(&all, 0.9, &mut self.schedule.stream("growth-fit"));
            ("growth_fit.json", fit.and_then(|f| Ok(serde_json::to_value(f)?)))
        };
        match result {
            Ok(v) => {
                out.write_json(name, &v)?;
                Ok(None)
            }
            Err(e) => {
                out.write_json(name, &FitFailure { error: e.to_string() })?;
                Ok(Some(e))
            }
        }
    }

    fn clt(&self, p: &CltParams, out: &mut OutputSet) -> Result<Partial> {
        let margin = self.cfg.policy.margin;
        let v0 = match &p.v0 {
            Some(v) => v.clone(),
            None => self.velocity(&p.velocity)?,
        };
        let (sigma, used) = match &p.sigma {
            Some(s) => (s.clone(), None),
            None => {
                let s = self.schedule.child("covariance");
                let incs = collect_increments(&self.model, &s, p.velocity.horizon, p.velocity.replicas, margin)?;
                let c = estimate_annealed_covariance(&incs, &v0)?;
                (c.matrix, Some(c.increments))
            }
        };
        out.write_json("annealed.json", &Annealed { v0: v0.clone(), sigma: Some(sigma.clone()), increments: used })?;
        let horizon = self.cfg.horizon_for(p.horizon, *p.n_grid.last().expect("validated grid"));
        let clt = self.schedule.child("clt");
        let mut envs = Vec::with_capacity(p.environments);
        for e in 0..p.environments as u64 {
            let h = EnvironmentHandle::new(self.model.clone(), clt.env(e));
            let seeds: Vec<u64> = (0..p.walks as u64).map(|m| clt.walk(e, m)).collect();
            let reports = quenched_clt_distance(&h, &p.n_grid, &seeds, &sigma, &v0, horizon, margin, p.centering)?;
            let (first, last) = (&reports[0], reports.last().unwrap());
            let non_increasing = !first.ks.is_empty()
                && first.ks.len() == last.ks.len()
                && first.ks.iter().zip(&last.ks).all(|(a, b)| b.statistic <= a.statistic);
            let max_ks_non_increasing = last.max_ks <= first.max_ks;
            envs.push(CltEnvironment {
                environment: e,
                env_seed: clt.env(e),
                reports,
                non_increasing,
                max_ks_non_increasing,
            });
        }
        let digest = out.digest().to_string();
        let d = self.model.dimension();
        out.write("clt.csv", |b| {
            writeln!(b, "# manifest_digest={digest}")?;
            write!(b, "environment,n,walks,censored")?;
            for i in 1..=d {
                write!(b, ",ks_{i}")?;
            }
            writeln!(b, ",max_ks,energy_distance")?;
            for env in &envs {
                for r in &env.reports {
                    write!(b, "{},{},{},{}", env.environment, r.n, r.walks, r.censored)?;
                    for i in 0..d {
                        match r.ks.get(i) {
                            Some(k) => write!(b, ",{}", k.statistic)?,
                            None => write!(b, ",")?,
                        }
                    }
                    writeln!(b, ",{},{}", r.max_ks, r.energy_distance)?;
                }
            }
            Ok(())
        })?;
        let summary = CltSummary {
            non_increasing_count: envs.iter().filter(|e| e.non_increasing).count(),
            v0,
            sigma,
            n_grid: p.n_grid.clone(),
            environments: envs,
        };
        out.write_json("clt.json", &summary)?;
        Ok(None)
    }

    fn surgery(&self, p: &SurgeryParams, out: &mut OutputSet) -> Result<Partial> {
        let axis = self.model.axis();
        let margin = self.cfg.policy.margin;
        let horizon = self.cfg.horizon_for(p.horizon, p.n);
        let jumps = self.model.jumps().clone();
        let sites = self.schedule.child("surgery-site");
        let reports: Vec<_> = (0..p.samples as u64)
            .into_par_iter()
            .map(|k| {
                let t = simulate_walk(&self.handle(k), &self.origin(), horizon, self.schedule.walk(k, 0))?;
                let confirmed = scan_levels(&t.levels(axis), margin).confirmed;
                // a site on the path, or a neighbour of one half of the time
                let mut rng = StreamRng::new(sites.env(k));
                let u = ((rng.next_unit() * (p.n + 1) as f64) as usize).min(p.n);
                let mut z = t.position(u).to_vec();
                if rng.next_unit() < 0.5 {
                    let j = ((rng.next_unit() * jumps.len() as f64) as usize).min(jumps.len() - 1);
                    z.iter_mut().zip(jumps.offset(j)).for_each(|(a, b)| *a += b);
                }
                surgery_bound_check(&t, &confirmed, &LatticePoint::new(z), p.n, axis, self.model.r0())
            })
            .collect::<Result<_>>()?;
        let digest = out.digest().to_string();
        let d = self.model.dimension();
        out.write("surgery.csv", |b| {
            write_surgery_header(&mut *b, d, &digest)?;
            reports.iter().try_for_each(|r| write_surgery_row(&mut *b, r))
        })?;
        let mut s = SurgerySummary { samples: reports.len(), ..Default::default() };
        for r in &reports {
            s.hits += r.hit as usize;
            s.censored += (r.hit && r.censored) as usize;
            if r.hit && !r.censored {
                s.decided += 1;
                s.holds += r.holds as usize;
                s.holds_corrected += r.holds_corrected as usize;
                if r.rhs > 0.0 {
                    s.max_ratio = s.max_ratio.max(r.lhs / r.rhs);
                } else if r.lhs > 0.0 {
                    s.max_ratio = f64::INFINITY;
                }
            }
        }
        out.write_json("surgery_summary.json", &s)?;
        Ok(None)
    }

    fn first_slab(&self, p: &FirstSlabParams, out: &mut OutputSet) -> Result<Partial> {
        let est = conditioned_first_slab_moment(
            &self.model,
            &p.levels,
            p.target,
            p.max_attempts,
            p.min_rate,
            p.step_cap,
            &self.schedule,
        )?;
        let digest = out.digest().to_string();
        out.write("first_slab.csv", |b| {
            writeln!(b, "# manifest_digest={digest}")?;
            writeln!(b, "level,accepted,attempts,undecided,acceptance_rate,mean,second_moment,stderr,censored")?;
            for e in &est {
                writeln!(
                    b,
                    "{},{},{},{},{},{},{},{},{}",
                    e.level,
                    e.accepted,
                    e.attempts,
                    e.undecided,
                    e.acceptance_rate,
                    e.mean,
                    e.second_moment,
                    e.std_error,
                    e.censored
                )?;
            }
            Ok(())
        })?;
        let usable: Vec<_> = est.iter().filter(|e| !e.censored && e.second_moment > 0.0).collect();
        let x: Vec<f64> = usable.iter().map(|e| (e.level as f64).ln()).collect();
        let y: Vec<f64> = usable.iter().map(|e| e.second_moment.ln()).collect();
        let fit = if usable.len() >= 2 { numeric::ols(&x, &y) } else { None };
        out.write_json("first_slab.json", &serde_json::json!({ "estimates": est, "loglog_slope": fit }))?;
        Ok(est.iter().any(|e| e.censored).then(|| {
            Error::InsufficientData("at least one level was censored by the acceptance-rate floor".into())
        }))
    }
}
