//! Quenched walks with replayable step randomness.

use std::io::Write;

use crate::env::{EnvironmentHandle, LatticePoint};
use crate::error::{config, Error, Result};
use crate::prf;

/// A finite lattice path `X_0, ..., X_horizon` stored densely (`d * 8` bytes per step).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    positions: Vec<i64>,
    pub walk_seed: u64,
    pub env_seed: u64,
}

impl Trajectory {
    /// Builds a trajectory from explicit positions (used for hand-made paths).
    pub fn from_points(points: &[Vec<i64>], walk_seed: u64, env_seed: u64) -> Result<Self> {
        let dim = points
            .first()
            .ok_or_else(|| Error::Input("trajectory must contain at least one point".into()))?
            .len();
        let mut positions = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::Input("trajectory points have mixed dimensions".into()));
            }
            positions.extend_from_slice(p);
        }
        Ok(Trajectory {
            dim,
            positions,
            walk_seed,
            env_seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored positions (`horizon + 1`).
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.len().saturating_sub(1)
    }

    #[inline]
    pub fn position(&self, t: usize) -> &[i64] {
        &self.positions[t * self.dim..(t + 1) * self.dim]
    }

    pub fn point(&self, t: usize) -> LatticePoint {
        LatticePoint::from(self.position(t))
    }

    pub fn start(&self) -> &[i64] {
        self.position(0)
    }

    #[inline]
    pub fn level(&self, t: usize, axis: usize) -> i64 {
        self.positions[t * self.dim + axis]
    }

    pub fn levels(&self, axis: usize) -> Vec<i64> {
        (0..self.len()).map(|t| self.level(t, axis)).collect()
    }

    pub fn positions_flat(&self) -> &[i64] {
        &self.positions
    }

    /// Writes the `t,x_1,...,x_d` dump with a seed header comment.
    pub fn write_csv<W: Write>(&self, mut w: W, digest: &str) -> Result<()> {
        writeln!(
            w,
            "# manifest_digest={digest} env_seed={} walk_seed={}",
            self.env_seed, self.walk_seed
        )?;
        write!(w, "t")?;
        for i in 1..=self.dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for t in 0..self.len() {
            write!(w, "{t}")?;
            for c in self.position(t) {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Two walks in one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPair {
    pub first: Trajectory,
    pub second: Trajectory,
}

/// Step-by-step simulator; the step at time `t` uses the uniform keyed by
/// `(walk_seed, t)`.
pub struct Walker<'a> {
    handle: &'a EnvironmentHandle,
    position: Vec<i64>,
    time: u64,
    walk_seed: u64,
    scratch: Vec<f64>,
}

impl<'a> Walker<'a> {
    pub fn new(handle: &'a EnvironmentHandle, start: &[i64], walk_seed: u64) -> Result<Self> {
        if start.len() != handle.dimension() {
            return Err(config(format!(
                "start point has dimension {} but the model has dimension {}",
                start.len(),
                handle.dimension()
            )));
        }
        Ok(Walker {
            handle,
            position: start.to_vec(),
            time: 0,
            walk_seed,
            scratch: vec![0.0; handle.model().jumps().len()],
        })
    }

    pub fn position(&self) -> &[i64] {
        &self.position
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Advances one step and returns the new position.
    #[inline]
    pub fn step(&mut self) -> &[i64] {
        let u = prf::unit(prf::splitmix(self.walk_seed, self.time));
        let idx = self.handle.sample_offset(&self.position, u, &mut self.scratch);
        let off = self.handle.model().jumps().offset(idx);
        for (p, o) in self.position.iter_mut().zip(off) {
            *p += o;
        }
        self.time += 1;
        &self.position
    }
}

/// Simulates `horizon` steps of the quenched walk from `start`.
pub fn simulate_walk(
    handle: &EnvironmentHandle,
    start: &LatticePoint,
    horizon: usize,
    walk_seed: u64,
) -> Result<Trajectory> {
    let mut walker = Walker::new(handle, start.coords(), walk_seed)?;
    let d = start.dim();
    let mut positions = Vec::with_capacity((horizon + 1) * d);
    positions.extend_from_slice(start.coords());
    for _ in 0..horizon {
        positions.extend_from_slice(walker.step());
    }
    Ok(Trajectory {
        dim: d,
        positions,
        walk_seed,
        env_seed: handle.env_seed(),
    })
}

/// Two walks that are independent given the environment.
pub fn simulate_pair(
    handle: &EnvironmentHandle,
    start1: &LatticePoint,
    start2: &LatticePoint,
    horizon: usize,
    seed1: u64,
    seed2: u64,
) -> Result<TrajectoryPair> {
    if seed1 == seed2 {
        return Err(config("the two walks of a pair need distinct seeds"));
    }
    Ok(TrajectoryPair {
        first: simulate_walk(handle, start1, horizon, seed1)?,
        second: simulate_walk(handle, start2, horizon, seed2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvironmentModel, Family};
    use std::sync::Arc;

    fn homogeneous(p: Vec<f64>) -> EnvironmentHandle {
        let m = EnvironmentModel::nearest_neighbor(2, 0, Family::Homogeneous { probs: p }).unwrap();
        EnvironmentHandle::new(Arc::new(m), 1)
    }

    #[test]
    fn degenerate_kernel_walks_straight() {
        let h = homogeneous(vec![1.0, 0.0, 0.0, 0.0]);
        let t = simulate_walk(&h, &LatticePoint::origin(2), 5, 3).unwrap();
        assert_eq!(t.len(), 6);
        for k in 0..=5 {
            assert_eq!(t.position(k), &[k as i64, 0]);
        }
    }

    #[test]
    fn same_seeds_reproduce_and_steps_stay_in_support() {
        let m = EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![1.0, 0.5, 0.7, 0.7] })
            .unwrap();
        let h = EnvironmentHandle::new(Arc::new(m), 42);
        let a = simulate_walk(&h, &LatticePoint::origin(2), 500, 9).unwrap();
        let b = simulate_walk(&h, &LatticePoint::origin(2), 500, 9).unwrap();
        assert_eq!(a, b);
        let jumps = h.model().jumps().clone();
        for t in 0..500 {
            let step: Vec<i64> = a.position(t + 1).iter().zip(a.position(t)).map(|(x, y)| x - y).collect();
            assert!(jumps.index_of(&step).is_some());
        }
    }

    #[test]
    fn pair_requires_distinct_seeds_and_swaps_exactly() {
        let h = homogeneous(vec![0.4, 0.1, 0.25, 0.25]);
        let o = LatticePoint::origin(2);
        assert!(simulate_pair(&h, &o, &o, 10, 5, 5).is_err());
        let p = simulate_pair(&h, &o, &o, 50, 5, 6).unwrap();
        let q = simulate_pair(&h, &o, &o, 50, 6, 5).unwrap();
        assert_eq!(p.first, q.second);
        assert_eq!(p.second, q.first);
    }

    #[test]
    fn parallel_deterministic_walks_never_meet() {
        let h = homogeneous(vec![1.0, 0.0, 0.0, 0.0]);
        let p = simulate_pair(&h, &LatticePoint::origin(2), &LatticePoint::axis(2, 1, 1), 20, 1, 2).unwrap();
        for t in 0..=20 {
            assert_ne!(p.first.position(t), p.second.position(t));
            assert_eq!(p.second.position(t), &[t as i64, 1]);
        }
    }

    #[test]
    fn homogeneous_drift_matches_kernel_mean() {
        let h = homogeneous(vec![0.4, 0.1, 0.3, 0.2]);
        let n = 10_000;
        let horizon = 50;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for s in 0..n {
            let t = simulate_walk(&h, &LatticePoint::origin(2), horizon, prf::derive(7, &[s])).unwrap();
            for i in 0..2 {
                let v = t.position(horizon)[i] as f64 / horizon as f64;
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let target = [0.3, 0.1];
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
            assert!((mean - target[i]).abs() < 3.0 * se, "coord {i}: {mean} vs {}", target[i]);
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let h = homogeneous(vec![1.0, 0.0, 0.0, 0.0]);
        let t = simulate_walk(&h, &LatticePoint::origin(2), 2, 3).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, "abc").unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# manifest_digest=abc env_seed=1 walk_seed=3"));
        assert_eq!(lines[1], "t,x_1,x_2");
        assert_eq!(lines[2], "0,0,0");
        assert_eq!(lines[4], "2,2,0");
    }
}
