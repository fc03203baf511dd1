#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use rwre::{EnvironmentModel, Family};

pub fn dirichlet() -> Arc<EnvironmentModel> {
    Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] }).unwrap())
}

pub fn homogeneous(probs: &[f64]) -> Arc<EnvironmentModel> {
    Arc::new(EnvironmentModel::nearest_neighbor(2, 0, Family::Homogeneous { probs: probs.to_vec() }).unwrap())
}

/// Nearest-neighbour offsets in kernel order.
pub const NN: [[i64; 2]; 4] = [[1, 0], [-1, 0], [0, 1], [0, -1]];

/// `E^ω_0[f(path)]` over all nearest-neighbour paths of `steps` steps from
/// the origin, with the kernels of every site within reach given up front.
pub fn enumerate_with<F: Fn(&[[i64; 2]]) -> f64>(kernels: &HashMap<[i64; 2], Vec<f64>>, steps: usize, f: &F) -> f64 {
    fn rec<F: Fn(&[[i64; 2]]) -> f64>(k: &HashMap<[i64; 2], Vec<f64>>, path: &mut Vec<[i64; 2]>, steps: usize, f: &F) -> f64 {
        if path.len() == steps + 1 {
            return f(path);
        }
        let x = *path.last().unwrap();
        let mut acc = 0.0;
        for (o, p) in NN.iter().zip(&k[&x]) {
            if *p == 0.0 {
                continue;
            }
            path.push([x[0] + o[0], x[1] + o[1]]);
            acc += p * rec(k, path, steps, f);
            path.pop();
        }
        acc
    }
    rec(kernels, &mut vec![[0, 0]], steps, f)
}

pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
