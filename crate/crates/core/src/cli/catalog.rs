use serde::Serialize;

use crate::env::{Family, JumpSpec, ModelSpec, NoiseLaw};

#[derive(Clone, Debug, Serialize)]
pub struct ParameterDoc {
    pub name: &'static str,
    pub doc: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub family: &'static str,
    pub description: &'static str,
    pub parameters: Vec<ParameterDoc>,
    /// A complete model block using this family with its default parameters.
    pub example: ModelSpec,
}

#[derive(Clone, Debug, Serialize)]
pub struct Catalog {
    pub jump_sets: Vec<ParameterDoc>,
    pub model_fields: Vec<ParameterDoc>,
    pub families: Vec<CatalogEntry>,
}

fn nearest(family: Family) -> ModelSpec {
    ModelSpec { dimension: 2, axis: 0, r0: 1.0, jumps: JumpSpec::Named("nearest".into()), family }
}

/// Probability vectors are ordered like the nearest-neighbour support: +e1, −e1, +e2, −e2, ...
pub fn catalog() -> Catalog {
    let p = |name, doc| ParameterDoc { name, doc };
    Catalog {
        jump_sets: vec![
            p("nearest", "the 2d nearest neighbours, ordered +e1, -e1, +e2, -e2, ..."),
            p("[[x1, .., xd], ...]", "explicit offsets; every norm must be <= r0"),
        ],
        model_fields: vec![
            p("dimension", "lattice dimension d >= 2"),
            p("axis", "index i of the transience direction e_i (default 0)"),
            p("r0", "support radius (default 1)"),
            p("jumps", "jump set (default \"nearest\")"),
            p("family", "object with a \"kind\" field naming one of the families below"),
        ],
        families: vec![
            CatalogEntry {
                family: "homogeneous",
                description: "the same kernel at every site",
                parameters: vec![p("probs", "kernel aligned with the jump set, summing to 1")],
                example: nearest(Family::Homogeneous { probs: vec![0.4, 0.1, 0.25, 0.25] }),
            },
            CatalogEntry {
                family: "dirichlet_neighbors",
                description: "i.i.d. Dirichlet(alpha) kernels",
                parameters: vec![p("alpha", "positive concentration per offset; the mean kernel is alpha / sum(alpha)")],
                example: nearest(Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] }),
            },
            CatalogEntry {
                family: "epsilon_perturbed_drift",
                description: "base kernel with each entry scaled by (1 + epsilon U), then renormalized",
                parameters: vec![
                    p("base", "base kernel aligned with the jump set"),
                    p("epsilon", "perturbation size in [0, 1)"),
                    p("noise", "law of U: \"uniform\" on [-1, 1] or \"rademacher\" on {-1, 1}"),
                ],
                example: nearest(Family::EpsilonPerturbedDrift {
                    base: vec![0.4, 0.1, 0.25, 0.25],
                    epsilon: 0.5,
                    noise: NoiseLaw::Uniform,
                }),
            },
            CatalogEntry {
                family: "two_kernel_mixture",
                description: "kernel_a with probability q, kernel_b otherwise",
                parameters: vec![
                    p("q", "probability of kernel_a, in [0, 1]"),
                    p("kernel_a", "first kernel"),
                    p("kernel_b", "second kernel"),
                ],
                example: nearest(Family::TwoKernelMixture {
                    q: 0.5,
                    kernel_a: vec![0.55, 0.05, 0.2, 0.2],
                    kernel_b: vec![0.25, 0.15, 0.3, 0.3],
                }),
            },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvironmentModel;

    #[test]
    fn catalog_lists_every_family_and_its_examples_parse() {
        let c = catalog();
        let names: Vec<&str> = c.families.iter().map(|f| f.family).collect();
        assert_eq!(names, Family::NAMES);
        for f in &c.families {
            let json = serde_json::to_string(&f.example).unwrap();
            let back: ModelSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back.family.name(), f.family);
            EnvironmentModel::new(back).unwrap();
        }
    }
}
