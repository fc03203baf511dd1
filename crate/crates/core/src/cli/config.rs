use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{EnvironmentModel, Family, ModelSpec};
use crate::error::{config, Error, Result};
use crate::paths::Functional;
use crate::regen::ConfirmationPolicy;
use crate::stats::CltCentering;

/// Declarative description of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub policy: ConfirmationPolicy,
    pub experiment: Experiment,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Required ratio between a horizon and the largest scale it serves.
    #[serde(default = "default_safety_factor")]
    pub safety_factor: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("rwre-out")
}

fn default_safety_factor() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Simulate(SimulateParams),
    Regen(RegenParams),
    Jointregen(JointRegenParams),
    VarianceDecay(VarianceDecayParams),
    Intersections(IntersectionParams),
    Decorrelation(IntersectionParams),
    Clt(CltParams),
    SurgeryCheck(SurgeryParams),
    FirstSlab(FirstSlabParams),
}

impl Experiment {
    pub const NAMES: [&'static str; 9] = [
        "simulate",
        "regen",
        "jointregen",
        "variance-decay",
        "intersections",
        "decorrelation",
        "clt",
        "surgery-check",
        "first-slab",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate(_) => "simulate",
            Experiment::Regen(_) => "regen",
            Experiment::Jointregen(_) => "jointregen",
            Experiment::VarianceDecay(_) => "variance-decay",
            Experiment::Intersections(_) => "intersections",
            Experiment::Decorrelation(_) => "decorrelation",
            Experiment::Clt(_) => "clt",
            Experiment::SurgeryCheck(_) => "surgery-check",
            Experiment::FirstSlab(_) => "first-slab",
        }
    }

    /// The experiment block with every parameter at its default.
    pub fn default_for(name: &str) -> Result<Experiment> {
        Ok(match name {
            "simulate" => Experiment::Simulate(Default::default()),
            "regen" => Experiment::Regen(Default::default()),
            "jointregen" => Experiment::Jointregen(Default::default()),
            "variance-decay" => Experiment::VarianceDecay(Default::default()),
            "intersections" => Experiment::Intersections(Default::default()),
            "decorrelation" => Experiment::Decorrelation(Default::default()),
            "clt" => Experiment::Clt(Default::default()),
            "surgery-check" => Experiment::SurgeryCheck(Default::default()),
            "first-slab" => Experiment::FirstSlab(Default::default()),
            other => {
                return Err(config(format!(
                    "unknown experiment '{other}' (valid: {})",
                    Experiment::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub horizon: usize,
    pub replicas: usize,
    /// Start site; the origin when absent.
    pub start: Option<Vec<i64>>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams { horizon: 1000, replicas: 1, start: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegenParams {
    pub horizon: usize,
    pub replicas: usize,
    /// Replicas whose regeneration records are written out.
    pub dump: usize,
}

impl Default for RegenParams {
    fn default() -> Self {
        RegenParams { horizon: 5000, replicas: 100, dump: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointRegenParams {
    pub horizon: usize,
    pub replicas: usize,
    pub dump: usize,
    /// Start of the second walk; the origin when absent.
    pub start2: Option<Vec<i64>>,
    /// Interior joint level used by the Markov test.
    pub markov_k: usize,
}

impl Default for JointRegenParams {
    fn default() -> Self {
        JointRegenParams { horizon: 3000, replicas: 200, dump: 4, start2: None, markov_k: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityParams {
    pub horizon: usize,
    pub replicas: usize,
}

impl Default for VelocityParams {
    fn default() -> Self {
        VelocityParams { horizon: 20000, replicas: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceDecayParams {
    pub n_grid: Vec<usize>,
    /// Environments `K`.
    pub outer: usize,
    /// Walks per environment `M`.
    pub inner: usize,
    /// Defaults to `safety_factor · max(n_grid)`.
    pub horizon: Option<usize>,
    pub functional: Functional,
    /// Estimated with `velocity` when absent.
    pub v0: Option<Vec<f64>>,
    pub velocity: VelocityParams,
}

impl Default for VarianceDecayParams {
    fn default() -> Self {
        VarianceDecayParams {
            n_grid: vec![128, 256, 512, 1024],
            outer: 50,
            inner: 32,
            horizon: None,
            functional: Functional::EndpointCoord { coord: 1, clip: 1.0 },
            v0: None,
            velocity: VelocityParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntersectionParams {
    pub n_grid: Vec<usize>,
    pub eps: f64,
    /// Exponent of the `G_n` threshold; `eps / d` when absent.
    pub g_exponent: Option<f64>,
    pub replicas: usize,
    /// Initial horizon per joint slab.
    pub horizon_factor: usize,
    /// Largest horizon per joint slab before a replica is censored.
    pub max_horizon_factor: usize,
}

impl Default for IntersectionParams {
    fn default() -> Self {
        IntersectionParams {
            n_grid: vec![64, 256, 1024],
            eps: 0.1,
            g_exponent: None,
            replicas: 100,
            horizon_factor: 12,
            max_horizon_factor: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltParams {
    pub environments: usize,
    pub walks: usize,
    pub n_grid: Vec<usize>,
    /// Defaults to `safety_factor · max(n_grid)`.
    pub horizon: Option<usize>,
    pub centering: CltCentering,
    pub v0: Option<Vec<f64>>,
    /// Annealed covariance; estimated from regeneration increments when absent.
    pub sigma: Option<Vec<Vec<f64>>>,
    pub velocity: VelocityParams,
}

impl Default for CltParams {
    fn default() -> Self {
        CltParams {
            environments: 5,
            walks: 500,
            n_grid: vec![256, 1024],
            horizon: None,
            centering: CltCentering::Velocity,
            v0: None,
            sigma: None,
            velocity: VelocityParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurgeryParams {
    pub samples: usize,
    pub n: usize,
    /// Defaults to `safety_factor · n`.
    pub horizon: Option<usize>,
}

impl Default for SurgeryParams {
    fn default() -> Self {
        SurgeryParams { samples: 1000, n: 64, horizon: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirstSlabParams {
    pub levels: Vec<i64>,
    /// Accepted samples per level.
    pub target: usize,
    pub max_attempts: usize,
    /// Acceptance-rate floor below which a level is censored.
    pub min_rate: f64,
    pub step_cap: usize,
}

impl Default for FirstSlabParams {
    fn default() -> Self {
        FirstSlabParams { levels: vec![1, 2, 4, 8, 16], target: 500, max_attempts: 100_000, min_rate: 0.01, step_cap: 100_000 }
    }
}

/// The model every subcommand falls back to without a configuration file.
pub fn default_model() -> ModelSpec {
    ModelSpec {
        dimension: 2,
        axis: 0,
        r0: 1.0,
        jumps: crate::env::JumpSpec::Named("nearest".into()),
        family: Family::DirichletNeighbors { alpha: vec![2.0, 0.5, 1.0, 1.0] },
    }
}

/// Sets `path` (dotted) in a JSON tree to `raw`, parsed as JSON when possible.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config(format!("override '{assignment}' is not of the form key=value")))?;
    if path.is_empty() {
        return Err(config("override with an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(config(format!("override '{path}': '{}' is not an object", keys[..i].join(".")))),
        };
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key")
}

/// Where a configuration comes from before overrides.
pub enum Source<'a> {
    File(&'a Path),
    Defaults(&'a str),
}

/// Reads, overrides and validates a configuration.
///
/// With a subcommand name the experiment block defaults to that experiment
/// and must agree with it when present.
pub fn load(source: Source<'_>, subcommand: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let mut tree = match source {
        Source::File(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)?
        }
        Source::Defaults(_) => serde_json::json!({ "model": serde_json::to_value(default_model())? }),
    };
    if !tree.is_object() {
        return Err(config("configuration must be a JSON object"));
    }
    let name = subcommand.or(match source {
        Source::Defaults(n) => Some(n),
        Source::File(_) => None,
    });
    if let Some(name) = name {
        let default = serde_json::to_value(Experiment::default_for(name)?)?;
        match tree.get_mut("experiment") {
            None => {
                tree["experiment"] = default;
            }
            Some(block) => {
                let kind = block.get("kind").and_then(Value::as_str).unwrap_or(name);
                if kind != name {
                    return Err(config(format!("configuration describes experiment '{kind}', not '{name}'")));
                }
                let mut merged = default;
                if let (Some(m), Some(b)) = (merged.as_object_mut(), block.as_object()) {
                    for (k, v) in b {
                        m.insert(k.clone(), v.clone());
                    }
                }
                *block = merged;
            }
        }
    }
    for o in overrides {
        apply_override(&mut tree, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let model = EnvironmentModel::new(self.model.clone())?;
        self.policy.validate()?;
        if !(self.safety_factor >= 1.0) {
            return Err(config("safety_factor must be >= 1"));
        }
        let d = model.dimension();
        let check_len = |v: &Option<Vec<i64>>, what: &str| match v {
            Some(p) if p.len() != d => Err(config(format!("{what} has {} coordinates, model has {d}", p.len()))),
            _ => Ok(()),
        };
        let check_grid = |g: &[usize]| {
            if g.is_empty() || g[0] == 0 || g.windows(2).any(|w| w[0] >= w[1]) {
                Err(config("n_grid must be non-empty, positive and strictly increasing"))
            } else {
                Ok(())
            }
        };
        let check_horizon = |h: Option<usize>, n: usize| match h {
            Some(h) if (h as f64) < self.safety_factor * n as f64 => Err(config(format!(
                "horizon {h} is below safety_factor · {n} = {}",
                self.safety_factor * n as f64
            ))),
            _ => Ok(()),
        };
        match &self.experiment {
            Experiment::Simulate(p) => {
                check_len(&p.start, "start")?;
                if p.replicas == 0 {
                    return Err(config("simulate needs at least one replica"));
                }
            }
            Experiment::Regen(p) => {
                if p.replicas == 0 || p.horizon == 0 {
                    return Err(config("regen needs positive horizon and replicas"));
                }
            }
            Experiment::Jointregen(p) => {
                check_len(&p.start2, "start2")?;
                if p.replicas == 0 || p.horizon == 0 || p.markov_k == 0 {
                    return Err(config("jointregen needs positive horizon, replicas and markov_k"));
                }
            }
            Experiment::VarianceDecay(p) => {
                check_grid(&p.n_grid)?;
                check_horizon(p.horizon, *p.n_grid.last().unwrap())?;
                if p.outer < 2 || p.inner < 2 {
                    return Err(config("variance decay needs outer >= 2 and inner >= 2"));
                }
                if p.v0.as_ref().is_some_and(|v| v.len() != d) {
                    return Err(config("v0 dimension does not match the model"));
                }
                p.functional.validate(d)?;
            }
            Experiment::Intersections(p) | Experiment::Decorrelation(p) => {
                check_grid(&p.n_grid)?;
                if !(p.eps > 0.0) || p.replicas == 0 {
                    return Err(config("intersections need eps > 0 and at least one replica"));
                }
                if (p.horizon_factor as f64) < self.safety_factor || p.max_horizon_factor < p.horizon_factor {
                    return Err(config("need safety_factor <= horizon_factor <= max_horizon_factor"));
                }
                if matches!(self.experiment, Experiment::Decorrelation(_)) && p.n_grid.len() < 2 {
                    return Err(config("the decorrelation curve needs at least two n values"));
                }
            }
            Experiment::Clt(p) => {
                check_grid(&p.n_grid)?;
                check_horizon(p.horizon, *p.n_grid.last().unwrap())?;
                if p.environments == 0 || p.walks < 2 {
                    return Err(config("clt needs at least one environment and two walks"));
                }
                if p.v0.as_ref().is_some_and(|v| v.len() != d) || p.sigma.as_ref().is_some_and(|s| s.len() != d) {
                    return Err(config("v0 and sigma must match the model dimension"));
                }
            }
            Experiment::SurgeryCheck(p) => {
                if p.n == 0 || p.samples == 0 {
                    return Err(config("surgery-check needs n >= 1 and samples >= 1"));
                }
                check_horizon(p.horizon, p.n)?;
            }
            Experiment::FirstSlab(p) => {
                if p.levels.is_empty() || p.levels.iter().any(|&l| l < 1) {
                    return Err(config("first-slab levels must be non-empty and >= 1"));
                }
                if p.target == 0 || p.max_attempts == 0 || p.step_cap == 0 {
                    return Err(config("first-slab needs positive target, max_attempts and step_cap"));
                }
            }
        }
        Ok(())
    }

    pub fn horizon_for(&self, explicit: Option<usize>, n: usize) -> usize {
        explicit.unwrap_or((self.safety_factor * n as f64).ceil() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides_create_and_replace_nested_keys() {
        let mut v = serde_json::json!({"a": {"b": 1}});
        apply_override(&mut v, "a.b=2").unwrap();
        apply_override(&mut v, "a.c.d=[1,2]").unwrap();
        apply_override(&mut v, "e=hello").unwrap();
        assert_eq!(v, serde_json::json!({"a": {"b": 2, "c": {"d": [1, 2]}}, "e": "hello"}));
        assert!(apply_override(&mut v, "e.f=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn subcommand_defaults_fill_a_partial_block() {
        let cfg = load(Source::Defaults("regen"), None, &["experiment.replicas=7".into()]).unwrap();
        match cfg.experiment {
            Experiment::Regen(p) => {
                assert_eq!(p.replicas, 7);
                assert_eq!(p.horizon, RegenParams::default().horizon);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn horizon_below_the_safety_factor_is_rejected() {
        let o = ["experiment.n_grid=[100,200]".to_string(), "experiment.horizon=700".to_string()];
        assert!(matches!(load(Source::Defaults("variance-decay"), None, &o), Err(Error::Config(_))));
        let o = ["experiment.n_grid=[100,200]".to_string(), "experiment.horizon=800".to_string()];
        assert!(load(Source::Defaults("variance-decay"), None, &o).is_ok());
    }

    #[test]
    fn unknown_family_names_the_valid_set() {
        let err = load(Source::Defaults("simulate"), None, &["model.family.kind=levy".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dirichlet_neighbors") && msg.contains("two_kernel_mixture"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn every_default_block_round_trips() {
        for name in Experiment::NAMES {
            let e = Experiment::default_for(name).unwrap();
            let back: Experiment = serde_json::from_value(serde_json::to_value(&e).unwrap()).unwrap();
            assert_eq!(back, e);
            assert_eq!(e.name(), name);
        }
    }
}
