//! The `rwre-lab` command line: configuration loading, experiment dispatch
//! and the reproducibility manifest.

pub mod catalog;
pub mod config;
pub mod experiments;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use config::{load, RunConfig, Source};
use manifest::{ErrorInfo, OutputSet, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "rwre-lab", version, about = "Monte Carlo laboratory for random walks in random environment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `experiment.n_grid=[128,256]`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed, overriding `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump walk trajectories.
    Simulate(Common),
    /// Detect regeneration times and summarize their increments.
    Regen(Common),
    /// Detect joint regeneration levels and run the Markov slab test.
    Jointregen(Common),
    /// Nested Monte Carlo estimate of the quenched variance over an n grid.
    VarianceDecay(Common),
    /// Intersection counts of walk pairs and the growth-exponent fit.
    Intersections(Common),
    /// Decorrelation sums of walk pairs across an n grid.
    Decorrelation(Common),
    /// Distance of standardized quenched endpoints from the Gaussian.
    Clt(Common),
    /// Pathwise check of the surgery bound on sampled (walk, site) pairs.
    SurgeryCheck(Common),
    /// Conditioned first-slab second moments by rejection sampling.
    FirstSlab(Common),
    /// Run whatever experiment the configuration file describes.
    Run(Common),
    /// Recompute the checksums listed in a manifest.
    Verify {
        /// Output directory or manifest file.
        path: PathBuf,
    },
    /// Print the environment families and their parameters as JSON.
    ListModels,
}

impl Command {
    fn experiment(&self) -> Option<(&'static str, &Common)> {
        Some(match self {
            Command::Simulate(c) => ("simulate", c),
            Command::Regen(c) => ("regen", c),
            Command::Jointregen(c) => ("jointregen", c),
            Command::VarianceDecay(c) => ("variance-decay", c),
            Command::Intersections(c) => ("intersections", c),
            Command::Decorrelation(c) => ("decorrelation", c),
            Command::Clt(c) => ("clt", c),
            Command::SurgeryCheck(c) => ("surgery-check", c),
            Command::FirstSlab(c) => ("first-slab", c),
            _ => return None,
        })
    }
}

fn error_json(e: &Error) -> String {
    json!({ "error": ErrorInfo::from(e) }).to_string()
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::ListModels => {
            println!("{}", serde_json::to_string_pretty(&catalog::catalog()).expect("catalog serializes"));
            0
        }
        Command::Verify { path } => match manifest::verify(&path) {
            Ok(r) => {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                if r.ok {
                    0
                } else {
                    1
                }
            }
            Err(e) => {
                eprintln!("{}", error_json(&e));
                e.exit_code()
            }
        },
        Command::Run(common) => run_experiment(None, &common),
        ref other => {
            let (name, common) = other.experiment().expect("experiment subcommand");
            run_experiment(Some(name), common)
        }
    }
}

fn resolve(name: Option<&str>, common: &Common) -> Result<RunConfig> {
    let source = match (&common.config, name) {
        (Some(p), _) => Source::File(p),
        (None, Some(n)) => Source::Defaults(n),
        (None, None) => return Err(Error::Config("run needs --config".into())),
    };
    let mut overrides = common.set.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("master_seed={s}"));
    }
    if let Some(o) = &common.out {
        overrides.push(format!("output_dir={}", serde_json::to_string(&o.to_string_lossy())?));
    }
    load(source, name, &overrides)
}

fn run_experiment(name: Option<&str>, common: &Common) -> i32 {
    let started = manifest::now_ms();
    let cfg = match resolve(name, common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            if let Some(dir) = &common.out {
                let m = RunManifest {
                    tool: "rwre-lab".into(),
                    version: env!("CARGO_PKG_VERSION").into(),
                    experiment: name.unwrap_or("run").into(),
                    config: serde_json::Value::Null,
                    manifest_digest: String::new(),
                    seed_schedule_digest: String::new(),
                    threads: 0,
                    started_unix_ms: started,
                    finished_unix_ms: manifest::now_ms(),
                    status: "error".into(),
                    error: Some(ErrorInfo::from(&e)),
                    outputs: Default::default(),
                };
                let _ = manifest::write_manifest(dir, &m);
            }
            return e.exit_code();
        }
    };
    let pool = match common.threads.map_or_else(rayon::ThreadPoolBuilder::new, |t| {
        rayon::ThreadPoolBuilder::new().num_threads(t)
    })
    .build()
    {
        Ok(p) => p,
        Err(e) => {
            let e = Error::Config(format!("cannot start {} worker threads: {e}", common.threads.unwrap_or(0)));
            eprintln!("{}", error_json(&e));
            return e.exit_code();
        }
    };
    pool.install(|| run_with_manifest(&cfg, pool.current_num_threads(), started))
}

/// Runs a validated configuration and writes its manifest; returns the exit code.
pub fn run_with_manifest(cfg: &RunConfig, threads: usize, started: u128) -> i32 {
    let digest = match manifest::manifest_digest(cfg) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            return e.exit_code();
        }
    };
    let mut out = match OutputSet::create(&cfg.output_dir, digest.clone()) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            return e.exit_code();
        }
    };
    let result = experiments::execute(cfg, &mut out);
    let dir = out.dir().to_path_buf();
    let (status, error) = match &result {
        Ok(None) => ("ok", None),
        Ok(Some(e)) => ("partial", Some(ErrorInfo::from(e))),
        Err(e) => ("error", Some(ErrorInfo::from(e))),
    };
    let m = RunManifest {
        tool: "rwre-lab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: cfg.experiment.name().into(),
        config: serde_json::to_value(cfg).unwrap_or_default(),
        manifest_digest: digest,
        seed_schedule_digest: manifest::seed_schedule_digest(cfg.master_seed),
        threads,
        started_unix_ms: started,
        finished_unix_ms: manifest::now_ms(),
        status: status.into(),
        error,
        outputs: out.into_files(),
    };
    if let Err(e) = manifest::write_manifest(&dir, &m) {
        eprintln!("{}", error_json(&e));
        return e.exit_code();
    }
    match result {
        Ok(None) => {
            println!("{}", json!({ "status": "ok", "output_dir": dir, "outputs": m.outputs.keys().collect::<Vec<_>>() }));
            0
        }
        Ok(Some(e)) | Err(e) => {
            eprintln!("{}", error_json(&e));
            e.exit_code()
        }
    }
}
