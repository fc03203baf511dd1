//! Drive an experiment from a JSON configuration, as the `rwre-lab` binary does.
use rwre::cli::config::{load, Source};
use rwre::cli::{manifest, run_with_manifest};

fn main() -> rwre::Result<()> {
    let dir = std::env::temp_dir().join("rwre-run-config-example");
    let cfg_path = dir.join("surgery.json");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        &cfg_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "model": { "dimension": 2, "family": { "kind": "dirichlet_neighbors", "alpha": [2.0, 0.5, 1.0, 1.0] } },
            "experiment": { "kind": "surgery-check", "samples": 200, "n": 32 },
            "master_seed": 7,
            "output_dir": dir.join("out"),
        }))?,
    )?;
    let cfg = load(Source::File(&cfg_path), None, &["policy.margin=5".into()])?;
    let code = run_with_manifest(&cfg, rayon::current_num_threads(), manifest::now_ms());
    let report = manifest::verify(&cfg.output_dir)?;
    println!("exit code {code}, {} outputs verified: {}", report.checked, report.ok);
    println!("{}", std::fs::read_to_string(cfg.output_dir.join("surgery_summary.json"))?);
    Ok(())
}
