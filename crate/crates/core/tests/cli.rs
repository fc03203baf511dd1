use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rwre-lab")).args(args).output().expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

/// Data rows of a CSV with a leading `#` comment, as header-keyed maps.
fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines.map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect()).collect()
}

#[test]
fn list_models_shows_four_families() {
    let out = lab(&["list-models"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v["families"].as_array().unwrap().iter().map(|f| f["family"].as_str().unwrap()).collect();
    assert_eq!(names, ["homogeneous", "dirichlet_neighbors", "epsilon_perturbed_drift", "two_kernel_mixture"]);
}

#[test]
fn catalog_examples_run_as_configs() {
    let out = lab(&["list-models"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    for f in v["families"].as_array().unwrap() {
        let dir = tmp.path().join(f["family"].as_str().unwrap());
        fs::create_dir_all(&dir).unwrap();
        let cfg = json!({ "model": f["example"], "experiment": { "kind": "simulate", "horizon": 50 } });
        let path = write_config(&dir, &cfg);
        let r = lab(&["run", "--config", &path, "--out", dir.join("out").to_str().unwrap()]);
        assert!(r.status.success(), "{}: {}", f["family"], String::from_utf8_lossy(&r.stderr));
        assert_eq!(manifest(&dir.join("out"))["config"]["model"], f["example"]);
    }
}

#[test]
fn unknown_family_exits_2_and_names_the_valid_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({
        "model": { "dimension": 2, "family": { "kind": "bogus" } },
        "experiment": { "kind": "simulate" }
    });
    let path = write_config(tmp.path(), &cfg);
    let r = lab(&["run", "--config", &path]);
    assert_eq!(r.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&r.stderr).unwrap();
    let msg = err["error"]["message"].as_str().unwrap();
    for name in ["homogeneous", "dirichlet_neighbors", "epsilon_perturbed_drift", "two_kernel_mixture"] {
        assert!(msg.contains(name), "{msg}");
    }
    assert_eq!(err["error"]["exit_code"], 2);
}

#[test]
fn malformed_invocations_exit_2() {
    assert_eq!(lab(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(lab(&["simulate", "--set", "experiment.horizon=-3"]).status.code(), Some(2));
    assert_eq!(lab(&["variance-decay", "--set", "experiment.horizon=100"]).status.code(), Some(2));
    assert_eq!(lab(&["run"]).status.code(), Some(2));
}

#[test]
fn homogeneous_variance_decay_has_no_environment_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("vd");
    let r = lab(&[
        "variance-decay",
        "--set",
        r#"model.family={"kind":"homogeneous","probs":[0.4,0.1,0.25,0.25]}"#,
        "--set",
        "experiment.v0=[0.3,0.0]",
        "--set",
        "experiment.n_grid=[32,64,128,256]",
        "--set",
        "experiment.outer=100",
        "--set",
        "experiment.inner=32",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let m = manifest(&out);
    let status = m["status"].as_str().unwrap();
    match r.status.code() {
        Some(0) => assert_eq!(status, "ok"),
        Some(3) => assert_eq!(status, "partial"),
        c => panic!("unexpected exit {c:?}"),
    }
    assert!(m["outputs"].get("variance_decay.csv").is_some());
    for row in csv_rows(&out.join("variance_decay.csv")) {
        let c: f64 = row["corrected_var"].parse().unwrap();
        let se: f64 = row["stderr"].parse().unwrap();
        assert!(c.abs() <= 4.0 * se, "{row:?}");
    }
}

#[test]
fn fit_failure_exits_3_with_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("vd");
    // a functional that is identically zero has no variance to fit
    let r = lab(&[
        "variance-decay",
        "--set",
        r#"experiment.functional={"kind":"smoothed_halfspace","a":[0.0,0.0],"b":1.0}"#,
        "--set",
        "experiment.v0=[0.3,0.0]",
        "--set",
        "experiment.n_grid=[16,32,64]",
        "--set",
        "experiment.outer=4",
        "--set",
        "experiment.inner=4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let m = manifest(&out);
    assert_eq!(m["status"], "partial");
    assert_eq!(m["error"]["kind"], "fit");
    assert!(m["outputs"].get("variance_decay.csv").is_some());
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!(fit["error"].is_string());
    assert!(lab(&["verify", out.to_str().unwrap()]).status.success());
}

#[test]
fn same_seed_reproduces_checksums_and_verify_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        let r = lab(&["regen", "--seed", seed, "--set", "experiment.replicas=10", "--out", dir.to_str().unwrap()]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        dir
    };
    let (a, b, c) = (run("a", "9"), run("b", "9"), run("c", "10"));
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    assert_ne!(manifest(&a)["outputs"], manifest(&c)["outputs"]);
    assert_eq!(manifest(&a)["seed_schedule_digest"], manifest(&b)["seed_schedule_digest"]);

    assert!(lab(&["verify", a.to_str().unwrap()]).status.success());
    let target = a.join("regen_summary.json");
    let mut text = fs::read_to_string(&target).unwrap();
    text.push(' ');
    fs::write(&target, text).unwrap();
    let r = lab(&["verify", a.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let rep: Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(rep["mismatched"], json!(["regen_summary.json"]));
}

#[test]
fn surgery_check_rows_hold_twice_the_displayed_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let r = lab(&["surgery-check", "--set", "experiment.samples=1000", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = csv_rows(&out.join("surgery.csv"));
    assert_eq!(rows.len(), 1000);
    let decided: Vec<_> = rows.iter().filter(|r| r["hit"] == "true" && r["censored"] == "false").collect();
    assert!(!decided.is_empty());
    for r in decided {
        assert_eq!(r["holds_corrected"], "true", "{r:?}");
        let (lhs, rhs): (f64, f64) = (r["lhs"].parse().unwrap(), r["rhs"].parse().unwrap());
        assert!(lhs <= 2.0 * rhs + 1e-9, "{r:?}");
    }
}

#[test]
#[ignore = "displayed surgery bound is off by up to a factor of two"]
fn surgery_check_rows_hold_the_displayed_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let r = lab(&["surgery-check", "--set", "experiment.samples=1000", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    for r in csv_rows(&out.join("surgery.csv")) {
        if r["hit"] == "true" && r["censored"] == "false" {
            assert_eq!(r["holds"], "true", "{r:?}");
        }
    }
}

#[test]
fn every_subcommand_runs_on_small_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: &[(&str, &[&str])] = &[
        ("simulate", &["experiment.horizon=100"]),
        ("jointregen", &["experiment.replicas=20", "experiment.horizon=1000"]),
        ("intersections", &["experiment.n_grid=[8,16]", "experiment.replicas=20"]),
        ("decorrelation", &["experiment.n_grid=[8,16]", "experiment.replicas=20"]),
        ("clt", &["experiment.environments=2", "experiment.walks=50", "experiment.n_grid=[32,64]", "experiment.velocity.replicas=20", "experiment.velocity.horizon=3000"]),
        ("first-slab", &["experiment.levels=[1,2]", "experiment.target=50"]),
    ];
    for (name, sets) in cases {
        let dir = tmp.path().join(name);
        let mut args = vec![*name, "--threads", "2", "--out", dir.to_str().unwrap()];
        for s in *sets {
            args.push("--set");
            args.push(s);
        }
        let r = lab(&args);
        assert!(r.status.success(), "{name}: {}", String::from_utf8_lossy(&r.stderr));
        let m = manifest(&dir);
        assert_eq!(m["experiment"], *name);
        assert_eq!(m["threads"], 2);
        assert!(lab(&["verify", dir.to_str().unwrap()]).status.success());
    }
}
