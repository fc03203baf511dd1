use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        ErrorInfo { kind: e.kind().into(), message: e.to_string(), exit_code: e.exit_code() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config: Value,
    /// Hash of the configuration snapshot and tool version; stamped into every CSV.
    pub manifest_digest: String,
    pub seed_schedule_digest: String,
    pub threads: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// `ok`, `partial` or `error`.
    pub status: String,
    pub error: Option<ErrorInfo>,
    /// File name to sha256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Digest identifying the seed derivation used by a run.
pub fn seed_schedule_digest(master: u64) -> String {
    sha256_hex(format!("splitmix64-prf;env=(master,\"env\",k);walk=(master,\"walk\",k,m);master={master}").as_bytes())
}

/// Digest of the tool version and the configuration minus its output location.
pub fn manifest_digest(cfg: &RunConfig) -> Result<String> {
    let mut tree = serde_json::to_value(cfg)?;
    if let Some(o) = tree.as_object_mut() {
        o.remove("output_dir");
    }
    let snapshot = serde_json::to_string(&tree)?;
    Ok(sha256_hex(format!("{}\n{}", env!("CARGO_PKG_VERSION"), snapshot).as_bytes()))
}

/// Collects the files of one run and writes the manifest at the end.
pub struct OutputSet {
    dir: PathBuf,
    digest: String,
    files: BTreeMap<String, String>,
}

impl OutputSet {
    pub fn create(dir: &Path, digest: String) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutputSet { dir: dir.to_path_buf(), digest, files: BTreeMap::new() })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` from a closure that fills a byte buffer.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        fs::write(self.dir.join(name), &buf)?;
        self.files.insert(name.to_string(), sha256_hex(&buf));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |b| {
            serde_json::to_writer_pretty(&mut *b, value)?;
            b.push(b'\n');
            Ok(())
        })
    }

    pub fn into_files(self) -> BTreeMap<String, String> {
        self.files
    }
}

pub fn write_manifest(dir: &Path, m: &RunManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub manifest: PathBuf,
    pub checked: usize,
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
    pub ok: bool,
}

/// Recomputes the checksum of every output listed in a manifest.
pub fn verify(path: &Path) -> Result<VerifyReport> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", manifest_path.display())))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut mismatched = Vec::new();
    let mut missing = Vec::new();
    for (name, sum) in &m.outputs {
        match fs::read(dir.join(name)) {
            Ok(bytes) if &sha256_hex(&bytes) == sum => {}
            Ok(_) => mismatched.push(name.clone()),
            Err(_) => missing.push(name.clone()),
        }
    }
    Ok(VerifyReport {
        ok: mismatched.is_empty() && missing.is_empty(),
        checked: m.outputs.len(),
        manifest: manifest_path,
        mismatched,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path(), "d".into()).unwrap();
        out.write("a.csv", |b| Ok(b.extend_from_slice(b"x,y\n"))).unwrap();
        let m = RunManifest {
            tool: "t".into(),
            version: "0".into(),
            experiment: "simulate".into(),
            config: Value::Null,
            manifest_digest: "d".into(),
            seed_schedule_digest: seed_schedule_digest(1),
            threads: 1,
            started_unix_ms: 0,
            finished_unix_ms: 0,
            status: "ok".into(),
            error: None,
            outputs: out.into_files(),
        };
        write_manifest(dir.path(), &m).unwrap();
        assert!(verify(dir.path()).unwrap().ok);
        fs::write(dir.path().join("a.csv"), b"x,z\n").unwrap();
        let r = verify(dir.path()).unwrap();
        assert_eq!(r.mismatched, vec!["a.csv".to_string()]);
        fs::remove_file(dir.path().join("a.csv")).unwrap();
        assert_eq!(verify(dir.path()).unwrap().missing, vec!["a.csv".to_string()]);
    }
}
