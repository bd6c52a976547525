//! Artifacts, atomic writes, sidecars and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{self, Format, RunConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
    /// Column units for CSV artifacts.
    pub columns: Vec<Column>,
}

impl Artifact {
    pub fn text(name: impl Into<String>, text: String) -> Self {
        Self { name: name.into(), bytes: text.into_bytes(), columns: Vec::new() }
    }

    /// CSV produced elsewhere; `units` must follow the header order.
    pub fn csv(name: impl Into<String>, bytes: Vec<u8>, units: &[&str]) -> Self {
        let header = std::str::from_utf8(&bytes).ok().and_then(|s| s.lines().next()).unwrap_or("");
        let columns = header
            .split(',')
            .enumerate()
            .map(|(i, n)| Column { name: n.to_string(), unit: units.get(i).copied().unwrap_or("1").to_string() })
            .collect();
        Self { name: name.into(), bytes, columns }
    }

    fn format(&self) -> Option<Format> {
        match Path::new(&self.name).extension().and_then(|e| e.to_str()) {
            Some("csv") => Some(Format::Csv),
            Some("jsonl") => Some(Format::Jsonl),
            Some("svg") => Some(Format::Svg),
            _ => None,
        }
    }
}

/// Row-oriented CSV builder.
pub struct Csv {
    name: String,
    columns: Vec<Column>,
    body: String,
}

impl Csv {
    pub fn new(name: &str, cols: &[(&str, &str)]) -> Self {
        let columns: Vec<Column> = cols.iter().map(|(n, u)| Column { name: n.to_string(), unit: u.to_string() }).collect();
        let mut body = columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(",");
        body.push('\n');
        Self { name: name.to_string(), columns, body }
    }

    pub fn row(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.columns.len());
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.body.push(',');
            }
            write!(self.body, "{v}").unwrap();
        }
        self.body.push('\n');
    }

    pub fn raw_row(&mut self, cells: &[String]) {
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    pub fn finish(self) -> Artifact {
        Artifact { name: self.name, bytes: self.body.into_bytes(), columns: self.columns }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(CliError::io(format!("create {}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let op = format!("write {}", path.display());
    let mut f = fs::File::create(&tmp).map_err(CliError::io(op.clone()))?;
    f.write_all(bytes).map_err(CliError::io(op.clone()))?;
    f.sync_all().map_err(CliError::io(op.clone()))?;
    drop(f);
    fs::rename(&tmp, path).map_err(CliError::io(op))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config_hash: String,
    /// Fully resolved config as TOML.
    pub config: String,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(format!("read {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn config(&self) -> Result<RunConfig, CliError> {
        toml::from_str(&self.config).map_err(|e| CliError::Config(format!("manifest config: {}", e.message())))
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    file: &'a str,
    columns: &'a [Column],
    config_hash: &'a str,
    version: &'a str,
}

/// Refuses a non-empty directory unless overwriting or resuming.
pub fn prepare_dir(dir: &Path, force: bool, resume: bool) -> Result<(), CliError> {
    if dir.exists() {
        let occupied = fs::read_dir(dir).map_err(CliError::io(format!("read {}", dir.display())))?.next().is_some();
        if occupied && !force && !resume {
            return Err(CliError::Config(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(CliError::io(format!("create {}", dir.display())))
}

/// Writes the artifacts allowed by the config's formats, their sidecars, the
/// resolved config and the manifest (last).
pub fn emit(dir: &Path, cfg: &RunConfig, artifacts: &[Artifact]) -> Result<Manifest, CliError> {
    let hash = config::config_hash(cfg);
    let version = env!("CARGO_PKG_VERSION");
    let resolved = config::resolved_toml(cfg);
    let mut entries = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        write_atomic(&dir.join(name), bytes)?;
        entries.push(ArtifactEntry { file: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    };
    put(RESOLVED_CONFIG, resolved.as_bytes())?;
    for a in artifacts {
        if let Some(f) = a.format() {
            if !cfg.output.wants(f) {
                continue;
            }
        }
        put(&a.name, &a.bytes)?;
        if a.format() == Some(Format::Csv) {
            let side = Sidecar { file: &a.name, columns: &a.columns, config_hash: &hash, version };
            let mut text = serde_json::to_string_pretty(&side).expect("sidecar serialises");
            text.push('\n');
            put(&format!("{}.meta.json", a.name), text.as_bytes())?;
        }
    }
    let manifest = Manifest {
        tool: "phasemeas".into(),
        version: version.into(),
        scenario: cfg.scenario.name().into(),
        config_hash: hash,
        config: resolved,
        artifacts: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

/// Files whose hashes differ between two manifests.
pub fn diff(expected: &Manifest, actual: &Manifest) -> Vec<String> {
    let mut out = Vec::new();
    for e in &expected.artifacts {
        match actual.artifacts.iter().find(|a| a.file == e.file) {
            Some(a) if a.sha256 == e.sha256 => {}
            Some(_) => out.push(format!("{} differs", e.file)),
            None => out.push(format!("{} missing", e.file)),
        }
    }
    for a in &actual.artifacts {
        if !expected.artifacts.iter().any(|e| e.file == a.file) {
            out.push(format!("{} is new", a.file));
        }
    }
    out
}

pub fn manifest_path(arg: &Path) -> PathBuf {
    if arg.is_dir() {
        arg.join(MANIFEST)
    } else {
        arg.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_builder_writes_header_and_rows() {
        let mut c = Csv::new("a.csv", &[("t", "s"), ("x", "rad")]);
        c.row(&[0.5, 1.0]);
        let a = c.finish();
        assert_eq!(String::from_utf8(a.bytes).unwrap(), "t,x\n0.5,1\n");
        assert_eq!(a.columns[1].unit, "rad");
    }

    #[test]
    fn csv_units_follow_header() {
        let a = Artifact::csv("h.csv", b"bin_lo,bin_hi,count\n0,1,3\n".to_vec(), &["rad", "rad"]);
        assert_eq!(a.columns.len(), 3);
        assert_eq!(a.columns[2].unit, "1");
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn refuses_occupied_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("f"), "x").unwrap();
        assert!(prepare_dir(dir.path(), false, false).is_err());
        assert!(prepare_dir(dir.path(), true, false).is_ok());
        assert!(prepare_dir(&dir.path().join("new"), false, false).is_ok());
    }
}
