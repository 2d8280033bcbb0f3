//! Run manifests and artifact output.
//!
//! Every run gets a number `N`. Its artifacts go to `run-NNNN/` and its
//! manifest to `manifest-NNNN.json`, both under the output directory.
//! Numbers are reserved by creating the run directory, so concurrent runs
//! never share one and earlier runs are never overwritten. Files are
//! written to a temporary name and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL: &str = "walklab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    /// Value must equal the threshold exactly (counts).
    #[serde(rename = "==")]
    Equal,
}

impl Relation {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::AtMost => value <= threshold,
            Relation::AtLeast => value >= threshold,
            Relation::Equal => value == threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Equal => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    /// `None` when the measured value is not finite.
    pub value: Option<f64>,
    pub relation: Relation,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub kind: String,
    pub message: String,
    /// Time step at which a solver diverged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

impl RunError {
    pub fn from_library(e: &walklab::Error) -> Self {
        let kind = match e {
            walklab::Error::Dimension(_) => "dimension",
            walklab::Error::Domain(_) => "domain",
            walklab::Error::Parameter(_) => "parameter",
            walklab::Error::Configuration(_) => "configuration",
            walklab::Error::Divergence { .. } => "divergence",
            walklab::Error::Boundary(_) => "boundary",
            walklab::Error::UnsupportedDegree { .. } => "unsupported_degree",
            walklab::Error::Flow(_) => "flow",
            walklab::Error::Degeneracy { .. } => "degeneracy",
            walklab::Error::Convergence(_) => "convergence",
            walklab::Error::Reparametrization { .. } => "reparametrization",
            walklab::Error::Parse { .. } => "parse",
            walklab::Error::Io(_) => "io",
        };
        let step = match e {
            walklab::Error::Divergence { step, .. } => Some(*step),
            _ => None,
        };
        Self { kind: kind.into(), message: e.to_string(), step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub run: u32,
    pub name: String,
    pub scenario: String,
    pub config_sha256: String,
    pub config: BTreeMap<String, String>,
    pub jobs: usize,
    /// Seconds since the Unix epoch at start.
    pub started_unix: f64,
    pub wall_clock_seconds: f64,
    pub status: Status,
    pub checks: Vec<Check>,
    pub norms: BTreeMap<String, Option<f64>>,
    pub fitted_orders: BTreeMap<String, Option<f64>>,
    pub artifacts: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RunError>,
}

impl Manifest {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Replace non-finite values by `None` so the JSON stays parseable.
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn run_number(name: &str) -> Option<u32> {
    let digits = name.strip_prefix("run-").or_else(|| name.strip_prefix("manifest-")?.strip_suffix(".json"))?;
    digits.parse().ok()
}

/// Directory for one run's artifacts.
pub struct RunDir {
    pub number: u32,
    pub root: PathBuf,
    pub dir: PathBuf,
}

impl RunDir {
    /// Reserve the next free run number under `root`.
    pub fn reserve(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        let mut next = fs::read_dir(root)
            .map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?
            .filter_map(|e| e.ok())
            .filter_map(|e| run_number(&e.file_name().to_string_lossy()))
            .max()
            .unwrap_or(0)
            + 1;
        loop {
            let dir = root.join(format!("run-{next:04}"));
            match fs::create_dir(&dir) {
                Ok(()) => return Ok(Self { number: next, root: root.to_path_buf(), dir }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => next += 1,
                Err(e) => return Err(CliError::Io(format!("{}: {e}", dir.display()))),
            }
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(format!("manifest-{:04}.json", self.number))
    }

    /// Write an artifact and describe it for the manifest.
    pub fn write(&self, file: &str, bytes: &[u8]) -> std::io::Result<Artifact> {
        write_atomic(&self.dir.join(file), bytes)?;
        Ok(Artifact {
            path: format!("run-{:04}/{file}", self.number),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        })
    }

    pub fn write_manifest(&self, m: &Manifest) -> Result<PathBuf, CliError> {
        let path = self.manifest_path();
        let mut text = serde_json::to_string_pretty(m).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        write_atomic(&path, text.as_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_numbers_are_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::reserve(tmp.path()).unwrap();
        let b = RunDir::reserve(tmp.path()).unwrap();
        assert_eq!((a.number, b.number), (1, 2));
        fs::remove_dir(&a.dir).unwrap();
        fs::remove_dir(&b.dir).unwrap();
        // a manifest alone still claims its number
        fs::write(tmp.path().join("manifest-0007.json"), "{}").unwrap();
        assert_eq!(RunDir::reserve(tmp.path()).unwrap().number, 8);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("x.csv");
        write_atomic(&p, b"a\n").unwrap();
        write_atomic(&p, b"b\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"b\n");
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
    }

    #[test]
    fn relations() {
        assert!(Relation::AtMost.holds(1.0, 1.0));
        assert!(!Relation::AtLeast.holds(f64::NAN, 1.0));
        assert!(Relation::Equal.holds(3.0, 3.0));
        assert_eq!(finite(f64::INFINITY), None);
    }
}
