//! Consolidated summary over run manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::manifest::{Manifest, Status};

pub struct Entry {
    pub path: PathBuf,
    pub manifest: Result<Manifest, String>,
}

/// Manifests named by `paths`; directories contribute their
/// `manifest-*.json` files in name order.
pub fn collect(paths: &[PathBuf]) -> Vec<Entry> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .into_iter()
                .flatten()
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    name.starts_with("manifest-") && name.ends_with(".json")
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    files.into_iter().map(|path| Entry { manifest: load(&path), path }).collect()
}

fn load(path: &Path) -> Result<Manifest, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub manifests: usize,
    pub passed: usize,
    pub failed: usize,
    pub errored: usize,
    pub skipped: Vec<Skipped>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Serialize)]
pub struct Skipped {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub path: String,
    pub name: String,
    pub scenario: String,
    pub status: Status,
    pub config_sha256: String,
    pub checks_passed: usize,
    pub checks_total: usize,
    pub failing_checks: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn summarize(entries: &[Entry]) -> Summary {
    let mut s = Summary { manifests: 0, passed: 0, failed: 0, errored: 0, skipped: Vec::new(), runs: Vec::new() };
    for e in entries {
        let path = e.path.display().to_string();
        match &e.manifest {
            Err(reason) => s.skipped.push(Skipped { path, reason: reason.clone() }),
            Ok(m) => {
                s.manifests += 1;
                match m.status {
                    Status::Pass => s.passed += 1,
                    Status::Fail => s.failed += 1,
                    Status::Error => s.errored += 1,
                }
                s.runs.push(RunSummary {
                    path,
                    name: m.name.clone(),
                    scenario: m.scenario.clone(),
                    status: m.status,
                    config_sha256: m.config_sha256.clone(),
                    checks_passed: m.checks.iter().filter(|c| c.pass).count(),
                    checks_total: m.checks.len(),
                    failing_checks: m.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect(),
                    error: m.error.as_ref().map(|e| e.message.clone()),
                });
            }
        }
    }
    s
}

impl Summary {
    /// 0 when every readable manifest passed, 1 when any failed or errored,
    /// 2 when none could be read.
    pub fn exit_code(&self) -> i32 {
        if self.manifests == 0 {
            2
        } else if self.failed + self.errored > 0 {
            1
        } else {
            0
        }
    }

    pub fn render(&self, entries: &[Entry]) -> String {
        let mut out = String::new();
        for e in entries {
            match &e.manifest {
                Err(_) => out.push_str(&format!("{}  SKIPPED (unreadable manifest)\n", e.path.display())),
                Ok(m) => {
                    let status = match m.status {
                        Status::Pass => "PASS",
                        Status::Fail => "FAIL",
                        Status::Error => "ERROR",
                    };
                    out.push_str(&format!(
                        "{}  {status}  {} ({})  config {}\n",
                        e.path.display(),
                        m.name,
                        m.scenario,
                        &m.config_sha256[..m.config_sha256.len().min(12)]
                    ));
                    for c in &m.checks {
                        let value = c.value.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "nan".into());
                        let mark = if c.pass { "ok  " } else { "FAIL" };
                        out.push_str(&format!("    {mark} {:<40} {value} {} {:e}\n", c.name, c.relation.symbol(), c.threshold));
                    }
                    if let Some(err) = &m.error {
                        let step = err.step.map(|s| format!(" at step {s}")).unwrap_or_default();
                        out.push_str(&format!("    error ({}){step}: {}\n", err.kind, err.message));
                    }
                }
            }
        }
        out.push_str(&format!(
            "{} manifest(s): {} passed, {} failed, {} errored, {} skipped\n",
            self.manifests,
            self.passed,
            self.failed,
            self.errored,
            self.skipped.len()
        ));
        out
    }
}
