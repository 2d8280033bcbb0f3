//! Experiment runner: reads a flat configuration, runs one scenario,
//! writes CSV/JSON artifacts and a manifest, and summarizes manifests.

pub mod config;
pub mod manifest;
pub mod presets;
pub mod report;
pub mod scenarios;

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use config::ExperimentConfig;
use manifest::{Manifest, RunDir, RunError, Status, TOOL, VERSION};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECKS_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: usize,
}

pub struct RunResult {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

impl RunResult {
    pub fn exit_code(&self) -> i32 {
        match self.manifest.status {
            Status::Pass => EXIT_PASS,
            Status::Fail => EXIT_CHECKS_FAILED,
            Status::Error => EXIT_RUNTIME,
        }
    }
}

/// Plan, execute and record one run. Configuration problems are returned
/// before anything is written; failures during execution are recorded in
/// the manifest.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult, CliError> {
    if opts.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let plan = scenarios::plan(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs).build().map_err(|e| CliError::Io(e.to_string()))?;
    let dir = RunDir::reserve(&opts.out)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let hash = cfg.hash();
    let mut ctx = scenarios::Ctx::new(&dir, &hash);
    let outcome = pool.install(|| plan.execute(&mut ctx));
    let error = outcome.err().map(|e| RunError::from_library(&e));
    let status = match &error {
        Some(_) => Status::Error,
        None if !ctx.checks.is_empty() && ctx.checks.iter().all(|c| c.pass) => Status::Pass,
        None => Status::Fail,
    };
    let name = cfg.raw("name").map(String::from).unwrap_or_else(|| cfg.scenario.name().to_string());
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        run: dir.number,
        name,
        scenario: cfg.scenario.name().into(),
        config_sha256: hash.clone(),
        config: cfg.values(),
        jobs: opts.jobs,
        started_unix: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        status,
        checks: ctx.checks,
        norms: ctx.norms,
        fitted_orders: ctx.orders,
        artifacts: ctx.artifacts,
        error,
    };
    let manifest_path = dir.write_manifest(&manifest)?;
    Ok(RunResult { manifest_path, manifest })
}

/// `WALKLAB_*` variables from the process environment.
pub fn env_overrides() -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(config::ENV_PREFIX)).collect();
    v.sort();
    v
}
