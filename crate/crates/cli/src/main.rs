use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use walklab_cli::config::{ExperimentConfig, Scenario, EQUATIONS};
use walklab_cli::manifest::Status;
use walklab_cli::{env_overrides, presets, report, run, RunOptions, EXIT_CONFIG};

/// Persistent random walks, their PDE limits and symmetry checks.
#[derive(Parser)]
#[command(name = "walklab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts and manifest.
    Run(RunArgs),
    /// Summarize manifests (files or output directories).
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Also write the summary as JSON to this file.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// List built-in configurations and the names they can refer to.
    ListPresets,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (`key = value` lines).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads for independent seeds, epsilons and refinement levels.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Base random seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn run_command(args: RunArgs) -> ExitCode {
    let env = env_overrides();
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path, &env, args.seed),
        (None, Some(name)) => match presets::find(name) {
            Some(p) => ExperimentConfig::parse(&format!("preset:{name}"), p.text, &env, args.seed),
            None => {
                eprintln!("error: unknown preset {name:?}; see `walklab list-presets`");
                return code(EXIT_CONFIG);
            }
        },
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return code(EXIT_CONFIG);
        }
    };
    let result = match run(&cfg, &RunOptions { out: args.out, jobs: args.jobs }) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return code(EXIT_CONFIG);
        }
    };
    let m = &result.manifest;
    for c in &m.checks {
        let value = c.value.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "nan".into());
        println!("{} {} = {value} ({} {:e}) {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.relation.symbol(), c.threshold, c.detail);
    }
    if let Some(err) = &m.error {
        let step = err.step.map(|s| format!(" at step {s}")).unwrap_or_default();
        eprintln!("error ({}){step}: {}", err.kind, err.message);
    }
    let status = match m.status {
        Status::Pass => "pass",
        Status::Fail => "fail",
        Status::Error => "error",
    };
    println!("{status}: {} in {:.2} s, manifest {}", m.scenario, m.wall_clock_seconds, result.manifest_path.display());
    code(result.exit_code())
}

fn report_command(paths: Vec<PathBuf>, json: Option<PathBuf>) -> ExitCode {
    let entries = report::collect(&paths);
    let summary = report::summarize(&entries);
    for s in &summary.skipped {
        eprintln!("warning: skipping {}: {}", s.path, s.reason);
    }
    print!("{}", summary.render(&entries));
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        if let Err(e) = walklab_cli::manifest::write_atomic(&path, text.as_bytes()) {
            eprintln!("error: {}: {e}", path.display());
            return code(EXIT_CONFIG);
        }
    }
    code(summary.exit_code())
}

fn list_presets() -> ExitCode {
    println!("configurations (walklab run --preset NAME):");
    for p in presets::PRESETS {
        println!("  {:<22} {}", p.name, p.description);
    }
    println!("scenarios: {}", Scenario::ALL.map(|s| s.name()).join(", "));
    println!("equations: {}", EQUATIONS.join(", "));
    println!("similarity presets: {}", walklab::similarity::PRESET_NAMES.join(", "));
    println!("algebras: {}", walklab::symmetry::BUILTIN_ALGEBRAS.join(", "));
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run_command(args),
        Command::Report { paths, json } => report_command(paths, json),
        Command::ListPresets => list_presets(),
    }
}
