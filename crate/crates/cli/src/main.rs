use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcf_cli::{load_config, probe, run_scenario, validate_obstacle, Outcome, ScenarioError};
use serde_json::json;

/// Penalized α-Gauss curvature flow with shrinking obstacles.
///
/// Exit codes: 0 all checks pass, 2 a check failed, 3 solver error, 4 config error.
/// `GCF_THREADS` caps the worker threads.
#[derive(Parser)]
#[command(name = "gcf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow, the requested checks and probes, and write artifacts.
    Run(Target),
    /// Check the obstacle admissibility conditions.
    ValidateObstacle(Target),
    /// Run the free-boundary probes on the final-δ run.
    Probe(Target),
}

#[derive(clap::Args)]
struct Target {
    /// Scenario config (JSON).
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

type Action = fn(&gcf_cli::ScenarioConfig, &Path) -> Result<Outcome, ScenarioError>;

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GCF_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GCF_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn fail(out: Option<&Path>, code: i32, kind: &str, message: &str, failing: &[&str]) -> ExitCode {
    let doc = json!({ "exit_code": code, "kind": kind, "message": message, "failing": failing });
    eprintln!("{}", serde_json::to_string(&doc).expect("plain JSON"));
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("failure.json"), format!("{doc:#}\n"));
        }
    }
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        return fail(None, 4, "config", &e, &[]);
    }
    let (target, action): (&Target, Action) = match &cli.command {
        Command::Run(t) => (t, run_scenario),
        Command::ValidateObstacle(t) => (t, validate_obstacle),
        Command::Probe(t) => (t, probe),
    };
    let cfg = match load_config(&target.config) {
        Ok(c) => c,
        Err(e) => return fail(None, 4, "config", &e.to_string(), &[]),
    };
    let out = target.out.clone().unwrap_or_else(|| cfg.output_dir(&target.config));
    // a stale failure report from an earlier invocation would be misleading
    let _ = std::fs::remove_file(out.join("failure.json"));
    match action(&cfg, &out) {
        Ok(outcome) => {
            for r in &outcome.reports {
                println!("{:<28} {} margin {:e}", r.id, if r.pass { "pass" } else { "FAIL" }, r.margin);
            }
            match outcome.exit_code() {
                0 => ExitCode::SUCCESS,
                code => fail(Some(&out), code, "check", "checks failed", &outcome.failing()),
            }
        }
        Err(e) => fail(Some(&out), e.exit_code(), e.kind(), &e.to_string(), &[]),
    }
}
