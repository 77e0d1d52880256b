//! `fediot` command line: run scenarios, print flow matrices, validate
//! scenario files, or serve the control API over a live run.

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fediot::{api, serve};
use fediot_core::scenario::{self, RunReport, ScenarioError, ScenarioSpec, World};
use fediot_core::sim::EventLog;

#[derive(Debug, Parser)]
#[command(name = "fediot", version, about = "Federated 5G and building-IoT simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and check its expectations. Exits 0 iff all pass.
    Run {
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event log as NDJSON.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the run report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Serve the control API while advancing virtual time in real time.
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Virtual milliseconds per wall-clock millisecond in serve mode.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Print the PEP flow matrix and compare it with the declared one.
    Matrix {
        scenario: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check a scenario file and report every problem found.
    Validate { scenario: PathBuf },
}

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;

fn load(path: &Path) -> Result<ScenarioSpec, ExitCode> {
    scenario::load(path).map_err(|e| {
        match e {
            ScenarioError::Validation(errs) => {
                eprintln!("{}: {} problem(s)", path.display(), errs.len());
                for err in errs {
                    eprintln!("  {err}");
                }
            }
            other => eprintln!("{other}"),
        }
        ExitCode::from(EXIT_INVALID)
    })
}

fn write_outputs(report: &RunReport, log: &EventLog, log_path: Option<&Path>, report_path: Option<&Path>) -> Result<()> {
    if let Some(p) = log_path {
        std::fs::write(p, log.to_ndjson()).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = report_path {
        let text = serde_json::to_string_pretty(report)?;
        std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn verdict(report: &RunReport) -> ExitCode {
    print!("{}", report.render());
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

async fn serve_run(spec: &ScenarioSpec, port: u16, speed: f64) -> Result<(RunReport, EventLog)> {
    anyhow::ensure!(speed > 0.0, "--speed must be positive");
    let world = World::new(spec)?;
    let shared = Arc::new(Mutex::new(world));
    let driver = tokio::spawn(serve::drive(Arc::clone(&shared), speed));
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("serving control API on http://{addr}/api/v1 (Ctrl-C to stop)");
    axum::serve(listener, api::router(Arc::clone(&shared)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    driver.abort();
    let world = shared.lock().unwrap_or_else(|p| p.into_inner());
    let report = scenario::report(&world);
    Ok((report, world.log().clone()))
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => {
            let spec = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return Ok(code),
            };
            println!(
                "{}: ok ({} timeline entries, {} expectations)",
                scenario.display(),
                spec.timeline.len(),
                spec.expectations.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Matrix { scenario, json } => {
            let spec = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return Ok(code),
            };
            let m = scenario::flow_matrix(&spec)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&m)?);
            } else {
                print!("{}", scenario::render_matrix(&m));
            }
            if spec.access_matrix.is_empty() {
                return Ok(ExitCode::SUCCESS);
            }
            let diff = scenario::matrix_diff(&m, &spec.access_matrix);
            for (row, col, got, want) in &diff {
                eprintln!("mismatch {row}/{col}: observed {got:?}, declared {want:?}");
            }
            Ok(if diff.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED)
            })
        }
        Command::Run {
            scenario,
            seed,
            log,
            report,
            serve,
            port,
            speed,
        } => {
            let mut spec = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return Ok(code),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (run_report, event_log) = if serve {
                tokio::runtime::Runtime::new()?.block_on(serve_run(&spec, port, speed))?
            } else {
                scenario::run(&spec)?
            };
            write_outputs(&run_report, &event_log, log.as_deref(), report.as_deref())?;
            Ok(verdict(&run_report))
        }
    }
}
