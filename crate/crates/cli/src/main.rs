use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use comanip_cli::service::{self, ServiceConfig};
use comanip_core::analysis::{compute_metrics, EffortSample};
use comanip_core::experiment::{run_batch, write_outputs, ExperimentConfig};
use comanip_core::simworld::{read_csv, ControllerKind, Scenario};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAULT: u8 = 3;

#[derive(Parser)]
#[command(name = "comanip", version, about = "Shared-load co-manipulation experiments and live sessions")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of reaching trials and write summary, per-trial and plot tables.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this controller (proposed, admittance, fixed_goal_ds).
        #[arg(long, value_parser = parse_controller)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Recompute trial metrics from a tick log and print them as JSON.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Experiment config supplying completion thresholds and horizon.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve an interactive session over WebSocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        /// Scenario JSON; a built-in reaching task otherwise.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown controller {s:?}; expected proposed, admittance or fixed_goal_ds"))
}

enum Failure {
    Config(String),
    Fault(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> ExitCode {
        match self {
            Self::Config(_) => ExitCode::from(EXIT_CONFIG),
            Self::Fault(_) => ExitCode::from(EXIT_FAULT),
            Self::Other(_) => ExitCode::FAILURE,
        }
    }
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn run(
    config: &Path,
    controller: Option<ControllerKind>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| config_err(config, e))?;
    if let Some(c) = controller {
        cfg.controllers = vec![c];
    }
    if let Some(n) = trials {
        cfg.n_trials = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| config_err(config, e))?;

    let result = run_batch(&cfg, Some(&out.join("logs"))).map_err(|e| Failure::Other(e.to_string()))?;
    write_outputs(&result, out).map_err(|e| Failure::Other(e.to_string()))?;
    for m in &result.summary.methods {
        println!(
            "{:<14} completed {:>3}/{:<3} time {:6.2} s  lin impulse {:7.2} N·s  ang impulse {:6.2} N·m·s",
            m.controller.as_str(),
            m.completed,
            m.n_trials,
            m.completion_time.median,
            m.lin_impulse.median,
            m.ang_impulse.median,
        );
    }
    println!("wrote {}", out.display());
    let faults: Vec<String> = result
        .trials
        .iter()
        .filter_map(|t| {
            t.fault
                .as_ref()
                .map(|f| format!("{} trial {}: {f}", t.controller.as_str(), t.trial))
        })
        .collect();
    if faults.is_empty() {
        Ok(())
    } else {
        Err(Failure::Fault(faults.join("\n")))
    }
}

fn replay(log: &Path, config: Option<&Path>) -> Result<(), Failure> {
    let (completion, horizon) = match config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p).map_err(|e| config_err(p, e))?;
            (cfg.completion, cfg.sim.horizon)
        }
        None => {
            let d = ExperimentConfig::new(1, 0);
            (d.completion, d.sim.horizon)
        }
    };
    let file = File::open(log).map_err(|e| config_err(log, e))?;
    let ticks = read_csv(BufReader::new(file)).map_err(|e| config_err(log, e))?;
    let last = ticks
        .last()
        .ok_or_else(|| config_err(log, "log has no ticks"))?;
    let dt = match ticks.as_slice() {
        [a, b, ..] => b.t - a.t,
        _ => ExperimentConfig::new(1, 0).sim.dt_ctrl,
    };
    let samples: Vec<EffortSample> = ticks.iter().map(|r| r.effort()).collect();
    let metrics = compute_metrics(&samples, dt, &last.goal, &completion, horizon);
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Failure::Other(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn serve(bind: SocketAddr, scenario: Option<&Path>) -> Result<(), Failure> {
    let mut cfg = ServiceConfig {
        bind,
        ..ServiceConfig::default()
    };
    if let Some(p) = scenario {
        cfg.scenario = Scenario::load(p).map_err(|e| config_err(p, e))?;
        cfg.tick_hz = 1.0 / cfg.scenario.sim.dt_ctrl;
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Other(e.to_string()))?;
    rt.block_on(service::serve(cfg)).map_err(|e| match e {
        service::ServiceError::Scenario(e) => Failure::Config(e.to_string()),
        e => Failure::Other(e.to_string()),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COMANIP_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Run {
            config,
            controller,
            trials,
            seed,
            out,
        } => run(config, *controller, *trials, *seed, out),
        Command::Replay { log, config } => replay(log, config.as_deref()),
        Command::Serve { bind, scenario } => serve(*bind, scenario.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("config error", m),
                Failure::Fault(m) => ("episode fault", m),
                Failure::Other(m) => ("error", m),
            };
            eprintln!("comanip: {kind}: {msg}");
            f.code()
        }
    }
}
