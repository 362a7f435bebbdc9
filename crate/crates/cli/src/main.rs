use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use stealthsim::scenario::{
    calibrate_to_sidecar, monte_carlo, run_scenario, DetectorKind, DetectorSetup, ScenarioConfig,
    SimError,
};
use stealthsim::telemetry::{
    flight_node, plant_node, serve_proxy, Link, ProxyMode, CONNECT_PATIENCE,
};

/// Quadcopter vision-mission simulator with stealthy sensor and camera
/// attacks and residual anomaly detectors.
///
/// Exit status: 0 success, 1 configuration or usage error, 2 simulation
/// divergence, 3 input/output or telemetry error.
#[derive(Debug, Parser)]
#[command(name = "stealthsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one mission and write its per-step record and summary.
    Run(RunArgs),
    /// Simulate many seeded missions and report alarm and effectiveness statistics.
    Montecarlo(MonteCarloArgs),
    /// Calibrate a detector on nominal runs and store it in the configuration's sidecar.
    Calibrate(CalibrateArgs),
    /// Relay one plant-to-flight-computer session, optionally attacking it.
    Proxy(ProxyArgs),
    /// Serve the simulated vehicle to a flight computer (or proxy) over TCP.
    Plant(PlantArgs),
    /// Run the flight computer, waiting for one plant connection.
    Flight(FlightArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Scenario TOML file. Detector thresholds are read from its sidecar
    /// `<stem>.thresholds.toml` when present.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Run seed [default: the configuration's seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives run.csv and summary.toml.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Enable the attack section of the configuration.
    #[arg(long)]
    attack: bool,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Number of runs; run i uses seed + i.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
    /// First seed [default: the configuration's seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives summary.toml, alarm_rates.csv and runs.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Enable the attack section of the configuration.
    #[arg(long)]
    attack: bool,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Detector to calibrate: chi2, cusum or recurrent.
    #[arg(long)]
    detector: DetectorKind,
    /// Target per-step false-alarm probability, in (0, 1).
    #[arg(long, default_value_t = 0.01)]
    pfa: f64,
}

#[derive(Debug, Args)]
struct ProxyArgs {
    /// Address the plant connects to.
    #[arg(long, value_name = "ADDR")]
    listen: SocketAddr,
    /// Address of the flight computer.
    #[arg(long, value_name = "ADDR")]
    upstream: SocketAddr,
    /// pass forwards bytes untouched; attack runs the attack engine.
    #[arg(long, default_value = "pass")]
    mode: ProxyMode,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Debug, Args)]
struct PlantArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Run seed [default: the configuration's seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Address of the flight computer or proxy.
    #[arg(long, value_name = "ADDR")]
    connect: SocketAddr,
}

#[derive(Debug, Args)]
struct FlightArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Address to accept the plant connection on.
    #[arg(long, value_name = "ADDR")]
    listen: SocketAddr,
}

fn load(arg: &ConfigArg, attack: bool) -> Result<ScenarioConfig, SimError> {
    let mut cfg = ScenarioConfig::load(&arg.config)?;
    if attack {
        cfg.attack.enabled = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

fn bind(addr: SocketAddr) -> Result<TcpListener, SimError> {
    TcpListener::bind(addr).map_err(|e| SimError::Config(format!("cannot listen on {addr}: {e}")))
}

fn execute(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Run(a) => {
            let cfg = load(&a.config, a.attack)?;
            let detectors = DetectorSetup::for_config(&cfg, &a.config.config)?;
            let record = run_scenario(&cfg, a.seed.unwrap_or(cfg.seed), &detectors)?;
            create_dir(&a.out)?;
            record.write_csv(&a.out.join("run.csv"))?;
            let summary = a.out.join("summary.toml");
            std::fs::write(&summary, record.summary()).map_err(|e| SimError::io(&summary, e))?;
            println!("{} steps written to {}", record.len(), a.out.display());
        }
        Command::Montecarlo(a) => {
            let mut cfg = load(&a.config, a.attack)?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let detectors = DetectorSetup::for_config(&cfg, &a.config.config)?;
            let report = monte_carlo(&cfg, a.runs as usize, &detectors)?;
            report.write(&a.out)?;
            print!("{}", report.summary());
        }
        Command::Calibrate(a) => {
            let cfg = load(&a.config, false)?;
            let sidecar = calibrate_to_sidecar(&cfg, &a.config.config, a.detector, a.pfa)?;
            println!("thresholds written to {}", sidecar.display());
        }
        Command::Proxy(a) => {
            let cfg = load(&a.config, false)?;
            let listener = bind(a.listen)?;
            let summary = serve_proxy(&listener, a.upstream, a.mode, &cfg)?;
            println!(
                "session closed: {} bytes from plant, {} bytes from flight",
                summary.bytes_from_plant, summary.bytes_from_flight
            );
            if let Some(state) = summary.attack_state {
                println!("attack start {:?}, stop {:?}", state.start_step, state.stop);
            }
        }
        Command::Plant(a) => {
            let cfg = load(&a.config, false)?;
            let mut link = Link::connect_patiently(a.connect, CONNECT_PATIENCE)
                .map_err(|e| SimError::Telemetry(format!("{}: {e}", a.connect)))?;
            let session = plant_node(&cfg, a.seed.unwrap_or(cfg.seed), &mut link)?;
            println!("plant served {} steps", session.logs.len());
        }
        Command::Flight(a) => {
            let cfg = load(&a.config, false)?;
            let detectors = DetectorSetup::for_config(&cfg, &a.config.config)?;
            let listener = bind(a.listen)?;
            let (stream, _) = listener
                .accept()
                .map_err(|e| SimError::Telemetry(e.to_string()))?;
            let mut link = Link::new(stream).map_err(|e| SimError::Telemetry(e.to_string()))?;
            let logs = flight_node(&cfg, &detectors, &mut link)?;
            let alarms = logs.iter().filter(|l| l.chi2.alarm).count();
            let landed = logs.last().is_some_and(|l| l.finished);
            println!(
                "flight processed {} steps, {alarms} chi2 alarms, landed {landed}",
                logs.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
