use clap::{Parser, Subcommand};
use log::{error, info, warn};
use radnav_core::protocol::DEFAULT_PORT;
use radnav_core::server::{self, LogError, RunOptions, ScenarioConfig, ServerError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

const EXIT_CONFIG: u8 = 2;
const EXIT_BIND: u8 = 3;
const EXIT_CORRUPT_LOG: u8 = 4;
const EXIT_IO: u8 = 1;

/// Ground station for simulated radiation-mapping waypoint missions.
#[derive(Debug, Parser)]
#[command(name = "radnav-server", version, args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH", required = true)]
    scenario: Option<PathBuf>,

    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,

    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Run without wall-clock pacing and exit when the mission ends.
    #[arg(long)]
    headless: bool,

    #[arg(long, value_name = "PATH", env = "RADNAV_LOG_DIR", default_value = ".")]
    log_dir: PathBuf,

    /// Stop after this much simulated time.
    #[arg(long, value_name = "SECONDS")]
    max_sim_s: Option<f64>,

    /// Listen address.
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Re-run a mission log and print its final digest.
    Replay { log: PathBuf },
}

fn log_file_name(seed: u64) -> String {
    let millis = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    format!("radnav-{millis}-seed{seed}.jsonl")
}

fn print_digest(digest: &server::Digest) {
    match serde_json::to_string_pretty(digest) {
        Ok(text) => println!("{text}"),
        Err(e) => error!("cannot print digest: {e}"),
    }
}

fn run(cli: &Cli, scenario: &Path) -> ExitCode {
    let mut config = match ScenarioConfig::load(scenario) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(limit) = cli.max_sim_s {
        if !(limit.is_finite() && limit > 0.0) {
            error!("--max-sim-s must be positive");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let log_path = cli.log_dir.join(log_file_name(config.seed));
    info!("mission log: {}", log_path.display());
    let options = RunOptions { headless: cli.headless, max_sim_s: cli.max_sim_s, log_path: Some(log_path) };
    let addr = format!("{}:{}", cli.bind, cli.port);
    match server::run(config, &addr, &options) {
        Ok(digest) => {
            print_digest(&digest);
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(match e {
                ServerError::Config(_) => EXIT_CONFIG,
                ServerError::Bind { .. } => EXIT_BIND,
                ServerError::Log(_) | ServerError::Io(_) => EXIT_IO,
            })
        }
    }
}

fn replay(path: &Path) -> ExitCode {
    match server::replay(path) {
        Ok(report) => {
            if report.divergent_records > 0 {
                warn!("{} of {} records differ from the original log", report.divergent_records, report.records);
            }
            print_digest(&report.digest);
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{}: {e}", path.display());
            ExitCode::from(match e {
                LogError::Config(_) => EXIT_CONFIG,
                LogError::CorruptLog { .. } => EXIT_CORRUPT_LOG,
                LogError::Io(_) => EXIT_IO,
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match (&cli.command, &cli.scenario) {
        (Some(Command::Replay { log }), _) => replay(log),
        (None, Some(scenario)) => run(&cli, scenario),
        (None, None) => unreachable!("clap requires --scenario without a subcommand"),
    }
}
