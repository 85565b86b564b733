use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use crahn_sim::harness::{self, ConfigError, Experiment, HarnessError, ScenarioConfig};
use crahn_sim::situation::{self, SituationDb};

#[derive(Parser)]
#[command(name = "crahn", version, about = "Disaster-response cognitive radio ad hoc network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications and write CSV, JSON and SVG outputs.
    Run {
        /// TOML scenario file; defaults apply when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// detection, spectrum, discovery or all.
        #[arg(long, default_value = "all")]
        experiment: Experiment,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a scenario file and print the resolved configuration.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Build the situation table from a CSV database and XML messages.
    RenderSituation {
        /// CSV with latitude, longitude, situation, timestamp, short_message columns.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Situation XML documents applied in order after the database.
        #[arg(long, num_args = 1..)]
        xml: Vec<PathBuf>,
        /// Where to write the table as CSV; the text table goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn scenario(path: Option<&Path>) -> Result<ScenarioConfig, ConfigError> {
    match path {
        Some(p) => harness::load_scenario(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario: path, experiment, seed, replications, out } => {
            let mut cfg = scenario(path.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            cfg.validate()?;
            let outputs = harness::run_experiment(&cfg, experiment, &out)?;
            for o in &outputs {
                for a in &o.report.aggregates {
                    println!("{:<10} {:<22} {:<36} n={:<3} mean={:.6} std={:.6}", o.report.experiment, a.group, a.metric, a.n, a.mean, a.std);
                }
                for f in &o.files {
                    info!("wrote {}", f.display());
                }
            }
            let failed: usize = outputs.iter().map(|o| o.report.failures.len()).sum();
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} replication(s) failed; see the report files")));
            }
            Ok(())
        }
        Command::Validate { scenario: path } => {
            let cfg = harness::load_scenario(&path)?;
            println!("{} is valid: {} replications of {} s from seed {}", path.display(), cfg.replications, cfg.sim_time_s, cfg.seed);
            Ok(())
        }
        Command::RenderSituation { db, xml, out } => {
            let mut table = match &db {
                Some(p) => {
                    let f = fs::File::open(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                    situation::read_db_csv(f).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
                }
                None => SituationDb::default(),
            };
            for p in &xml {
                let bytes = fs::read(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                let rec = situation::decode_situation(&bytes).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                let newer = table.upsert(rec).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
                if !newer {
                    info!("{} is not newer than the stored record; ignored", p.display());
                }
            }
            let rows = situation::export_situation_table(&table);
            print!("{}", situation::render_table_text(&rows));
            if let Some(o) = out {
                let f = fs::File::create(&o).map_err(|e| Failure::Runtime(format!("{}: {e}", o.display())))?;
                situation::write_table_csv(&rows, f).map_err(|e| Failure::Runtime(format!("{}: {e}", o.display())))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            error!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            error!("{msg}");
            ExitCode::from(2)
        }
    }
}
