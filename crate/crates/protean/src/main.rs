use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protean::config::{ExperimentConfig, InferenceChoice};
use protean::exec::Parallel;
use protean::runner::{self, AuditOptions, CellOutcome, RunSummary};
use protean::writer::RunWriter;
use protean_core::fed::StrategyKind;

#[derive(Parser)]
#[command(name = "protean", version, about = "Federated prototype learning experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured strategy at the first α for each seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train over the full α × seed grid and emit the summary tables.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Attack the shared prototypes stored in a run's final checkpoints.
    Audit {
        run_dir: PathBuf,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<StrategyKind>,
        /// Retrain at every `audit.sigmas` value and attack each run.
        #[arg(long)]
        dp_sweep: bool,
        /// Output directory (default: <RUN_DIR>/audit).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-derive the summary tables from a run's records.
    Report {
        run_dir: PathBuf,
        /// Write the tables here instead of printing them.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Command-line overrides of config fields.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategies: Option<Vec<StrategyKind>>,
    #[arg(long)]
    participants: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dp_sigma: Option<f64>,
    #[arg(long, value_parser = parse_inference)]
    inference: Option<InferenceChoice>,
    /// Attack the audit strategy's prototypes after training.
    #[arg(long)]
    audit: bool,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    parse_enum(s)
}

fn parse_inference(s: &str) -> Result<InferenceChoice, String> {
    parse_enum(s)
}

impl Overrides {
    fn apply(self, config: &mut ExperimentConfig) -> protean::Result<()> {
        let f = &mut config.federation;
        if let Some(v) = self.output_dir {
            config.output_dir = v;
        }
        if let Some(v) = self.seeds {
            config.seeds = v;
        }
        if let Some(v) = self.alpha {
            f.alpha = v;
        }
        if let Some(v) = self.strategies {
            f.strategies = v;
        }
        if let Some(v) = self.participants {
            f.participants = v;
        }
        if let Some(v) = self.rounds {
            f.rounds = v;
        }
        if let Some(v) = self.lambda {
            f.lambda = v;
        }
        if let Some(v) = self.mu {
            f.mu = v;
        }
        if let Some(v) = self.learning_rate {
            f.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            f.epochs = v;
        }
        if let Some(v) = self.batch_size {
            f.batch_size = v;
        }
        if let Some(v) = self.dp_sigma {
            f.dp_sigma = v;
        }
        if let Some(v) = self.inference {
            f.inference = v;
        }
        if self.audit {
            config.audit.enabled = true;
        }
        config.validate()
    }
}

fn print_cell(outcome: &CellOutcome) {
    let cell = outcome.prepared.cell;
    let accs: Vec<String> = outcome.arms.iter().map(|a| format!("{} {:.2}", a.kind().name(), 100.0 * a.mean_metric(|m| m.macro_accuracy))).collect();
    eprintln!("alpha={} seed={}: {} ({:.1} s)", cell.alpha, cell.seed, accs.join(", "), outcome.seconds);
}

fn print_summary(summary: &RunSummary) {
    eprintln!("wrote {} files to {}", summary.manifest.files.len() + 1, summary.output_dir.display());
}

fn load(config: &Path, overrides: Overrides) -> protean::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(config)?;
    overrides.apply(&mut config)?;
    Ok(config)
}

fn execute(command: Command) -> protean::Result<()> {
    match command {
        Command::Run { config, overrides } => {
            let config = load(&config, overrides)?;
            let summary = runner::run_experiment(&config, &Parallel, &mut print_cell)?;
            print_summary(&summary);
        }
        Command::Sweep { config, overrides } => {
            let config = load(&config, overrides)?;
            let summary = runner::sweep(&config, &Parallel, &mut print_cell)?;
            print_summary(&summary);
            if let Some((_, table)) = protean::tables::derive_tables(&summary.records).into_iter().find(|(n, _)| *n == "table1.md") {
                print!("{table}");
            }
        }
        Command::Audit { run_dir, strategy, dp_sweep, out } => {
            let options = AuditOptions {
                strategy,
                dp_sweep,
                output_dir: out,
            };
            let summary = runner::audit_run(&run_dir, &options, &Parallel)?;
            print_summary(&summary);
        }
        Command::Report { run_dir, out } => {
            let tables = runner::report(&run_dir)?;
            match out {
                Some(out) => {
                    let config = ExperimentConfig::from_run_dir(&run_dir)?;
                    let mut writer = RunWriter::create(&out)?;
                    for (name, text) in &tables {
                        writer.write(&format!("tables/{name}"), text.as_bytes())?;
                    }
                    writer.finish(&config.hash())?;
                    eprintln!("wrote {} tables to {}", tables.len(), out.display());
                }
                None => {
                    for (name, text) in &tables {
                        println!("== {name}\n{text}");
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
