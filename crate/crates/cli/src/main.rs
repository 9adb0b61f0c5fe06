use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use negotiation_core::agent::{load_roster, BackendBinding, ChatModelConfig};
use negotiation_core::pipeline::{ErrorClass, Pipeline, PipelineError, Stage};
use negotiation_core::scenario::{built_in_ids, enumerate_frontier, load_catalog, CatalogSource, ScenarioKind};
use negotiation_core::style::{icc_3_1, pearson_r, RatingsMatrix};
use negotiation_core::tournament::tournament_status;
use negotiation_core::Execution;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(name = "negotiate", version, about = "Round-robin negotiation tournaments between prompt-defined agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(short, long, default_value = "negotiate.toml")]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// List the scenario catalog.
    Catalog {
        /// Scenario files to list instead of the built-ins.
        files: Vec<PathBuf>,
        /// Also report the joint-value maximum of integrative scenarios.
        #[arg(long)]
        frontier: bool,
    },
    /// Roster utilities.
    Roster {
        #[command(subcommand)]
        command: RosterCommand,
    },
    /// Run pipeline stages (all by default).
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated subset of tournament,score,features,style,analyze,report.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
        /// Stop the tournament after this many sessions.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Continue an interrupted tournament.
    Resume {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Show tournament progress.
    Status {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Extract agreements and write the outcome table.
    Score {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Write the linguistic feature table.
    Features {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Score agent prompts for warmth and dominance.
    Style {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Fit the regression models.
    Analyze {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Write the run report.
    Report {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Rater-agreement checks on external ratings.
    Agreement {
        #[command(subcommand)]
        command: AgreementCommand,
    },
}

#[derive(Subcommand)]
enum RosterCommand {
    /// Parse a roster and list its agents.
    Validate { roster: PathBuf },
}

#[derive(Subcommand)]
enum AgreementCommand {
    /// ICC(3,1) over a targets × raters grid (CSV: target,<rater>,...).
    Icc {
        grid: PathBuf,
        /// Fail (exit 4) when the coefficient is below this value.
        #[arg(long)]
        min: Option<f64>,
    },
    /// Pearson correlation between two columns of a CSV file.
    Pearson {
        file: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        min: Option<f64>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.class() {
            ErrorClass::Config => EXIT_CONFIG,
            ErrorClass::Runtime => EXIT_RUNTIME,
            ErrorClass::Validation => EXIT_VALIDATION,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: impl ToString) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.to_string() }
}

fn validation_error(message: impl ToString) -> Failure {
    Failure { code: EXIT_VALIDATION, message: message.to_string() }
}

fn run_stages(config: &Path, stages: &[Stage], stop_after: Option<usize>) -> Result<(), Failure> {
    let mut pipeline = Pipeline::load(config)?;
    pipeline.stop_after = stop_after;
    let backends = pipeline.default_backends()?;
    log::info!("config {} ({} agents, {} scenarios)", pipeline.config_hash, pipeline.roster.len(), pipeline.scenarios.len());
    let outcome = pipeline.run(stages, &backends)?;
    if let Some(r) = &outcome.tournament {
        println!(
            "tournament: {}/{} completed, {} executed, {} failed, {} aborted attempts, {:.1}s",
            r.completed,
            r.schedule_size,
            r.executed,
            r.failed.len(),
            r.aborted_attempts,
            r.wall_clock_secs
        );
        if r.interrupted {
            println!("tournament interrupted; continue with `negotiate resume`");
        }
    }
    for note in &outcome.notes {
        println!("note: {note}");
    }
    println!(
        "stages {} done; artifacts in {}",
        outcome.stages.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
        pipeline.artifacts.dir.display()
    );
    Ok(())
}

fn catalog(files: &[PathBuf], frontier: bool) -> Result<(), Failure> {
    let sources: Vec<CatalogSource> = if files.is_empty() {
        vec![CatalogSource::AllBuiltIns]
    } else {
        files.iter().cloned().map(CatalogSource::File).collect()
    };
    for source in &sources {
        for s in load_catalog(source).map_err(config_error)? {
            let issues = s.issues.iter().map(|i| i.name.as_str()).collect::<Vec<_>>().join(", ");
            let mut line = format!(
                "{:<12} {:<13} {} vs {}; max {} exchanges",
                s.id, s.kind.to_string(), s.roles[0].name, s.roles[1].name, s.max_exchanges
            );
            if !issues.is_empty() {
                line.push_str(&format!("; issues: {issues}"));
            }
            if frontier && s.kind == ScenarioKind::Integrative {
                let f = enumerate_frontier(&s, Execution::default()).map_err(config_error)?;
                line.push_str(&format!("; max joint {}", f.max_joint));
            }
            println!("{line}");
        }
    }
    if files.is_empty() {
        log::debug!("built-ins: {}", built_in_ids().join(", "));
    }
    Ok(())
}

fn validate_roster(path: &Path) -> Result<(), Failure> {
    let roster = load_roster(path, &ChatModelConfig::default()).map_err(config_error)?;
    for a in &roster {
        let backend = match &a.backend {
            BackendBinding::ChatModel(c) => format!("chat model {} (temperature {:.2})", c.model_name, c.temperature),
            BackendBinding::Scripted(c) => format!("scripted {}", c.policy),
        };
        println!("{:<24} {backend}", a.agent_id);
    }
    println!("{} agent(s) valid", roster.len());
    Ok(())
}

fn check_min(name: &str, value: f64, min: Option<f64>) -> Result<(), Failure> {
    println!("{name} = {value:.6}");
    match min {
        Some(m) if value < m => Err(validation_error(format!("{name} {value:.6} is below the required {m}"))),
        _ => Ok(()),
    }
}

fn read_columns(file: &Path, x: &str, y: &str) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(file)
        .map_err(config_error)?;
    let headers = reader.headers().map_err(config_error)?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| config_error(format!("{}: no column `{name}`", file.display())))
    };
    let (ix, iy) = (index(x)?, index(y)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(validation_error)?;
        let cell = |k: usize| -> Result<f64, Failure> {
            record
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| validation_error(format!("{} row {}: missing or non-numeric value", file.display(), i + 1)))
        };
        xs.push(cell(ix)?);
        ys.push(cell(iy)?);
    }
    Ok((xs, ys))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Catalog { files, frontier } => catalog(&files, frontier),
        Command::Roster { command: RosterCommand::Validate { roster } } => validate_roster(&roster),
        Command::Run { config, stages, stop_after } => {
            let stages = if stages.is_empty() { Stage::ALL.to_vec() } else { stages };
            run_stages(&config.config, &stages, stop_after)
        }
        Command::Resume { config } => run_stages(&config.config, &[Stage::Tournament], None),
        Command::Status { config } => {
            let pipeline = Pipeline::load(&config.config)?;
            let state = pipeline.tournament_state()?;
            let status = tournament_status(&state, &pipeline.run_options()).map_err(PipelineError::from)?;
            println!("config {}", pipeline.config_hash);
            println!(
                "{} scheduled, {} completed, {} failed, {} pending{}",
                status.schedule_size,
                status.completed,
                status.failed,
                status.pending,
                if status.finished { " (finished)" } else { "" }
            );
            Ok(())
        }
        Command::Score { config } => run_stages(&config.config, &[Stage::Score], None),
        Command::Features { config } => run_stages(&config.config, &[Stage::Features], None),
        Command::Style { config } => run_stages(&config.config, &[Stage::Style], None),
        Command::Analyze { config } => run_stages(&config.config, &[Stage::Analyze], None),
        Command::Report { config } => run_stages(&config.config, &[Stage::Report], None),
        Command::Agreement { command: AgreementCommand::Icc { grid, min } } => {
            let matrix = RatingsMatrix::read(&grid).map_err(validation_error)?;
            let icc = icc_3_1(&matrix).map_err(validation_error)?;
            check_min("ICC(3,1)", icc, min)
        }
        Command::Agreement { command: AgreementCommand::Pearson { file, x, y, min } } => {
            let (xs, ys) = read_columns(&file, &x, &y)?;
            let r = pearson_r(&xs, &ys).map_err(validation_error)?;
            check_min("r", r, min)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
