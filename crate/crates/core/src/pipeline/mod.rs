//! Reproducible end-to-end runs driven by one TOML configuration file.
//!
//! Stages run in dependency order: tournament, score, features, style,
//! analyze, report. Every artifact carries the configuration hash, and a
//! stage refuses inputs stamped with a different hash. With scripted agents
//! a rerun rewrites every artifact byte for byte.

mod emit;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use emit::{emit_heatmap_grid, emit_table, read_analysis_rows, AnalysisRow, HeatCell, HeatmapGrid, TableFormat};

use crate::agent::{
    load_roster, AgentSpec, AuditLog, BackendBinding, Backends, ChatModelConfig, HttpTransport, RateLimiters,
    ResponseCache, RetryPolicy, RosterError, TokenUsage,
};
use crate::exec::Execution;
use crate::features::{feature_table, Feature, FeatureRow, LexiconError, LexiconSet};
use crate::scenario::{load_catalog, CatalogSource, ScenarioError, ScenarioSpec};
use crate::scoring::{aggregate_outcomes, extract_agreement, score_outcome, AgentSummary, Extractor, Metric, OutcomeRow};
use crate::session::{read_transcripts, InstrumentError, SviInstrument, Termination, Transcript};
use crate::stats::{estimate, ClusterDim, Family, FitResult, ModelSpec, ObservationRow, TermSet};
use crate::style::{score_roster_styles, synthetic_style_table, StyleScores};
use crate::table::{read_table, write_atomic, write_table, Stamp, TableError, ENGINE_VERSION};
use crate::tournament::{
    ranking_trajectory, run_tournament, Checkpoint, FailedPairing, RunOptions, RunReport, TournamentError,
    TournamentState,
};

pub const API_KEY_ENV: &str = "NEGOTIATE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_reply_tokens")]
    pub max_reply_tokens: usize,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    /// Overridden by the `NEGOTIATE_API_KEY` environment variable.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Concurrent requests per endpoint.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub cache: bool,
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

fn default_model() -> String {
    ChatModelConfig::default().model_name
}
fn default_temperature() -> f64 {
    ChatModelConfig::default().temperature
}
fn default_max_reply_tokens() -> usize {
    ChatModelConfig::default().max_reply_tokens
}
fn default_endpoint() -> String {
    ChatModelConfig::default().endpoint
}
fn default_timeout() -> u64 {
    120
}
fn default_rate_limit() -> usize {
    8
}
fn default_retries() -> usize {
    RetryPolicy::default().max_retries
}

impl Default for BackendConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

impl BackendConfig {
    pub fn chat_defaults(&self) -> ChatModelConfig {
        ChatModelConfig {
            model_name: self.model.clone(),
            temperature: self.temperature,
            max_reply_tokens: self.max_reply_tokens,
            endpoint: self.endpoint.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMethod {
    #[default]
    Marker,
    Model,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default)]
    pub method: ExtractionMethod,
    #[serde(default)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleSource {
    #[default]
    Rater,
    Synthetic,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleConfig {
    #[serde(default)]
    pub source: StyleSource,
    /// Style table for `source = "file"`.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Defaults to the backend model.
    #[serde(default)]
    pub rater_model: Option<String>,
    #[serde(default)]
    pub rater_temperature: f64,
    /// Defaults to the run seed.
    #[serde(default)]
    pub synthetic_seed: Option<u64>,
}

impl Default for StyleConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_terms")]
    pub terms: Vec<TermSet>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default = "default_cluster")]
    pub cluster: Vec<ClusterDim>,
    #[serde(default)]
    pub small_sample_correction: bool,
    /// Outcome metrics to model; all when absent.
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub features: bool,
    #[serde(default = "default_bins")]
    pub heatmap_bins: usize,
}

fn default_terms() -> Vec<TermSet> {
    vec![TermSet::Main, TermSet::Quadratic, TermSet::Interaction]
}
fn default_true() -> bool {
    true
}
fn default_cluster() -> Vec<ClusterDim> {
    ClusterDim::ALL.to_vec()
}
fn default_bins() -> usize {
    5
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

/// The whole experiment. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub roster: PathBuf,
    /// Built-in scenario ids or scenario file paths.
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub sequential: bool,
    #[serde(default)]
    pub svi_items: Option<PathBuf>,
    #[serde(default)]
    pub lexicon_dir: Option<PathBuf>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub style: StyleConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_scenarios() -> Vec<String> {
    vec!["chair".into(), "rental".into(), "employment".into()]
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_concurrency() -> usize {
    8
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig, PipelineError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(format!("{origin}: {e}")))?;
        if config.scenarios.is_empty() {
            return Err(PipelineError::Config(format!("{origin}: `scenarios` is empty")));
        }
        if config.concurrency == 0 {
            return Err(PipelineError::Config(format!("{origin}: `concurrency` must be at least 1")));
        }
        if !(0.0..=2.0).contains(&config.backend.temperature) {
            return Err(PipelineError::Config(format!(
                "{origin}: backend temperature {} outside [0, 2]",
                config.backend.temperature
            )));
        }
        Ok(config)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("stage `{stage}` needs {missing}; run stage `{run_first}` first")]
    Prerequisite {
        stage: Stage,
        run_first: Stage,
        missing: PathBuf,
    },
    #[error(transparent)]
    Roster(#[from] RosterError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Tournament(#[from] TournamentError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("validation: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Runtime,
    Validation,
}

impl PipelineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Config(_)
            | PipelineError::Prerequisite { .. }
            | PipelineError::Roster(_)
            | PipelineError::Scenario(_)
            | PipelineError::Instrument(_)
            | PipelineError::Lexicon(_) => ErrorClass::Config,
            PipelineError::Tournament(TournamentError::Config(_)) => ErrorClass::Config,
            PipelineError::Tournament(TournamentError::ForeignCheckpoint { .. }) => ErrorClass::Validation,
            PipelineError::Table(TableError::HashMismatch { .. } | TableError::Unstamped { .. } | TableError::Csv { .. }) => {
                ErrorClass::Validation
            }
            PipelineError::Validation(_) => ErrorClass::Validation,
            PipelineError::Tournament(_) | PipelineError::Table(_) | PipelineError::Runtime(_) => ErrorClass::Runtime,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tournament,
    Score,
    Features,
    Style,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Tournament,
        Stage::Score,
        Stage::Features,
        Stage::Style,
        Stage::Analyze,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tournament => "tournament",
            Stage::Score => "score",
            Stage::Features => "features",
            Stage::Style => "style",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s.trim()).ok_or_else(|| {
            format!("unknown stage `{s}` (valid: {})", Stage::ALL.map(|s| s.as_str()).join(", "))
        })
    }
}

/// Where each stage writes.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub transcripts: PathBuf,
    pub checkpoint: PathBuf,
    pub aborted: PathBuf,
    pub tournament: PathBuf,
    pub outcomes: PathBuf,
    pub agent_summary: PathBuf,
    pub features: PathBuf,
    pub style: PathBuf,
    pub analysis_csv: PathBuf,
    pub analysis_text: PathBuf,
    pub heatmaps: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path, checkpoint: Option<PathBuf>) -> Artifacts {
        Artifacts {
            dir: dir.to_path_buf(),
            transcripts: dir.join("transcripts.jsonl"),
            checkpoint: checkpoint.unwrap_or_else(|| dir.join("checkpoint.json")),
            aborted: dir.join("aborted.jsonl"),
            tournament: dir.join("tournament.json"),
            outcomes: dir.join("outcomes.csv"),
            agent_summary: dir.join("agent_summary.csv"),
            features: dir.join("features.csv"),
            style: dir.join("style.csv"),
            analysis_csv: dir.join("analysis.csv"),
            analysis_text: dir.join("analysis.txt"),
            heatmaps: dir.join("heatmaps"),
            report_json: dir.join("report.json"),
            report_text: dir.join("report.txt"),
        }
    }
}

/// Deterministic account of the transcript store, written after the
/// tournament stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentSummary {
    pub config_hash: String,
    pub engine: String,
    pub schedule_size: usize,
    pub completed: usize,
    pub failed: Vec<FailedPairing>,
    pub finished: bool,
    pub terminations: BTreeMap<Termination, usize>,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseReport {
    pub exercise: String,
    pub negotiations: usize,
    pub agents: Vec<AgentSummary>,
    /// Final rank by value claimed (1 is best).
    pub final_ranks: BTreeMap<String, f64>,
    /// Rank agreement with the final ranking after k observations per agent.
    pub rank_agreement: Vec<(usize, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryReport {
    pub config_hash: String,
    pub engine: String,
    pub tournament: Option<TournamentSummary>,
    pub exercises: Vec<ExerciseReport>,
    pub models: usize,
}

/// What one `run` call did.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutcome {
    pub stages: Vec<Stage>,
    pub tournament: Option<RunReport>,
    pub notes: Vec<String>,
}

/// A loaded configuration with its resolved inputs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub config_hash: String,
    pub roster: Vec<AgentSpec>,
    pub scenarios: Vec<ScenarioSpec>,
    pub instrument: SviInstrument,
    pub lexicons: LexiconSet,
    pub artifacts: Artifacts,
    /// Stop the tournament after this many sessions (simulated interruption).
    pub stop_after: Option<usize>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn prerequisite(path: &Path, stage: Stage, run_first: Stage) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Prerequisite {
            stage,
            run_first,
            missing: path.to_path_buf(),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

impl Pipeline {
    pub fn load(path: &Path) -> Result<Pipeline, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = RunConfig::parse(&text, &path.display().to_string())?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Pipeline::from_config(config, &base)
    }

    pub fn from_config(mut config: RunConfig, base_dir: &Path) -> Result<Pipeline, PipelineError> {
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            config.backend.api_key = Some(key);
        }
        let roster = load_roster(&resolve(base_dir, &config.roster), &config.backend.chat_defaults())?;
        let mut scenarios = Vec::new();
        for reference in &config.scenarios {
            scenarios.extend(load_catalog(&CatalogSource::from_reference(reference, base_dir))?);
        }
        let (instrument, instrument_source) = match &config.svi_items {
            Some(p) => {
                let p = resolve(base_dir, p);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", p.display())))?;
                (SviInstrument::load(&p)?, text)
            }
            None => (SviInstrument::bundled().clone(), SviInstrument::bundled_source().to_string()),
        };
        let lexicons = match &config.lexicon_dir {
            Some(d) => {
                let d = resolve(base_dir, d);
                if !d.is_dir() {
                    return Err(PipelineError::Config(format!("lexicon directory {} does not exist", d.display())));
                }
                LexiconSet::load_dir(&d)?
            }
            None => LexiconSet::bundled(),
        };
        if config.style.source == StyleSource::File && config.style.file.is_none() {
            return Err(PipelineError::Config("style source `file` needs `style.file`".into()));
        }
        let config_hash = config_hash(&config, &roster, &scenarios, &instrument_source, &lexicons);
        let out = resolve(base_dir, &config.output_dir);
        let artifacts = Artifacts::new(&out, config.checkpoint.as_ref().map(|c| resolve(base_dir, c)));
        Ok(Pipeline {
            config,
            base_dir: base_dir.to_path_buf(),
            config_hash,
            roster,
            scenarios,
            instrument,
            lexicons,
            artifacts,
            stop_after: None,
        })
    }

    pub fn stamp(&self) -> Stamp {
        Stamp::new(&self.config_hash)
    }

    fn exec(&self) -> Execution {
        if self.config.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    /// HTTP-backed services from the backend section.
    pub fn default_backends(&self) -> Result<Backends, PipelineError> {
        let b = &self.config.backend;
        let transport = HttpTransport::new(b.api_key.clone(), Duration::from_secs(b.timeout_secs));
        let mut backends = Backends::new(Arc::new(transport))
            .with_limiters(RateLimiters::new(b.rate_limit.max(1)))
            .with_retry(RetryPolicy {
                max_retries: b.max_retries,
                ..RetryPolicy::default()
            });
        if b.cache {
            backends = backends.with_cache(Arc::new(ResponseCache::new()));
        }
        if let Some(p) = &b.audit_log {
            let p = resolve(&self.base_dir, p);
            let log = AuditLog::open(&p).map_err(|e| PipelineError::Config(format!("audit log {}: {e}", p.display())))?;
            backends = backends.with_audit(Arc::new(log));
        }
        Ok(backends)
    }

    /// Whether any configured step needs a live model.
    pub fn needs_network(&self) -> bool {
        self.roster.iter().any(|a| matches!(a.backend, BackendBinding::ChatModel(_)))
            || self.config.style.source == StyleSource::Rater
            || self.config.extraction.method == ExtractionMethod::Model
    }

    /// Runs `stages` in dependency order.
    pub fn run(&self, stages: &[Stage], backends: &Backends) -> Result<PipelineOutcome, PipelineError> {
        let ordered: BTreeSet<Stage> = stages.iter().copied().collect();
        let mut outcome = PipelineOutcome::default();
        for stage in ordered {
            log::info!("stage {stage}");
            match stage {
                Stage::Tournament => outcome.tournament = Some(self.run_tournament_stage(backends)?),
                Stage::Score => self.score_stage(backends)?,
                Stage::Features => self.features_stage()?,
                Stage::Style => self.style_stage(backends)?,
                Stage::Analyze => outcome.notes.extend(self.analyze_stage()?),
                Stage::Report => self.report_stage()?,
            }
            outcome.stages.push(stage);
        }
        Ok(outcome)
    }

    pub fn tournament_state(&self) -> Result<TournamentState, PipelineError> {
        Ok(TournamentState::new(self.roster.clone(), self.scenarios.clone(), self.config.seed)?)
    }

    pub fn run_options(&self) -> RunOptions {
        let mut options = RunOptions::new(&self.artifacts.dir, self.config_hash.clone());
        options.checkpoint_path = self.artifacts.checkpoint.clone();
        options.concurrency = self.config.concurrency;
        options.exec = self.exec();
        options.stop_after = self.stop_after;
        options.instrument = self.instrument.clone();
        options
    }

    fn run_tournament_stage(&self, backends: &Backends) -> Result<RunReport, PipelineError> {
        std::fs::create_dir_all(&self.artifacts.dir)
            .map_err(|e| PipelineError::Runtime(format!("{}: {e}", self.artifacts.dir.display())))?;
        let mut state = self.tournament_state()?;
        let report = run_tournament(&mut state, &self.run_options(), backends)?;
        let transcripts = read_transcripts(&self.artifacts.transcripts).map_err(TournamentError::from)?;
        let mut terminations = BTreeMap::new();
        let mut usage = TokenUsage::default();
        for t in &transcripts {
            *terminations.entry(t.termination).or_default() += 1;
            usage += t.usage;
        }
        let summary = TournamentSummary {
            config_hash: self.config_hash.clone(),
            engine: ENGINE_VERSION.to_string(),
            schedule_size: report.schedule_size,
            completed: transcripts.len(),
            failed: report.failed.clone(),
            finished: !report.interrupted,
            terminations,
            usage,
        };
        write_json(&self.artifacts.tournament, &summary)?;
        Ok(report)
    }

    /// Transcripts of this configuration, in store order.
    pub fn transcripts(&self, stage: Stage) -> Result<Vec<Transcript>, PipelineError> {
        prerequisite(&self.artifacts.checkpoint, stage, Stage::Tournament)?;
        prerequisite(&self.artifacts.transcripts, stage, Stage::Tournament)?;
        let checkpoint = Checkpoint::read(&self.artifacts.checkpoint)?.expect("checked above");
        if checkpoint.config_hash != self.config_hash {
            return Err(TournamentError::ForeignCheckpoint {
                path: self.artifacts.checkpoint.clone(),
                found: checkpoint.config_hash,
                expected: self.config_hash.clone(),
            }
            .into());
        }
        if !checkpoint.finished {
            log::warn!("tournament is unfinished; stage {stage} sees a partial transcript set");
        }
        Ok(read_transcripts(&self.artifacts.transcripts).map_err(TournamentError::from)?)
    }

    fn scenario(&self, id: &str) -> Result<&ScenarioSpec, PipelineError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| PipelineError::Validation(format!("transcript refers to unconfigured scenario `{id}`")))
    }

    /// Outcome rows, two per transcript.
    pub fn score_transcripts(&self, transcripts: &[Transcript], backends: &Backends) -> Result<Vec<OutcomeRow>, PipelineError> {
        let mut model = self.config.backend.chat_defaults();
        if let Some(m) = &self.config.extraction.model {
            model.model_name = m.clone();
        }
        let extractor = match self.config.extraction.method {
            ExtractionMethod::Marker => Extractor::MarkerProtocol,
            ExtractionMethod::Model => Extractor::ModelAssisted {
                backends,
                model: &model,
            },
        };
        let results = self.exec().map(transcripts, |t| -> Result<[OutcomeRow; 2], PipelineError> {
            let scenario = self.scenario(&t.scenario_id)?;
            let terms = extract_agreement(t, scenario, extractor).map_err(|e| match e {
                crate::scoring::ExtractionError::Backend { .. } => PipelineError::Runtime(e.to_string()),
                other => PipelineError::Validation(other.to_string()),
            })?;
            let outcome = score_outcome(t, scenario, &terms).map_err(|e| PipelineError::Validation(e.to_string()))?;
            Ok(outcome.rows())
        });
        let mut rows = Vec::with_capacity(transcripts.len() * 2);
        for r in results {
            rows.extend(r?);
        }
        Ok(rows)
    }

    fn score_stage(&self, backends: &Backends) -> Result<(), PipelineError> {
        let transcripts = self.transcripts(Stage::Score)?;
        let rows = self.score_transcripts(&transcripts, backends)?;
        write_table(&self.artifacts.outcomes, Some(&self.stamp()), &rows)?;
        write_table(&self.artifacts.agent_summary, Some(&self.stamp()), &aggregate_outcomes(&rows))?;
        Ok(())
    }

    fn features_stage(&self) -> Result<(), PipelineError> {
        let transcripts = self.transcripts(Stage::Features)?;
        let rows = feature_table(&transcripts, &self.lexicons, self.exec());
        write_table(&self.artifacts.features, Some(&self.stamp()), &rows)?;
        Ok(())
    }

    fn style_stage(&self, backends: &Backends) -> Result<(), PipelineError> {
        let scores = match self.config.style.source {
            StyleSource::Synthetic => {
                synthetic_style_table(&self.roster, self.config.style.synthetic_seed.unwrap_or(self.config.seed))
            }
            StyleSource::File => {
                let path = resolve(&self.base_dir, self.config.style.file.as_ref().expect("validated at load"));
                let (_, rows): (_, Vec<StyleScores>) = read_table(&path, None)?;
                rows
            }
            StyleSource::Rater => {
                let mut rater = self.config.backend.chat_defaults();
                rater.temperature = self.config.style.rater_temperature;
                if let Some(m) = &self.config.style.rater_model {
                    rater.model_name = m.clone();
                }
                let mut scores = Vec::new();
                let mut failures = Vec::new();
                for r in score_roster_styles(&self.roster, backends, &rater, self.exec()) {
                    match r {
                        Ok(s) => scores.push(s),
                        Err(e) => failures.push(e.to_string()),
                    }
                }
                if !failures.is_empty() {
                    return Err(PipelineError::Runtime(format!("style scoring failed: {}", failures.join("; "))));
                }
                scores
            }
        };
        let covered: BTreeSet<&str> = scores.iter().map(|s| s.agent_id.as_str()).collect();
        let missing: Vec<&str> = self
            .roster
            .iter()
            .map(|a| a.agent_id.as_str())
            .filter(|id| !covered.contains(id))
            .collect();
        if !missing.is_empty() {
            return Err(PipelineError::Validation(format!("style table lacks agent(s): {}", missing.join(", "))));
        }
        write_table(&self.artifacts.style, Some(&self.stamp()), &scores)?;
        Ok(())
    }

    fn read_stamped<T: serde::de::DeserializeOwned>(&self, path: &Path, stage: Stage, producer: Stage) -> Result<Vec<T>, PipelineError> {
        prerequisite(path, stage, producer)?;
        Ok(read_table(path, Some(&self.config_hash))?.1)
    }

    fn metrics(&self) -> Result<Vec<Metric>, PipelineError> {
        match &self.config.analysis.metrics {
            None => Ok(Metric::ALL.to_vec()),
            Some(names) => names
                .iter()
                .map(|n| n.parse().map_err(|e: crate::scoring::UnknownMetric| PipelineError::Config(e.to_string())))
                .collect(),
        }
    }

    fn model_spec(&self, family: Family, terms: TermSet) -> ModelSpec {
        let a = &self.config.analysis;
        ModelSpec {
            family,
            terms,
            standardize: a.standardize,
            cluster_dims: a.cluster.clone(),
            small_sample_correction: a.small_sample_correction,
        }
    }

    fn exercises_in<'a>(&'a self, present: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
        let present: BTreeSet<&str> = present.collect();
        self.scenarios
            .iter()
            .map(|s| s.id.as_str())
            .filter(|id| present.contains(id))
            .collect()
    }

    /// Fits every configured model; returns the results and the notes on
    /// omitted or failed models.
    pub fn analyze(
        &self,
        outcomes: &[OutcomeRow],
        features: Option<&[FeatureRow]>,
        styles: &[StyleScores],
    ) -> Result<(Vec<FitResult>, Vec<String>), PipelineError> {
        let style: HashMap<&str, &StyleScores> = styles.iter().map(|s| (s.agent_id.as_str(), s)).collect();
        let lookup = |agent: &str| {
            style
                .get(agent)
                .copied()
                .ok_or_else(|| PipelineError::Validation(format!("no style scores for agent `{agent}`")))
        };
        struct Job {
            exercise: String,
            name: String,
            family: Family,
            terms: TermSet,
            rows: Vec<ObservationRow>,
        }
        let mut jobs = Vec::new();
        let mut notes = Vec::new();
        let observation = |y: f64, agent: &str, dyad: &str, negotiation: &str, exercise: &str| -> Result<ObservationRow, PipelineError> {
            let s = lookup(agent)?;
            Ok(ObservationRow {
                y,
                warmth: s.warmth as f64,
                dominance: s.dominance as f64,
                cluster_agent: agent.to_string(),
                cluster_dyad: dyad.to_string(),
                cluster_negotiation: negotiation.to_string(),
                exercise: exercise.to_string(),
            })
        };
        for exercise in self.exercises_in(outcomes.iter().map(|r| r.exercise.as_str())) {
            let rows: Vec<&OutcomeRow> = outcomes.iter().filter(|r| r.exercise == exercise).collect();
            for metric in self.metrics()? {
                let obs = rows
                    .iter()
                    .filter_map(|r| {
                        metric.value(r).map(|y| {
                            observation(y, &r.agent_id, &r.cluster_dyad, &r.cluster_negotiation, exercise)
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if obs.is_empty() {
                    notes.push(format!("{exercise}/{metric}: omitted, no values"));
                    continue;
                }
                let family = if metric == Metric::Deal { Family::Logistic } else { Family::Linear };
                for &terms in &self.config.analysis.terms {
                    jobs.push(Job {
                        exercise: exercise.to_string(),
                        name: metric.as_str().to_string(),
                        family,
                        terms,
                        rows: obs.clone(),
                    });
                }
            }
            if let Some(features) = features.filter(|_| self.config.analysis.features) {
                let rows: Vec<&FeatureRow> = features.iter().filter(|r| r.exercise == exercise).collect();
                for feature in Feature::ALL {
                    let obs = rows
                        .iter()
                        .filter_map(|r| {
                            feature.value(&r.vector()).map(|y| {
                                observation(y, &r.agent_id, &r.cluster_dyad, &r.cluster_negotiation, exercise)
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    if obs.is_empty() {
                        notes.push(format!("{exercise}/{feature}: omitted, no values"));
                        continue;
                    }
                    jobs.push(Job {
                        exercise: exercise.to_string(),
                        name: feature.as_str().to_string(),
                        family: Family::Linear,
                        terms: TermSet::Main,
                        rows: obs,
                    });
                }
            }
        }
        let fits = self.exec().map(&jobs, |job| estimate(&job.name, &job.rows, &self.model_spec(job.family, job.terms)));
        let mut results = Vec::new();
        for (job, fit) in jobs.iter().zip(fits) {
            match fit {
                Ok(r) => results.push(r),
                Err(e) => {
                    let terms = format!("{:?}", job.terms).to_lowercase();
                    log::warn!("{}/{} ({terms}) skipped: {e}", job.exercise, job.name);
                    notes.push(format!("{}/{} ({terms}): skipped, {e}", job.exercise, job.name));
                }
            }
        }
        let truncated = results.iter().filter(|r| r.eigen_truncated).count();
        if truncated > 0 {
            notes.push(format!("{truncated} model(s): negative eigenvalues of the clustered covariance truncated to zero"));
        }
        Ok((results, notes))
    }

    fn analyze_stage(&self) -> Result<Vec<String>, PipelineError> {
        let outcomes: Vec<OutcomeRow> = self.read_stamped(&self.artifacts.outcomes, Stage::Analyze, Stage::Score)?;
        let styles: Vec<StyleScores> = self.read_stamped(&self.artifacts.style, Stage::Analyze, Stage::Style)?;
        let features: Option<Vec<FeatureRow>> = if self.artifacts.features.exists() {
            Some(read_table(&self.artifacts.features, Some(&self.config_hash))?.1)
        } else {
            None
        };
        let (results, notes) = self.analyze(&outcomes, features.as_deref(), &styles)?;
        let stamp = self.stamp();
        let csv = emit_table(&results, &notes, TableFormat::Delimited, Some(&stamp))?;
        write_atomic(&self.artifacts.analysis_csv, csv.as_bytes())?;
        let text = emit_table(&results, &notes, TableFormat::Text, Some(&stamp))?;
        write_atomic(&self.artifacts.analysis_text, text.as_bytes())?;

        for exercise in self.exercises_in(outcomes.iter().map(|r| r.exercise.as_str())) {
            let rows: Vec<OutcomeRow> = outcomes.iter().filter(|r| r.exercise == exercise).cloned().collect();
            for metric in self.metrics()? {
                if let Some(grid) = emit_heatmap_grid(&styles, &rows, metric, self.config.analysis.heatmap_bins) {
                    let path = self.artifacts.heatmaps.join(format!("{exercise}_{metric}.csv"));
                    write_table(&path, Some(&stamp), &grid.cells)?;
                }
            }
        }
        Ok(notes)
    }

    fn report_stage(&self) -> Result<(), PipelineError> {
        let outcomes: Vec<OutcomeRow> = self.read_stamped(&self.artifacts.outcomes, Stage::Report, Stage::Score)?;
        let tournament: Option<TournamentSummary> = if self.artifacts.tournament.exists() {
            let t: TournamentSummary = read_json(&self.artifacts.tournament)?;
            if t.config_hash != self.config_hash {
                return Err(PipelineError::Validation(format!(
                    "{} belongs to config {}, expected {}",
                    self.artifacts.tournament.display(),
                    t.config_hash,
                    self.config_hash
                )));
            }
            Some(t)
        } else {
            None
        };
        let models = if self.artifacts.analysis_csv.exists() {
            let text = std::fs::read_to_string(&self.artifacts.analysis_csv)
                .map_err(|e| PipelineError::Runtime(format!("{}: {e}", self.artifacts.analysis_csv.display())))?;
            let rows = read_analysis_rows(&text, Some(&self.config_hash))?;
            rows.iter()
                .map(|r| (r.exercise.as_str(), r.coefficient.outcome.as_str(), r.terms.as_str()))
                .collect::<BTreeSet<_>>()
                .len()
        } else {
            0
        };
        let summaries = aggregate_outcomes(&outcomes);
        let mut exercises = Vec::new();
        for exercise in self.exercises_in(outcomes.iter().map(|r| r.exercise.as_str())) {
            let rows: Vec<OutcomeRow> = outcomes.iter().filter(|r| r.exercise == exercise).cloned().collect();
            let trajectory = ranking_trajectory(&rows, Metric::ValueClaimed.as_str(), self.config.seed)
                .map_err(|e| PipelineError::Validation(e.to_string()))?;
            let negotiations = rows.iter().map(|r| r.negotiation_id.as_str()).collect::<BTreeSet<_>>().len();
            exercises.push(ExerciseReport {
                exercise: exercise.to_string(),
                negotiations,
                agents: summaries.iter().filter(|s| s.exercise == exercise).cloned().collect(),
                final_ranks: trajectory.final_ranks.clone(),
                rank_agreement: trajectory.table.iter().map(|r| (r.samples, r.agreement)).collect(),
            });
        }
        let report = RunSummaryReport {
            config_hash: self.config_hash.clone(),
            engine: ENGINE_VERSION.to_string(),
            tournament,
            exercises,
            models,
        };
        write_json(&self.artifacts.report_json, &report)?;
        write_atomic(&self.artifacts.report_text, render_report(&report).as_bytes())?;
        Ok(())
    }
}

fn render_report(report: &RunSummaryReport) -> String {
    let mut out = Stamp::new(&report.config_hash).header();
    if let Some(t) = &report.tournament {
        out.push_str(&format!(
            "\nTournament: {} of {} negotiations completed, {} failed{}\n",
            t.completed,
            t.schedule_size,
            t.failed.len(),
            if t.finished { "" } else { " (unfinished)" }
        ));
        for (termination, n) in &t.terminations {
            out.push_str(&format!("  {:<12}{n:>8}\n", termination.to_string()));
        }
        out.push_str(&format!(
            "  tokens: {} prompt, {} completion\n",
            t.usage.prompt_tokens, t.usage.completion_tokens
        ));
    }
    for ex in &report.exercises {
        out.push_str(&format!("\n{} ({} negotiations)\n", ex.exercise, ex.negotiations));
        out.push_str(&format!(
            "  {:<24}{:>6}{:>10}{:>14}{:>10}\n",
            "agent", "rank", "deal rate", "value claimed", "messages"
        ));
        let mut agents: Vec<&AgentSummary> = ex.agents.iter().collect();
        agents.sort_by(|a, b| {
            let ra = ex.final_ranks.get(&a.agent_id).copied().unwrap_or(f64::MAX);
            let rb = ex.final_ranks.get(&b.agent_id).copied().unwrap_or(f64::MAX);
            ra.total_cmp(&rb).then(a.agent_id.cmp(&b.agent_id))
        });
        for a in agents {
            out.push_str(&format!(
                "  {:<24}{:>6.1}{:>10.3}{:>14.3}{:>10.2}\n",
                a.agent_id,
                ex.final_ranks.get(&a.agent_id).copied().unwrap_or(f64::NAN),
                a.deal_rate,
                a.mean_value_claimed,
                a.mean_efficiency
            ));
        }
        if let Some((k, Some(r))) = ex.rank_agreement.iter().find(|(_, r)| r.is_some_and(|r| r >= 0.95)) {
            out.push_str(&format!("  rank agreement with the final ranking reaches {r:.3} after {k} observations\n"));
        }
    }
    out.push_str(&format!("\nRegression models fitted: {}\n", report.models));
    out
}

/// Digest of everything that determines results: the configuration minus
/// execution-only settings, plus the resolved roster, scenarios,
/// questionnaire and lexicons.
pub fn config_hash(
    config: &RunConfig,
    roster: &[AgentSpec],
    scenarios: &[ScenarioSpec],
    instrument_source: &str,
    lexicons: &LexiconSet,
) -> String {
    let mut value = serde_json::to_value(config).expect("config serializes");
    let obj = value.as_object_mut().expect("config is an object");
    for key in ["output_dir", "checkpoint", "concurrency", "sequential", "roster", "svi_items", "lexicon_dir"] {
        obj.remove(key);
    }
    if let Some(b) = obj.get_mut("backend").and_then(|b| b.as_object_mut()) {
        for key in ["timeout_secs", "rate_limit", "max_retries", "cache", "audit_log"] {
            b.remove(key);
        }
    }
    let mut h = Sha256::new();
    let mut part = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    part(value.to_string().as_bytes());
    part(serde_json::to_string(roster).expect("roster serializes").as_bytes());
    part(serde_json::to_string(scenarios).expect("scenarios serialize").as_bytes());
    part(instrument_source.as_bytes());
    for lexicon in [
        &lexicons.hedges,
        &lexicons.apologies,
        &lexicons.gratitude,
        &lexicons.first_person_plural,
        &lexicons.polarity,
    ] {
        part(serde_json::to_string(lexicon).expect("lexicon serializes").as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}
