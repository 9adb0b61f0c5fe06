//! Round-robin scheduling, resumable execution and ranking stability.

mod ranking;
mod schedule;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ranking::{ranking_trajectory, RankRow, RankingError, RankingTrajectory};
pub use schedule::{build_schedule, pairing_seed, schedule_size, Pairing};

use crate::agent::{AgentSpec, Backends, TokenUsage};
use crate::exec::Execution;
use crate::scenario::ScenarioSpec;
use crate::session::{run_session, SessionSetup, StoreError, SviInstrument, Termination, TranscriptStore};
use crate::table::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "negotiation-checkpoint/1";

#[derive(Debug, Error)]
pub enum TournamentError {
    #[error("tournament configuration: {0}")]
    Config(String),
    #[error("checkpoint {path} is not writable: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("checkpoint {path} belongs to config {found}, this run is {expected}; use a fresh output directory")]
    ForeignCheckpoint {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedPairing {
    pub pairing: Pairing,
    pub negotiation_id: String,
    pub cause: String,
    pub attempts: usize,
}

/// Roster, scenarios and schedule plus progress. Every scheduled pairing is
/// exactly one of completed, failed or pending.
#[derive(Debug, Clone)]
pub struct TournamentState {
    pub roster: Vec<AgentSpec>,
    pub scenarios: Vec<ScenarioSpec>,
    pub schedule: Vec<Pairing>,
    pub completed: BTreeSet<String>,
    pub failed: Vec<FailedPairing>,
}

impl TournamentState {
    pub fn new(roster: Vec<AgentSpec>, scenarios: Vec<ScenarioSpec>, base_seed: u64) -> Result<Self, TournamentError> {
        let ids: Vec<String> = scenarios.iter().map(|s| s.id.clone()).collect();
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(TournamentError::Config("scenario listed twice".into()));
        }
        for agent in &roster {
            agent
                .validate()
                .map_err(|e| TournamentError::Config(e.to_string()))?;
        }
        let schedule = build_schedule(&roster, &ids, base_seed)?;
        Ok(TournamentState {
            roster,
            scenarios,
            schedule,
            completed: BTreeSet::new(),
            failed: Vec::new(),
        })
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioSpec> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn negotiation_id(&self, pairing: &Pairing) -> String {
        let scenario = self.scenario(&pairing.exercise).expect("scheduled exercise exists");
        pairing.negotiation_id(scenario)
    }

    pub fn pending(&self) -> Vec<&Pairing> {
        let failed: BTreeSet<&str> = self.failed.iter().map(|f| f.negotiation_id.as_str()).collect();
        self.schedule
            .iter()
            .filter(|p| {
                let id = self.negotiation_id(p);
                !self.completed.contains(&id) && !failed.contains(id.as_str())
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub concurrency: usize,
    pub store_path: PathBuf,
    pub checkpoint_path: PathBuf,
    /// Partial transcripts from aborted attempts, for diagnosis.
    pub aborted_path: Option<PathBuf>,
    /// Session attempts per pairing before it is recorded as failed.
    pub attempts_per_pairing: usize,
    pub exec: Execution,
    /// Stop scheduling new sessions after this many completions (simulates
    /// an interrupted run).
    pub stop_after: Option<usize>,
    pub instrument: SviInstrument,
    pub config_hash: String,
}

impl RunOptions {
    pub fn new(output_dir: &Path, config_hash: impl Into<String>) -> Self {
        RunOptions {
            concurrency: 8,
            store_path: output_dir.join("transcripts.jsonl"),
            checkpoint_path: output_dir.join("checkpoint.json"),
            aborted_path: Some(output_dir.join("aborted.jsonl")),
            attempts_per_pairing: 2,
            exec: Execution::Parallel,
            stop_after: None,
            instrument: SviInstrument::bundled().clone(),
            config_hash: config_hash.into(),
        }
    }
}

/// Progress record written (atomically) after every completion. Completed
/// ids live in the transcript store; `store_bytes` is its committed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub schedule_size: usize,
    pub completed: usize,
    pub failed: Vec<FailedPairing>,
    pub store_bytes: u64,
    pub finished: bool,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Option<Checkpoint>, TournamentError> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| TournamentError::Checkpoint {
                path: path.to_path_buf(),
                message: format!("unreadable: {e}"),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(TournamentError::Io {
                path: path.to_path_buf(),
                source,
            }),
        }
    }

    fn write(&self, path: &Path) -> Result<(), TournamentError> {
        let mut text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes()).map_err(|e| TournamentError::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub schedule_size: usize,
    pub completed_before: usize,
    pub executed: usize,
    pub completed: usize,
    pub pending: usize,
    pub failed: Vec<FailedPairing>,
    pub aborted_attempts: usize,
    pub interrupted: bool,
    pub terminations: BTreeMap<Termination, usize>,
    pub usage: TokenUsage,
    pub wall_clock_secs: f64,
}

struct Shared {
    store: TranscriptStore,
    completed: BTreeSet<String>,
    failed: Vec<FailedPairing>,
    terminations: BTreeMap<Termination, usize>,
    usage: TokenUsage,
    executed: usize,
    aborted_attempts: usize,
    error: Option<TournamentError>,
}

/// Runs every pending pairing with at most `concurrency` sessions in
/// flight. Transcripts already in the store count as completed, previously
/// failed pairings are retried, and a finished run leaves the store in
/// schedule order so reruns and resumed runs are byte-identical.
pub fn run_tournament(
    state: &mut TournamentState,
    options: &RunOptions,
    backends: &Backends,
) -> Result<RunReport, TournamentError> {
    let started = Instant::now();
    if let Some(previous) = Checkpoint::read(&options.checkpoint_path)? {
        if previous.config_hash != options.config_hash {
            return Err(TournamentError::ForeignCheckpoint {
                path: options.checkpoint_path.clone(),
                found: previous.config_hash,
                expected: options.config_hash.clone(),
            });
        }
    }
    let store = TranscriptStore::open(&options.store_path)?;
    let scheduled: HashMap<String, &Pairing> = state
        .schedule
        .iter()
        .map(|p| (state.negotiation_id(p), p))
        .collect();
    state.completed = store
        .ids()
        .iter()
        .filter(|id| scheduled.contains_key(*id))
        .cloned()
        .collect();
    state.failed.clear();
    let completed_before = state.completed.len();

    let checkpoint = |shared: &Shared, finished: bool| Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        config_hash: options.config_hash.clone(),
        schedule_size: state.schedule.len(),
        completed: shared.completed.len(),
        failed: shared.failed.clone(),
        store_bytes: shared.store.byte_len(),
        finished,
    };

    let shared = Mutex::new(Shared {
        store,
        completed: state.completed.clone(),
        failed: Vec::new(),
        terminations: BTreeMap::new(),
        usage: TokenUsage::default(),
        executed: 0,
        aborted_attempts: 0,
        error: None,
    });
    // Fail before any session if the checkpoint cannot be written.
    checkpoint(&shared.lock(), false).write(&options.checkpoint_path)?;

    let agents: HashMap<&str, &AgentSpec> = state.roster.iter().map(|a| (a.agent_id.as_str(), a)).collect();
    let pending: Vec<Pairing> = state.pending().into_iter().cloned().collect();
    let stop = AtomicBool::new(false);
    let finished_now = AtomicUsize::new(0);
    let attempts = options.attempts_per_pairing.max(1);

    options.exec.for_each_bounded(&pending, options.concurrency, |pairing| {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let scenario = state.scenario(&pairing.exercise).expect("scheduled exercise exists");
        let setup = SessionSetup {
            scenario,
            agents: [
                agents[pairing.first_role_agent.as_str()],
                agents[pairing.second_role_agent.as_str()],
            ],
            first_mover: pairing.first_mover,
            seed: pairing.seed,
            instrument: &options.instrument,
        };
        let mut cause = String::new();
        for attempt in 1..=attempts {
            let transcript = run_session(&setup, backends);
            let mut guard = shared.lock();
            guard.usage += transcript.usage;
            if transcript.termination == Termination::Aborted {
                guard.aborted_attempts += 1;
                cause = transcript.abort_cause.clone().unwrap_or_default();
                if let Some(path) = &options.aborted_path {
                    if let Err(e) = append_line(path, &transcript) {
                        log::warn!("cannot record aborted attempt: {e}");
                    }
                }
                log::warn!(
                    "{} attempt {attempt}/{attempts} aborted: {cause}",
                    transcript.negotiation_id
                );
                continue;
            }
            if let Err(e) = guard.store.append(&transcript) {
                guard.error.get_or_insert(e.into());
                stop.store(true, Ordering::SeqCst);
                return;
            }
            guard.completed.insert(transcript.negotiation_id.clone());
            *guard.terminations.entry(transcript.termination).or_default() += 1;
            guard.executed += 1;
            if let Err(e) = checkpoint(&guard, false).write(&options.checkpoint_path) {
                guard.error.get_or_insert(e);
                stop.store(true, Ordering::SeqCst);
                return;
            }
            let done = finished_now.fetch_add(1, Ordering::SeqCst) + 1;
            if options.stop_after.is_some_and(|n| done >= n) {
                stop.store(true, Ordering::SeqCst);
            }
            return;
        }
        let mut guard = shared.lock();
        guard.failed.push(FailedPairing {
            pairing: pairing.clone(),
            negotiation_id: pairing.negotiation_id(scenario),
            cause,
            attempts,
        });
        if let Err(e) = checkpoint(&guard, false).write(&options.checkpoint_path) {
            guard.error.get_or_insert(e);
            stop.store(true, Ordering::SeqCst);
        }
    });

    let mut shared = shared.into_inner();
    if let Some(e) = shared.error.take() {
        return Err(e);
    }
    let order: Vec<String> = state.schedule.iter().map(|p| state.negotiation_id(p)).collect();
    let rank: HashMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    shared
        .failed
        .sort_by_key(|f| rank.get(f.negotiation_id.as_str()).copied());
    state.completed = shared.completed.clone();
    state.failed = shared.failed.clone();
    let pending = state.pending().len();
    let interrupted = pending > 0;
    if !interrupted {
        shared.store.rewrite_ordered(&order)?;
    }
    checkpoint(&shared, !interrupted).write(&options.checkpoint_path)?;

    Ok(RunReport {
        config_hash: options.config_hash.clone(),
        schedule_size: state.schedule.len(),
        completed_before,
        executed: shared.executed,
        completed: state.completed.len(),
        pending,
        failed: state.failed.clone(),
        aborted_attempts: shared.aborted_attempts,
        interrupted,
        terminations: shared.terminations,
        usage: shared.usage,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(value).map_err(std::io::Error::other)?;
    line.push('\n');
    f.write_all(line.as_bytes())
}

/// Progress snapshot derived from the store and checkpoint on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentStatus {
    pub schedule_size: usize,
    pub completed: usize,
    pub failed: usize,
    pub pending: usize,
    pub finished: bool,
}

pub fn tournament_status(state: &TournamentState, options: &RunOptions) -> Result<TournamentStatus, TournamentError> {
    let checkpoint = Checkpoint::read(&options.checkpoint_path)?;
    if let Some(c) = &checkpoint {
        if c.config_hash != options.config_hash {
            return Err(TournamentError::ForeignCheckpoint {
                path: options.checkpoint_path.clone(),
                found: c.config_hash.clone(),
                expected: options.config_hash.clone(),
            });
        }
    }
    let scheduled: BTreeSet<String> = state.schedule.iter().map(|p| state.negotiation_id(p)).collect();
    let completed = if options.store_path.exists() {
        crate::session::read_transcripts(&options.store_path)?
            .iter()
            .filter(|t| scheduled.contains(&t.negotiation_id))
            .count()
    } else {
        0
    };
    let failed = checkpoint.as_ref().map_or(0, |c| c.failed.len());
    Ok(TournamentStatus {
        schedule_size: state.schedule.len(),
        completed,
        failed,
        pending: state.schedule.len().saturating_sub(completed + failed),
        finished: checkpoint.is_some_and(|c| c.finished),
    })
}
