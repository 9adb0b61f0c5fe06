//! Tournament engine and analysis pipeline for prompt-defined negotiation
//! agents.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`] – exercises, points schedules and valuation.
//! * [`agent`] – prompt assembly, scripted policies and chat-model backends.
//! * [`session`] – one negotiation as a turn-alternating state machine.
//! * [`tournament`] – round-robin schedules, resumable execution, rankings.
//! * [`scoring`] – agreement extraction and outcome metrics.
//! * [`features`] – per-agent linguistic features.
//! * [`style`] – warmth/dominance rating and rater-agreement statistics.
//! * [`stats`] – OLS/logistic fits with multiway cluster-robust covariance.
//! * [`pipeline`] – configuration, staged runs and emitted artifacts.

pub mod agent;
pub mod exec;
pub mod features;
pub mod pipeline;
pub mod protocol;
pub mod scenario;
pub mod scoring;
pub mod session;
pub mod stats;
pub mod style;
pub mod table;
pub mod tournament;

pub use exec::Execution;
