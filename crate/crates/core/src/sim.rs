//! Deterministic discrete-event harness: seeded workload generation, the
//! deployment wiring, and history extraction.
//!
//! All randomness flows from one seeded generator and all state iterates in
//! deterministic orders, so a `(config, seed)` pair replays bit-identically.
//! Simulated wall-clock instants come from the executed-event counter,
//! scaled to nanoseconds; every recorded instant is distinct by
//! construction.

mod kernel;
mod recorder;
mod rs_run;
mod sc_run;
pub mod script;
mod workload;
mod wt_run;

pub use workload::PlannedOp;

use crate::model::{Deployment, History};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One simulated tick is this many recorded nanoseconds; the gaps let
/// metadata mutations nudge stamps without colliding.
pub const NANOS_PER_TICK: i64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyDist {
    Uniform,
    Exponential,
}

impl std::str::FromStr for KeyDist {
    type Err = String;

    fn from_str(s: &str) -> Result<KeyDist, String> {
        match s {
            "uniform" => Ok(KeyDist::Uniform),
            "exponential" => Ok(KeyDist::Exponential),
            other => Err(format!("unknown key distribution {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplicationDelay {
    /// Secondaries pull right after every primary append.
    Eager,
    /// Pulls are delayed by a seeded random number of ticks, widening the
    /// speculative-majority window.
    Randomized,
}

impl std::str::FromStr for ReplicationDelay {
    type Err = String;

    fn from_str(s: &str) -> Result<ReplicationDelay, String> {
        match s {
            "eager" => Ok(ReplicationDelay::Eager),
            "randomized" => Ok(ReplicationDelay::Randomized),
            other => Err(format!("unknown replication delay mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub deployment: Deployment,
    pub seed: u64,
    pub txn_num: usize,
    pub concurrency: usize,
    pub max_txn_len: usize,
    pub key_count: usize,
    pub max_writes_per_key: usize,
    pub key_dist: KeyDist,
    pub replica_count: usize,
    pub shard_count: usize,
    pub replication_delay: ReplicationDelay,
    /// Client think time between operations, in ticks (uniform 0..=max).
    pub max_think_ticks: u64,
    /// Message/service delay, in ticks (uniform 1..=max).
    pub max_service_ticks: u64,
}

impl SimConfig {
    pub fn new(deployment: Deployment, seed: u64) -> SimConfig {
        SimConfig {
            deployment,
            seed,
            txn_num: 3000,
            concurrency: 9,
            max_txn_len: 12,
            key_count: 10,
            max_writes_per_key: 128,
            key_dist: KeyDist::Exponential,
            replica_count: 3,
            shard_count: 2,
            replication_delay: ReplicationDelay::Eager,
            max_think_ticks: 8,
            max_service_ticks: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulator deadlock; pending waits:\n{dump}")]
    Deadlock { dump: String },
    #[error("script error: {0}")]
    Script(String),
    #[error("engine fault: {0}")]
    Engine(String),
}

impl From<crate::rs_engine::RsError> for SimError {
    fn from(e: crate::rs_engine::RsError) -> SimError {
        SimError::Engine(e.to_string())
    }
}

impl From<crate::wt_engine::WtError> for SimError {
    fn from(e: crate::wt_engine::WtError) -> SimError {
        SimError::Engine(e.to_string())
    }
}

impl From<crate::sc_engine::ScError> for SimError {
    fn from(e: crate::sc_engine::ScError) -> SimError {
        SimError::Engine(e.to_string())
    }
}

/// Run the configured workload to completion and return the history
/// (committed and aborted transactions, with the initial transaction
/// materialized as id 0).
pub fn run(cfg: &SimConfig) -> Result<History, SimError> {
    match cfg.deployment {
        Deployment::Wt => wt_run::run(cfg),
        Deployment::Rs => rs_run::run(cfg),
        Deployment::Sc => sc_run::run(cfg),
    }
}
