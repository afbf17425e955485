//! Events, transactions, histories and the derived real-time relations.
//!
//! A history is the client-visible record of a run: committed and aborted
//! transactions grouped into sessions, with real-time start/commit instants
//! and whatever protocol metadata the producing engine attached. A dedicated
//! initial transaction (id 0) writes the initial value of every key and
//! precedes everything else in real time.

use crate::clock::Ts;
use crate::relation::Relation;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub type Key = String;
pub type Value = i64;
pub type TxnId = u64;
pub type SessionId = u64;

/// The id of the synthetic transaction that writes every key's initial value.
pub const INITIAL_TXN_ID: TxnId = 0;

/// Every key starts out holding this value, written by the initial transaction.
pub const INITIAL_VALUE: Value = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Read { key: Key, value: Value },
    Write { key: Key, value: Value },
}

impl OpKind {
    pub fn key(&self) -> &str {
        match self {
            OpKind::Read { key, .. } | OpKind::Write { key, .. } => key,
        }
    }

    pub fn value(&self) -> Value {
        match self {
            OpKind::Read { value, .. } | OpKind::Write { value, .. } => *value,
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, OpKind::Read { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u64,
    pub op: OpKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnStatus {
    Committed,
    Aborted,
}

/// Simulated wall-clock instants. The scheduler guarantees that all stamps
/// are distinct and that start < commit for every committed transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealTimeStamps {
    pub start_nanos: i64,
    pub commit_nanos: i64,
}

/// Per-transaction protocol metadata, populated by the engines and consumed
/// by the white-box checker.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxnMeta {
    pub read_ts: Option<Ts>,
    pub commit_ts: Option<Ts>,
    pub wt_tid: Option<i64>,
    pub lamport: Option<u64>,
    /// Sharded runs only: the WiredTiger tid this transaction obtained on
    /// each participant shard it updated.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub shard_tids: BTreeMap<u64, i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deployment {
    Wt,
    Rs,
    Sc,
}

impl std::fmt::Display for Deployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Deployment::Wt => "wt",
            Deployment::Rs => "rs",
            Deployment::Sc => "sc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub txn_id: TxnId,
    pub session_id: SessionId,
    pub status: TxnStatus,
    /// Events in program order.
    pub events: Vec<Event>,
}

impl Transaction {
    pub fn is_committed(&self) -> bool {
        self.status == TxnStatus::Committed
    }

    /// The last value this transaction writes to `k`, if any.
    pub fn last_write(&self, k: &str) -> Option<Value> {
        self.events.iter().rev().find_map(|e| match &e.op {
            OpKind::Write { key, value } if key == k => Some(*value),
            _ => None,
        })
    }

    /// The value of the first read of `k` that precedes any write to `k`
    /// in program order (the transaction's external read of `k`).
    pub fn first_external_read(&self, k: &str) -> Option<Value> {
        for e in &self.events {
            match &e.op {
                OpKind::Write { key, .. } if key == k => return None,
                OpKind::Read { key, value } if key == k => return Some(*value),
                _ => {}
            }
        }
        None
    }

    pub fn writes_key(&self, k: &str) -> bool {
        self.events
            .iter()
            .any(|e| matches!(&e.op, OpKind::Write { key, .. } if key == k))
    }

    pub fn written_keys(&self) -> impl Iterator<Item = &str> {
        let mut seen = std::collections::BTreeSet::new();
        self.events.iter().filter_map(move |e| match &e.op {
            OpKind::Write { key, .. } if seen.insert(key.as_str()) => Some(key.as_str()),
            _ => None,
        })
    }

    pub fn is_updater(&self) -> bool {
        self.events.iter().any(|e| !e.op.is_read())
    }
}

/// Two transactions conflict iff they write on a common key.
pub fn conflict(s: &Transaction, t: &Transaction) -> bool {
    s.written_keys().any(|k| t.writes_key(k))
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("transaction {0} has no real-time stamps")]
    MissingRealTime(TxnId),
    #[error("duplicate real-time stamp {0}")]
    DuplicateStamp(i64),
    #[error("malformed history: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub deployment: Deployment,
    /// All issued transactions (committed and aborted), ordered by id.
    /// The initial transaction, when present, is id 0.
    pub transactions: Vec<Transaction>,
    pub real_time: BTreeMap<TxnId, RealTimeStamps>,
    pub meta: BTreeMap<TxnId, TxnMeta>,
    /// Number of shards the producing run used (1 for wt/rs).
    pub shard_count: u64,
}

impl History {
    pub fn new(deployment: Deployment) -> History {
        History {
            deployment,
            transactions: Vec::new(),
            real_time: BTreeMap::new(),
            meta: BTreeMap::new(),
            shard_count: 1,
        }
    }

    pub fn committed(&self) -> impl Iterator<Item = &Transaction> {
        self.transactions.iter().filter(|t| t.is_committed())
    }

    pub fn txn(&self, id: TxnId) -> Option<&Transaction> {
        self.transactions.iter().find(|t| t.txn_id == id)
    }

    pub fn stamps(&self, id: TxnId) -> Result<RealTimeStamps, ModelError> {
        self.real_time.get(&id).copied().ok_or(ModelError::MissingRealTime(id))
    }

    /// Session-order pairs over committed transactions: all ordered pairs of
    /// same-session transactions, in issue (id) order.
    pub fn session_order_pairs(&self) -> Vec<(TxnId, TxnId)> {
        let mut by_session: BTreeMap<SessionId, Vec<TxnId>> = BTreeMap::new();
        for t in self.committed() {
            by_session.entry(t.session_id).or_default().push(t.txn_id);
        }
        let mut pairs = Vec::new();
        for ids in by_session.values() {
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    pairs.push((ids[i], ids[j]));
                }
            }
        }
        pairs
    }

    /// rb: S returns before T starts in real time. Committed transactions only.
    pub fn returns_before(&self) -> Result<Relation, ModelError> {
        let stamped = self.committed_stamps()?;
        let mut rel = Relation::new();
        for &(s, st) in &stamped {
            for &(t, tt) in &stamped {
                if s != t && st.commit_nanos < tt.start_nanos {
                    rel.insert(s, t);
                }
            }
        }
        Ok(rel)
    }

    /// cb: S commits before T in real time. Committed transactions only.
    pub fn commits_before(&self) -> Result<Relation, ModelError> {
        let stamped = self.committed_stamps()?;
        let mut rel = Relation::new();
        for &(s, st) in &stamped {
            for &(t, tt) in &stamped {
                if s != t && st.commit_nanos < tt.commit_nanos {
                    rel.insert(s, t);
                }
            }
        }
        Ok(rel)
    }

    fn committed_stamps(&self) -> Result<Vec<(TxnId, RealTimeStamps)>, ModelError> {
        let mut out = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for t in self.committed() {
            let st = self.stamps(t.txn_id)?;
            if !seen.insert(st.start_nanos) || !seen.insert(st.commit_nanos) {
                return Err(ModelError::DuplicateStamp(st.commit_nanos));
            }
            out.push((t.txn_id, st));
        }
        Ok(out)
    }
}

/// A history together with candidate visibility and arbitration relations.
#[derive(Debug, Clone)]
pub struct AbstractExecution<'h> {
    pub history: &'h History,
    pub vis: Relation,
    pub ar: Relation,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn txn(id: TxnId, session: SessionId, ops: &[OpKind]) -> Transaction {
        Transaction {
            txn_id: id,
            session_id: session,
            status: TxnStatus::Committed,
            events: ops
                .iter()
                .enumerate()
                .map(|(i, op)| Event { event_id: id * 1000 + i as u64, op: op.clone() })
                .collect(),
        }
    }

    fn w(k: &str, v: Value) -> OpKind {
        OpKind::Write { key: k.into(), value: v }
    }

    fn r(k: &str, v: Value) -> OpKind {
        OpKind::Read { key: k.into(), value: v }
    }

    #[test]
    fn last_write_wins_by_program_order() {
        let t = txn(1, 1, &[w("x", 1), w("x", 2)]);
        assert_eq!(t.last_write("x"), Some(2));
        let t = txn(2, 1, &[r("x", 0)]);
        assert_eq!(t.last_write("x"), None);
        // reverse program-order scan oracle
        let t = txn(3, 1, &[w("y", 3), r("x", 0), w("x", 5)]);
        let oracle = t
            .events
            .iter()
            .filter_map(|e| match &e.op {
                OpKind::Write { key, value } if key == "x" => Some(*value),
                _ => None,
            })
            .last();
        assert_eq!(t.last_write("x"), oracle);
        assert_eq!(t.last_write("x"), Some(5));
    }

    #[test]
    fn first_read_must_precede_writes() {
        let t = txn(1, 1, &[r("x", 7), w("x", 9)]);
        assert_eq!(t.first_external_read("x"), Some(7));
        // a read after an own write is internal, not external
        let t = txn(2, 1, &[w("x", 9), r("x", 9)]);
        assert_eq!(t.first_external_read("x"), None);
        // first-by-po among several reads
        let t = txn(3, 1, &[r("y", 1), r("x", 2), r("x", 3)]);
        let oracle = t
            .events
            .iter()
            .find_map(|e| match &e.op {
                OpKind::Read { key, value } if key == "x" => Some(*value),
                _ => None,
            });
        assert_eq!(t.first_external_read("x"), oracle);
        assert_eq!(t.first_external_read("x"), Some(2));
    }

    #[test]
    fn conflicts_are_write_write_only() {
        let s = txn(1, 1, &[w("x", 1)]);
        let t = txn(2, 2, &[w("x", 2)]);
        assert!(conflict(&s, &t));
        let t = txn(3, 2, &[r("x", 1)]);
        assert!(!conflict(&s, &t));
        let s = txn(4, 1, &[w("x", 1), w("y", 1)]);
        let t = txn(5, 2, &[w("y", 2)]);
        assert!(conflict(&s, &t));
    }

    fn history_with_stamps(stamps: &[(TxnId, i64, i64)]) -> History {
        let mut h = History::new(Deployment::Wt);
        for &(id, start, commit) in stamps {
            h.transactions.push(txn(id, id, &[r("x", 0)]));
            h.real_time
                .insert(id, RealTimeStamps { start_nanos: start, commit_nanos: commit });
        }
        h
    }

    #[test]
    fn returns_before_compares_commit_to_start() {
        let h = history_with_stamps(&[(1, 5, 10), (2, 20, 30)]);
        let rb = h.returns_before().unwrap();
        assert!(rb.contains(1, 2));
        assert!(!rb.contains(2, 1));
        let h = history_with_stamps(&[(1, 4, 10), (2, 5, 30)]);
        let rb = h.returns_before().unwrap();
        assert!(!rb.contains(1, 2));
    }

    #[test]
    fn three_sequential_txns_chain_transitively() {
        let h = history_with_stamps(&[(1, 1, 2), (2, 3, 4), (3, 5, 6)]);
        let rb = h.returns_before().unwrap();
        // pairwise comparison oracle
        for (s, t) in [(1, 2), (2, 3), (1, 3)] {
            assert!(rb.contains(s, t), "({s},{t}) missing");
        }
        assert_eq!(rb.len(), 3);
    }

    #[test]
    fn rb_subset_of_cb_and_cb_total() {
        let h = history_with_stamps(&[(1, 1, 12), (2, 3, 4), (3, 5, 16)]);
        let rb = h.returns_before().unwrap();
        let cb = h.commits_before().unwrap();
        for (s, t) in rb.pairs() {
            assert!(cb.contains(s, t));
        }
        let ids: Vec<TxnId> = h.committed().map(|t| t.txn_id).collect();
        assert!(cb.is_total_over(&ids));
    }

    #[test]
    fn missing_stamps_are_malformed() {
        let mut h = history_with_stamps(&[(1, 1, 2)]);
        h.transactions.push(txn(2, 2, &[r("x", 0)]));
        assert!(matches!(h.returns_before(), Err(ModelError::MissingRealTime(2))));
    }
}
