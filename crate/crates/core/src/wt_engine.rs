//! The storage-engine protocol: per-session MVCC transactions over a
//! versioned key-value store.
//!
//! Visibility is decided by the tid/concur/upperLimit rule captured at
//! transaction start, with an additional read-timestamp bound when the
//! caller runs the engine in timestamped mode (the replica-set and sharded
//! layers). Prepared transactions keep their versions flagged in-progress
//! until the two-phase decision re-stamps them.
//!
//! Handlers execute atomically; one engine instance belongs to exactly one
//! simulated node and is never mutated concurrently.

use crate::clock::Ts;
use crate::model::{Key, Value, INITIAL_VALUE};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type WtSessionId = u64;

/// Version entries written by a rolled-back transaction keep this tid.
pub const TID_ABORTED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreparePhase {
    InProgress,
    Resolved,
}

#[derive(Debug, Clone)]
pub struct VersionEntry {
    pub tid: i64,
    pub value: Value,
    pub ts: Option<Ts>,
    pub phase: Option<PreparePhase>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WtTxn {
    /// 0 until the first successful update assigns a real id.
    pub tid: i64,
    pub upper_limit: i64,
    pub concur: BTreeSet<i64>,
    /// Key/value pairs written, in issue order.
    pub mods: Vec<(Key, Value)>,
    pub read_ts: Option<Ts>,
    pub commit_ts: Option<Ts>,
    pub prepare_ts: Option<Ts>,
    ops_started: bool,
}

/// What other sessions can learn about a transaction: its tid once assigned,
/// and its commit timestamp once pinned by set-commit-ts.
#[derive(Debug, Clone, Copy, Default)]
pub struct TxnGlobalSlot {
    pub tid: Option<i64>,
    pub pinned_commit_ts: Option<Ts>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Ok,
    /// The transaction was rolled back due to a write conflict.
    Rollback,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WtError {
    #[error("session {0} has no active transaction")]
    NoActiveTxn(WtSessionId),
    #[error("session {0} already has an active transaction")]
    ActiveTxnExists(WtSessionId),
    #[error("read timestamp already set and operations have started on session {0}")]
    ReadTsFrozen(WtSessionId),
    #[error("commit timestamp not set on session {0}")]
    CommitTsUnset(WtSessionId),
    #[error("transaction on session {0} is prepared")]
    Prepared(WtSessionId),
    #[error("transaction on session {0} is not prepared")]
    NotPrepared(WtSessionId),
    #[error("commit timestamp {commit} below prepare timestamp {prepare}")]
    CommitBelowPrepare { commit: Ts, prepare: Ts },
}

#[derive(Debug, Default)]
pub struct WtEngine {
    current_tid: i64,
    sessions: BTreeMap<WtSessionId, WtTxn>,
    txn_global: BTreeMap<WtSessionId, TxnGlobalSlot>,
    store: BTreeMap<Key, Vec<VersionEntry>>,
    max_commit_ts: Option<Ts>,
    next_session: WtSessionId,
}

impl WtEngine {
    pub fn new() -> WtEngine {
        WtEngine { current_tid: 1, ..Default::default() }
    }

    pub fn open_session(&mut self) -> WtSessionId {
        let s = self.next_session;
        self.next_session += 1;
        s
    }

    pub fn start(&mut self, s: WtSessionId) -> Result<(), WtError> {
        if self.sessions.contains_key(&s) {
            return Err(WtError::ActiveTxnExists(s));
        }
        let mut txn = WtTxn::default();
        for slot in self.txn_global.values() {
            if let Some(tid) = slot.tid {
                txn.concur.insert(tid);
            }
        }
        txn.upper_limit = self.current_tid;
        self.sessions.insert(s, txn);
        Ok(())
    }

    /// The visibility rule. A version by `tid` stamped `ts` is visible to
    /// `txn` unless it is aborted, concurrent with `txn`, or started after
    /// `txn`; a transaction always observes itself. In timestamped mode a
    /// foreign version must additionally carry a timestamp within the read
    /// timestamp.
    pub fn txn_visible(txn: &WtTxn, tid: i64, ts: Option<Ts>) -> bool {
        if tid == TID_ABORTED {
            return false;
        }
        if txn.tid != 0 && tid == txn.tid {
            return true;
        }
        if txn.concur.contains(&tid) || tid >= txn.upper_limit {
            return false;
        }
        match (txn.read_ts, ts) {
            (Some(read_ts), Some(ts)) => ts <= read_ts,
            (Some(_), None) => false,
            (None, _) => true,
        }
    }

    /// Read `k`: the first visible version scanning newest-first, or the
    /// initial value if none is visible. The prepare phase is returned for
    /// the sharded layer.
    pub fn read(&mut self, s: WtSessionId, k: &str) -> Result<(Value, Option<PreparePhase>), WtError> {
        self.sessions.get_mut(&s).ok_or(WtError::NoActiveTxn(s))?.ops_started = true;
        let txn = &self.sessions[&s];
        if let Some(entries) = self.store.get(k) {
            for e in entries {
                if Self::txn_visible(txn, e.tid, e.ts) {
                    return Ok((e.value, e.phase));
                }
            }
        }
        Ok((INITIAL_VALUE, None))
    }

    /// Update `k`. Any non-aborted invisible version on the key is a write
    /// conflict: the transaction is rolled back.
    pub fn update(&mut self, s: WtSessionId, k: &str, v: Value) -> Result<UpdateOutcome, WtError> {
        self.sessions.get_mut(&s).ok_or(WtError::NoActiveTxn(s))?.ops_started = true;
        let txn = &self.sessions[&s];
        let conflicted = self.store.get(k).is_some_and(|entries| {
            entries
                .iter()
                .any(|e| !Self::txn_visible(txn, e.tid, e.ts) && e.tid != TID_ABORTED)
        });
        if conflicted {
            self.rollback(s)?;
            return Ok(UpdateOutcome::Rollback);
        }
        let next_tid = self.current_tid;
        let txn = self.sessions.get_mut(&s).expect("checked above");
        let assigned = if txn.tid == 0 {
            txn.tid = next_tid;
            true
        } else {
            false
        };
        txn.mods.push((k.to_string(), v));
        let tid = txn.tid;
        if assigned {
            self.current_tid += 1;
            self.txn_global.insert(s, TxnGlobalSlot { tid: Some(tid), pinned_commit_ts: None });
        }
        self.store
            .entry(k.to_string())
            .or_default()
            .insert(0, VersionEntry { tid, value: v, ts: None, phase: None });
        Ok(UpdateOutcome::Ok)
    }

    /// Commit: stamp this transaction's versions with its commit timestamp
    /// (still unset in plain mode) and clear the session.
    pub fn commit(&mut self, s: WtSessionId) -> Result<WtTxn, WtError> {
        let txn = self.sessions.get(&s).ok_or(WtError::NoActiveTxn(s))?;
        if txn.prepare_ts.is_some() {
            return Err(WtError::Prepared(s));
        }
        let txn = self.sessions.remove(&s).expect("checked above");
        for (k, _) in &txn.mods {
            for e in self.store.get_mut(k).into_iter().flatten() {
                if e.tid == txn.tid {
                    e.ts = txn.commit_ts;
                }
            }
        }
        self.txn_global.insert(s, TxnGlobalSlot::default());
        Ok(txn)
    }

    /// Roll back: tombstone this transaction's versions and clear the session.
    pub fn rollback(&mut self, s: WtSessionId) -> Result<WtTxn, WtError> {
        let txn = self.sessions.remove(&s).ok_or(WtError::NoActiveTxn(s))?;
        for (k, _) in &txn.mods {
            for e in self.store.get_mut(k).into_iter().flatten() {
                if e.tid == txn.tid {
                    e.tid = TID_ABORTED;
                }
            }
        }
        self.txn_global.insert(s, TxnGlobalSlot::default());
        Ok(txn)
    }

    /// Set the transaction's read timestamp. Allowed until the first
    /// read/update on the session.
    pub fn set_read_ts(&mut self, s: WtSessionId, rts: Option<Ts>) -> Result<(), WtError> {
        let txn = self.sessions.get_mut(&s).ok_or(WtError::NoActiveTxn(s))?;
        if txn.ops_started {
            return Err(WtError::ReadTsFrozen(s));
        }
        txn.read_ts = rts;
        Ok(())
    }

    /// Assign the commit timestamp on the active transaction; the caller
    /// writes it via this engine so the handler stays atomic.
    pub fn set_session_commit_ts(&mut self, s: WtSessionId, cts: Ts) -> Result<(), WtError> {
        let txn = self.sessions.get_mut(&s).ok_or(WtError::NoActiveTxn(s))?;
        txn.commit_ts = Some(cts);
        Ok(())
    }

    /// Publish the commit timestamp: advance maxCommitTs and pin the
    /// (tid, commitTs) pair in the global table so the gap-free frontier
    /// cannot pass it until the local commit lands. Read-only transactions
    /// pin tid 0, as written.
    pub fn set_commit_ts(&mut self, s: WtSessionId) -> Result<(), WtError> {
        let txn = self.sessions.get(&s).ok_or(WtError::NoActiveTxn(s))?;
        let cts = txn.commit_ts.ok_or(WtError::CommitTsUnset(s))?;
        self.max_commit_ts = Some(self.max_commit_ts.map_or(cts, |m| m.max(cts)));
        self.txn_global
            .insert(s, TxnGlobalSlot { tid: Some(txn.tid), pinned_commit_ts: Some(cts) });
        Ok(())
    }

    /// The largest timestamp at which the commit sequence has no gaps: the
    /// maximum known commit timestamp, held back to just below the smallest
    /// pinned (assigned but not yet locally committed) commit timestamp.
    pub fn all_committed(&self) -> Ts {
        let Some(max) = self.max_commit_ts else { return Ts::MIN };
        let pinned = self
            .txn_global
            .values()
            .filter_map(|slot| slot.pinned_commit_ts)
            .min();
        match pinned {
            Some(p) => max.min(p.predecessor()),
            None => max,
        }
    }

    /// Raise maxCommitTs directly; used when a timestamped no-op write lands
    /// in the log without going through a transaction commit.
    pub fn bump_max_commit_ts(&mut self, ts: Ts) {
        self.max_commit_ts = Some(self.max_commit_ts.map_or(ts, |m| m.max(ts)));
    }

    /// Prepare: stamp the transaction's versions with the prepare timestamp,
    /// flagged in-progress, and release its tid from the global table so the
    /// versions become (tid-)visible to later snapshots.
    pub fn prepare(&mut self, s: WtSessionId, pts: Ts) -> Result<(), WtError> {
        let txn = self.sessions.get_mut(&s).ok_or(WtError::NoActiveTxn(s))?;
        if txn.prepare_ts.is_some() {
            return Err(WtError::Prepared(s));
        }
        txn.prepare_ts = Some(pts);
        let tid = txn.tid;
        let mods = txn.mods.clone();
        for (k, _) in &mods {
            for e in self.store.get_mut(k).into_iter().flatten() {
                if e.tid == tid {
                    e.ts = Some(pts);
                    e.phase = Some(PreparePhase::InProgress);
                }
            }
        }
        self.txn_global.insert(s, TxnGlobalSlot::default());
        Ok(())
    }

    /// Record the decided commit timestamp on a prepared transaction and
    /// re-pin it in the global table.
    pub fn commit_prepare_ts(&mut self, s: WtSessionId, cts: Ts) -> Result<(), WtError> {
        let txn = self.sessions.get_mut(&s).ok_or(WtError::NoActiveTxn(s))?;
        let Some(pts) = txn.prepare_ts else {
            return Err(WtError::NotPrepared(s));
        };
        if cts < pts {
            // the coordinator takes the max of all prepare timestamps, so
            // this is unreachable in a conforming run
            return Err(WtError::CommitBelowPrepare { commit: cts, prepare: pts });
        }
        txn.commit_ts = Some(cts);
        let slot = TxnGlobalSlot { tid: Some(txn.tid), pinned_commit_ts: Some(cts) };
        self.txn_global.insert(s, slot);
        Ok(())
    }

    /// Finish a prepared transaction: versions move from the prepare
    /// timestamp to the commit timestamp and become resolved.
    pub fn commit_prepare(&mut self, s: WtSessionId) -> Result<WtTxn, WtError> {
        let txn = self.sessions.get(&s).ok_or(WtError::NoActiveTxn(s))?;
        if txn.prepare_ts.is_none() {
            return Err(WtError::NotPrepared(s));
        }
        let cts = txn.commit_ts.ok_or(WtError::CommitTsUnset(s))?;
        let txn = self.sessions.remove(&s).expect("checked above");
        for (k, _) in &txn.mods {
            for e in self.store.get_mut(k).into_iter().flatten() {
                if e.tid == txn.tid {
                    e.ts = Some(cts);
                    e.phase = Some(PreparePhase::Resolved);
                }
            }
        }
        self.txn_global.insert(s, TxnGlobalSlot::default());
        self.max_commit_ts = Some(self.max_commit_ts.map_or(cts, |m| m.max(cts)));
        Ok(txn)
    }

    /// Non-mutating visibility probe: the first visible version on `k` for
    /// the session's active transaction, if the store holds one.
    pub fn probe_first_visible(
        &self,
        s: WtSessionId,
        k: &str,
    ) -> Option<(Value, Option<PreparePhase>)> {
        let txn = self.sessions.get(&s)?;
        self.store
            .get(k)
            .and_then(|entries| entries.iter().find(|e| Self::txn_visible(txn, e.tid, e.ts)))
            .map(|e| (e.value, e.phase))
    }

    pub fn has_active_txn(&self, s: WtSessionId) -> bool {
        self.sessions.contains_key(&s)
    }

    pub fn active_txn(&self, s: WtSessionId) -> Option<&WtTxn> {
        self.sessions.get(&s)
    }

    pub fn current_tid(&self) -> i64 {
        self.current_tid
    }

    pub fn max_commit_ts(&self) -> Option<Ts> {
        self.max_commit_ts
    }

    /// Version chain for a key, newest first.
    pub fn version_chain(&self, k: &str) -> &[VersionEntry] {
        self.store.get(k).map_or(&[], |v| v.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engine() -> WtEngine {
        WtEngine::new()
    }

    #[test]
    fn start_snapshots_concurrent_updaters() {
        let mut wt = engine();
        // empty system: no concurrents, upper limit is the initial tid
        let s1 = wt.open_session();
        wt.start(s1).unwrap();
        assert_eq!(wt.active_txn(s1).unwrap().upper_limit, 1);
        assert!(wt.active_txn(s1).unwrap().concur.is_empty());
        // an in-flight updater lands in concur
        wt.update(s1, "x", 1).unwrap();
        let s2 = wt.open_session();
        wt.start(s2).unwrap();
        assert_eq!(wt.active_txn(s2).unwrap().concur, BTreeSet::from([1]));
        // after its commit, fresh transactions see no concurrents
        wt.commit(s1).unwrap();
        let s3 = wt.open_session();
        wt.start(s3).unwrap();
        assert!(wt.active_txn(s3).unwrap().concur.is_empty());
        assert_eq!(wt.active_txn(s3).unwrap().upper_limit, 2);
    }

    #[test]
    fn own_writes_are_visible_despite_upper_limit() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.update(s, "x", 7).unwrap();
        let txn = wt.active_txn(s).unwrap();
        assert!(txn.tid >= txn.upper_limit);
        assert_eq!(wt.read(s, "x").unwrap().0, 7);
    }

    #[test]
    fn concurrent_txn_stays_invisible_after_it_commits() {
        let mut wt = engine();
        let s1 = wt.open_session();
        wt.start(s1).unwrap();
        wt.update(s1, "x", 5).unwrap();
        let s2 = wt.open_session();
        wt.start(s2).unwrap(); // t5's tid is in concur now
        wt.commit(s1).unwrap();
        assert_eq!(wt.read(s2, "x").unwrap().0, INITIAL_VALUE);
    }

    #[test]
    fn timestamped_mode_bounds_reads_by_read_ts() {
        let mut wt = engine();
        let s1 = wt.open_session();
        wt.start(s1).unwrap();
        wt.update(s1, "x", 1).unwrap();
        wt.set_session_commit_ts(s1, Ts::new(10, 0)).unwrap();
        wt.set_commit_ts(s1).unwrap();
        wt.commit(s1).unwrap();

        let s2 = wt.open_session();
        wt.start(s2).unwrap();
        wt.set_read_ts(s2, Some(Ts::new(5, 0))).unwrap();
        // committed at (10,0), read snapshot at (5,0): invisible
        assert_eq!(wt.read(s2, "x").unwrap().0, INITIAL_VALUE);
        let s3 = wt.open_session();
        wt.start(s3).unwrap();
        wt.set_read_ts(s3, Some(Ts::new(10, 0))).unwrap();
        assert_eq!(wt.read(s3, "x").unwrap().0, 1);
    }

    #[test]
    fn snapshot_read_skips_newer_committed_version() {
        let mut wt = engine();
        let s1 = wt.open_session();
        wt.start(s1).unwrap();
        wt.update(s1, "x", 1).unwrap();
        wt.commit(s1).unwrap();
        // reader starts now: only the first version is in its snapshot
        let r = wt.open_session();
        wt.start(r).unwrap();
        let s2 = wt.open_session();
        wt.start(s2).unwrap();
        wt.update(s2, "x", 2).unwrap();
        wt.commit(s2).unwrap();
        // oracle: replay the visibility rule over the recorded chain
        let txn = wt.active_txn(r).unwrap().clone();
        let expect = wt
            .version_chain("x")
            .iter()
            .find(|e| WtEngine::txn_visible(&txn, e.tid, e.ts))
            .map(|e| e.value)
            .unwrap_or(INITIAL_VALUE);
        assert_eq!(expect, 1);
        assert_eq!(wt.read(r, "x").unwrap().0, 1);
    }

    #[test]
    fn first_writer_wins_conflict_rolls_back_second() {
        let mut wt = engine();
        let s1 = wt.open_session();
        let s2 = wt.open_session();
        wt.start(s1).unwrap();
        wt.start(s2).unwrap();
        wt.update(s1, "x", 1).unwrap();
        wt.commit(s1).unwrap();
        // s2 started before s1 committed: conflict
        assert_eq!(wt.update(s2, "x", 2).unwrap(), UpdateOutcome::Rollback);
        assert!(!wt.has_active_txn(s2));
    }

    #[test]
    fn aborted_entries_are_ignored_by_update() {
        let mut wt = engine();
        let s1 = wt.open_session();
        wt.start(s1).unwrap();
        wt.update(s1, "x", 1).unwrap();
        wt.rollback(s1).unwrap();
        assert_eq!(wt.version_chain("x")[0].tid, TID_ABORTED);
        let s2 = wt.open_session();
        wt.start(s2).unwrap();
        assert_eq!(wt.update(s2, "x", 2).unwrap(), UpdateOutcome::Ok);
        // readers skip the tombstone
        assert_eq!(wt.read(s2, "x").unwrap().0, 2);
    }

    #[test]
    fn rollback_tombstones_all_touched_keys() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.update(s, "x", 1).unwrap();
        wt.update(s, "y", 2).unwrap();
        wt.rollback(s).unwrap();
        for k in ["x", "y"] {
            assert!(wt.version_chain(k).iter().all(|e| e.tid == TID_ABORTED));
        }
        // read-only rollback leaves the store untouched
        let s2 = wt.open_session();
        wt.start(s2).unwrap();
        wt.read(s2, "x").unwrap();
        wt.rollback(s2).unwrap();
        assert_eq!(wt.version_chain("x").len(), 1);
    }

    #[test]
    fn commit_is_single_shot() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.commit(s).unwrap();
        assert_eq!(wt.commit(s), Err(WtError::NoActiveTxn(s)));
    }

    #[test]
    fn read_ts_frozen_after_first_op() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.set_read_ts(s, Some(Ts::new(1, 0))).unwrap();
        // overwrite allowed before any operation
        wt.set_read_ts(s, Some(Ts::new(2, 0))).unwrap();
        wt.read(s, "x").unwrap();
        assert_eq!(wt.set_read_ts(s, Some(Ts::new(3, 0))), Err(WtError::ReadTsFrozen(s)));
    }

    #[test]
    fn set_commit_ts_advances_frontier_and_pins() {
        let mut wt = engine();
        let s1 = wt.open_session();
        wt.start(s1).unwrap();
        wt.update(s1, "x", 1).unwrap();
        wt.set_session_commit_ts(s1, Ts::new(5, 0)).unwrap();
        wt.set_commit_ts(s1).unwrap();
        assert_eq!(wt.max_commit_ts(), Some(Ts::new(5, 0)));
        // pinned until the local commit: frontier sits just below (5,0)
        assert_eq!(wt.all_committed(), Ts::new(5, 0).predecessor());
        wt.commit(s1).unwrap();
        assert_eq!(wt.all_committed(), Ts::new(5, 0));
        // a smaller commit timestamp leaves maxCommitTs unchanged
        let s2 = wt.open_session();
        wt.start(s2).unwrap();
        wt.set_session_commit_ts(s2, Ts::new(3, 0)).unwrap();
        wt.set_commit_ts(s2).unwrap();
        assert_eq!(wt.max_commit_ts(), Some(Ts::new(5, 0)));
        // ... but the gap at (3,0) pins the frontier below it
        assert_eq!(wt.all_committed(), Ts::new(3, 0).predecessor());
        wt.commit(s2).unwrap();
        assert_eq!(wt.all_committed(), Ts::new(5, 0));
    }

    #[test]
    fn read_only_set_commit_ts_pins_tid_zero() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.read(s, "x").unwrap();
        wt.set_session_commit_ts(s, Ts::new(4, 0)).unwrap();
        wt.set_commit_ts(s).unwrap();
        // the literal protocol records tid 0 for read-only transactions
        assert_eq!(wt.txn_global[&s].tid, Some(0));
        assert_eq!(wt.all_committed(), Ts::new(4, 0).predecessor());
        wt.commit(s).unwrap();
        assert_eq!(wt.all_committed(), Ts::new(4, 0));
    }

    #[test]
    fn all_committed_is_min_when_nothing_committed() {
        let wt = engine();
        assert_eq!(wt.all_committed(), Ts::MIN);
    }

    #[test]
    fn prepare_flags_versions_and_releases_tid() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.update(s, "x", 9).unwrap();
        wt.prepare(s, Ts::new(7, 0)).unwrap();
        let e = &wt.version_chain("x")[0];
        assert_eq!(e.phase, Some(PreparePhase::InProgress));
        assert_eq!(e.ts, Some(Ts::new(7, 0)));
        assert_eq!(wt.txn_global[&s].tid, None);
        // a later snapshot sees the prepared (in-progress) version
        let r = wt.open_session();
        wt.start(r).unwrap();
        wt.set_read_ts(r, Some(Ts::new(8, 0))).unwrap();
        let (v, phase) = wt.read(r, "x").unwrap();
        assert_eq!((v, phase), (9, Some(PreparePhase::InProgress)));
        // double prepare is a protocol error
        assert_eq!(wt.prepare(s, Ts::new(8, 0)), Err(WtError::Prepared(s)));
    }

    #[test]
    fn prepare_of_read_only_participant_is_ok() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.read(s, "x").unwrap();
        wt.prepare(s, Ts::new(7, 0)).unwrap();
        assert!(wt.version_chain("x").is_empty());
    }

    #[test]
    fn commit_prepare_restamps_to_commit_ts() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.update(s, "x", 9).unwrap();
        wt.prepare(s, Ts::new(7, 0)).unwrap();
        // decided timestamp below the prepare timestamp is a protocol bug
        assert_eq!(
            wt.commit_prepare_ts(s, Ts::new(6, 0)),
            Err(WtError::CommitBelowPrepare { commit: Ts::new(6, 0), prepare: Ts::new(7, 0) })
        );
        wt.commit_prepare_ts(s, Ts::new(9, 0)).unwrap();
        assert_eq!(wt.txn_global[&s].pinned_commit_ts, Some(Ts::new(9, 0)));
        wt.commit_prepare(s).unwrap();
        let e = &wt.version_chain("x")[0];
        assert_eq!(e.phase, Some(PreparePhase::Resolved));
        assert_eq!(e.ts, Some(Ts::new(9, 0)));
        assert_eq!(wt.max_commit_ts(), Some(Ts::new(9, 0)));
    }

    #[test]
    fn commit_prepare_requires_prepare_and_commit_ts() {
        let mut wt = engine();
        let s = wt.open_session();
        wt.start(s).unwrap();
        wt.update(s, "x", 1).unwrap();
        assert_eq!(wt.commit_prepare(s), Err(WtError::NotPrepared(s)));
        assert_eq!(wt.commit_prepare_ts(s, Ts::new(1, 0)), Err(WtError::NotPrepared(s)));
        wt.prepare(s, Ts::new(1, 0)).unwrap();
        assert_eq!(wt.commit_prepare(s), Err(WtError::CommitTsUnset(s)));
    }
}
