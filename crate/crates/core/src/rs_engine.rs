//! The replica-set protocol: primary-side transaction lifecycle over the
//! storage engine, cluster time, the oplog (including noop entries for the
//! speculative-majority strategy), and pull-based replication that computes
//! the majority-commit frontier.
//!
//! The engine is a passive state machine: the scheduler (or a directed
//! script) drives the handlers and realizes the blocking points — the
//! majority wait in commit and the prepared-read retry — by polling
//! [`RsPrimary::majority_frontier`] and re-invoking blocked steps.

use crate::clock::{HlcClock, Ts};
use crate::model::{Key, Value};
use crate::wt_engine::{PreparePhase, UpdateOutcome, WtEngine, WtError, WtSessionId, WtTxn};
use std::collections::BTreeMap;
use thiserror::Error;

pub type RsSessionId = u64;
pub type SecondaryId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OplogPayload {
    Ops(Vec<(Key, Value)>),
    Noop,
    /// Prepared-transaction decision marker carrying the commit timestamp.
    CommitMarker(Ts),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OplogEntry {
    pub ts: Ts,
    pub payload: OplogPayload,
}

/// Simulated wire messages for replication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RsMessage {
    PullOplog { last_pulled: Ts },
    PushOplog { entries: Vec<OplogEntry>, ct: Ts },
    ReplicateAck { last_pulled: Ts },
}

/// Which layer drives this primary. The sharded layer assigns read
/// timestamps from the router and pre-reads on update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    Rs,
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadStep {
    Value(Value),
    /// The first visible version is prepared and undecided; retry after the
    /// next state change.
    BlockedOnPrepared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStep {
    Ok,
    Rollback,
    BlockedOnPrepared,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RsError {
    #[error("session {0} has no open transaction")]
    NotBound(RsSessionId),
    #[error(transparent)]
    Wt(#[from] WtError),
}

#[derive(Debug)]
pub struct RsPrimary {
    pub clock: HlcClock,
    pub oplog: Vec<OplogEntry>,
    pub wt: WtEngine,
    mode: EngineMode,
    replica_count: usize,
    rs_wt_conns: BTreeMap<RsSessionId, WtSessionId>,
    txn_ops: BTreeMap<RsSessionId, Vec<(Key, Value)>>,
    last_pulled_acks: BTreeMap<SecondaryId, Ts>,
    last_majority_committed: Ts,
}

impl RsPrimary {
    pub fn new(mode: EngineMode, replica_count: usize) -> RsPrimary {
        assert!(replica_count >= 1);
        RsPrimary {
            clock: HlcClock::new(),
            oplog: Vec::new(),
            wt: WtEngine::new(),
            mode,
            replica_count,
            rs_wt_conns: BTreeMap::new(),
            txn_ops: BTreeMap::new(),
            last_pulled_acks: BTreeMap::new(),
            last_majority_committed: Ts::MIN,
        }
    }

    pub fn mode(&self) -> EngineMode {
        self.mode
    }

    pub fn is_open(&self, rs_sid: RsSessionId) -> bool {
        self.rs_wt_conns.contains_key(&rs_sid)
    }

    pub fn wt_sid(&self, rs_sid: RsSessionId) -> Result<WtSessionId, RsError> {
        self.rs_wt_conns.get(&rs_sid).copied().ok_or(RsError::NotBound(rs_sid))
    }

    /// First operation of a transaction: open a storage session and take the
    /// snapshot at the gap-free frontier. Returns the read timestamp.
    /// No-op if the transaction is already open.
    pub fn open_wt_session(&mut self, rs_sid: RsSessionId) -> Result<Ts, RsError> {
        assert_eq!(self.mode, EngineMode::Rs, "sharded transactions are opened by the router");
        if let Some(&wt_sid) = self.rs_wt_conns.get(&rs_sid) {
            return Ok(self.wt.active_txn(wt_sid).and_then(|t| t.read_ts).unwrap_or(Ts::MIN));
        }
        let wt_sid = self.wt.open_session();
        self.wt.start(wt_sid)?;
        let read_ts = self.wt.all_committed();
        self.wt.set_read_ts(wt_sid, Some(read_ts))?;
        self.rs_wt_conns.insert(rs_sid, wt_sid);
        Ok(read_ts)
    }

    /// Sharded variant: the snapshot point comes from the router and the
    /// caller has already met the read-concern waits.
    pub fn open_wt_session_at(&mut self, rs_sid: RsSessionId, read_ts: Ts) -> Result<(), RsError> {
        assert_eq!(self.mode, EngineMode::Sc);
        if self.rs_wt_conns.contains_key(&rs_sid) {
            return Ok(());
        }
        let wt_sid = self.wt.open_session();
        self.wt.start(wt_sid)?;
        self.wt.set_read_ts(wt_sid, Some(read_ts))?;
        self.rs_wt_conns.insert(rs_sid, wt_sid);
        Ok(())
    }

    pub fn read(&mut self, rs_sid: RsSessionId, k: &str) -> Result<ReadStep, RsError> {
        if self.mode == EngineMode::Rs {
            self.open_wt_session(rs_sid)?;
        }
        let wt_sid = self.wt_sid(rs_sid)?;
        let (v, phase) = self.wt.read(wt_sid, k)?;
        if phase == Some(PreparePhase::InProgress) {
            return Ok(ReadStep::BlockedOnPrepared);
        }
        Ok(ReadStep::Value(v))
    }

    pub fn update(&mut self, rs_sid: RsSessionId, k: &str, v: Value) -> Result<UpdateStep, RsError> {
        if self.mode == EngineMode::Rs {
            self.open_wt_session(rs_sid)?;
        }
        let wt_sid = self.wt_sid(rs_sid)?;
        if self.mode == EngineMode::Sc {
            // an update may land on a prepared, undecided version: delay it
            // by reading the key first, like a blocked read
            let (_, phase) = self.wt.read(wt_sid, k)?;
            if phase == Some(PreparePhase::InProgress) {
                return Ok(UpdateStep::BlockedOnPrepared);
            }
        }
        match self.wt.update(wt_sid, k, v)? {
            UpdateOutcome::Ok => {
                self.txn_ops.entry(rs_sid).or_default().push((k.to_string(), v));
                Ok(UpdateStep::Ok)
            }
            UpdateOutcome::Rollback => {
                self.txn_ops.remove(&rs_sid);
                self.rs_wt_conns.remove(&rs_sid);
                Ok(UpdateStep::Rollback)
            }
        }
    }

    /// First half of commit, one atomic step: tick the cluster time, take it
    /// as the commit timestamp, publish it, and append the oplog entry (a
    /// noop for read-only transactions). The local storage commit is a
    /// separate step and the scheduler may interleave between them; the
    /// pinned commit timestamp protects the frontier in that window.
    pub fn commit_begin(&mut self, rs_sid: RsSessionId, now: u64) -> Result<Ts, RsError> {
        let wt_sid = self.wt_sid(rs_sid)?;
        let ct = self.clock.tick(now);
        self.wt.set_session_commit_ts(wt_sid, ct)?;
        self.wt.set_commit_ts(wt_sid)?;
        let ops = self.txn_ops.remove(&rs_sid).unwrap_or_default();
        let payload = if ops.is_empty() { OplogPayload::Noop } else { OplogPayload::Ops(ops) };
        self.append_oplog(OplogEntry { ts: ct, payload });
        Ok(ct)
    }

    /// Second half of commit: the local storage commit. After this the
    /// session waits for `majority_frontier() >= cts`.
    pub fn commit_local(&mut self, rs_sid: RsSessionId) -> Result<WtTxn, RsError> {
        let wt_sid = self.wt_sid(rs_sid)?;
        let txn = self.wt.commit(wt_sid)?;
        self.rs_wt_conns.remove(&rs_sid);
        Ok(txn)
    }

    pub fn rollback(&mut self, rs_sid: RsSessionId) -> Result<Option<WtTxn>, RsError> {
        self.txn_ops.remove(&rs_sid);
        match self.rs_wt_conns.remove(&rs_sid) {
            Some(wt_sid) => Ok(Some(self.wt.rollback(wt_sid)?)),
            None => Ok(None),
        }
    }

    /// Read-concern wait, first half: a lagging shard catches its clock up
    /// to the router-assigned read timestamp by writing a noop at it.
    pub fn ensure_clock_covers(&mut self, read_ts: Ts) {
        if self.clock.now() < read_ts {
            self.append_oplog(OplogEntry { ts: read_ts, payload: OplogPayload::Noop });
            self.clock.observe(read_ts);
            self.wt.bump_max_commit_ts(read_ts);
        }
    }

    /// Prepare the local branch of a sharded transaction: tick for the
    /// prepare timestamp, flag the versions, and log the updates (or a noop
    /// for a read-only participant). The caller waits for the entry to be
    /// majority committed before acknowledging.
    pub fn prepare_local(&mut self, rs_sid: RsSessionId, now: u64) -> Result<Ts, RsError> {
        let wt_sid = self.wt_sid(rs_sid)?;
        let pts = self.clock.tick(now);
        self.wt.prepare(wt_sid, pts)?;
        let ops = self.txn_ops.remove(&rs_sid).unwrap_or_default();
        let payload = if ops.is_empty() { OplogPayload::Noop } else { OplogPayload::Ops(ops) };
        self.append_oplog(OplogEntry { ts: pts, payload });
        Ok(pts)
    }

    /// Apply the coordinator's decision locally: re-stamp the prepared
    /// versions at the decided commit timestamp, resolve them, and log the
    /// decision marker. Returns the marker's timestamp and the finished
    /// storage transaction.
    pub fn commit_prepared_local(
        &mut self,
        rs_sid: RsSessionId,
        cts: Ts,
        now: u64,
    ) -> Result<(Ts, WtTxn), RsError> {
        let wt_sid = self.wt_sid(rs_sid)?;
        let ct = self.clock.tick(now);
        self.wt.commit_prepare_ts(wt_sid, cts)?;
        let txn = self.wt.commit_prepare(wt_sid)?;
        self.append_oplog(OplogEntry { ts: ct, payload: OplogPayload::CommitMarker(cts) });
        self.rs_wt_conns.remove(&rs_sid);
        Ok((ct, txn))
    }

    /// Abort the local branch (fan-out from the router after a conflict on
    /// another shard). The caller waits on the current frontier afterwards.
    pub fn abort_local(&mut self, rs_sid: RsSessionId) -> Result<Option<WtTxn>, RsError> {
        self.rollback(rs_sid)
    }

    /// Append a bare noop record; the coordinator persists its participant
    /// list and decision this way, gated by the usual majority wait on the
    /// returned timestamp.
    pub fn append_noop_record(&mut self, now: u64) -> Ts {
        let ct = self.clock.tick(now);
        self.append_oplog(OplogEntry { ts: ct, payload: OplogPayload::Noop });
        ct
    }

    pub fn majority_frontier(&self) -> Ts {
        self.last_majority_committed
    }

    /// Would a read of `k` land on a prepared, undecided version right now?
    pub fn read_would_block(&self, rs_sid: RsSessionId, k: &str) -> bool {
        let Ok(wt_sid) = self.wt_sid(rs_sid) else { return false };
        matches!(
            self.wt.probe_first_visible(wt_sid, k),
            Some((_, Some(PreparePhase::InProgress)))
        )
    }

    /// Timestamp of the last oplog entry; the primary's own replication
    /// frontier.
    pub fn self_frontier(&self) -> Ts {
        self.oplog.last().map_or(Ts::MIN, |e| e.ts)
    }

    fn append_oplog(&mut self, entry: OplogEntry) {
        if let Some(last) = self.oplog.last() {
            assert!(entry.ts > last.ts, "oplog timestamps must strictly increase");
        }
        self.oplog.push(entry);
        // the primary counts as a replica: appending is its own ack
        self.recompute_majority();
    }

    pub fn handle_pull(&self, last_pulled: Ts) -> RsMessage {
        let entries: Vec<OplogEntry> =
            self.oplog.iter().filter(|e| e.ts > last_pulled).cloned().collect();
        RsMessage::PushOplog { entries, ct: self.clock.now() }
    }

    pub fn handle_ack(&mut self, sec: SecondaryId, last_pulled: Ts) {
        self.last_pulled_acks.insert(sec, last_pulled);
        self.recompute_majority();
    }

    fn recompute_majority(&mut self) {
        let secondaries = self.replica_count - 1;
        let mut values: Vec<Ts> = (0..secondaries)
            .map(|sec| self.last_pulled_acks.get(&sec).copied().unwrap_or(Ts::MIN))
            .collect();
        values.push(self.self_frontier());
        values.sort_unstable_by(|a, b| b.cmp(a));
        let frontier = values[self.replica_count / 2];
        assert!(
            frontier >= self.last_majority_committed,
            "majority frontier moved backwards"
        );
        self.last_majority_committed = frontier;
    }
}

#[derive(Debug, Default)]
pub struct RsSecondary {
    pub oplog: Vec<OplogEntry>,
    pub last_pulled: Ts,
}

impl RsSecondary {
    pub fn new() -> RsSecondary {
        RsSecondary::default()
    }

    pub fn pull_request(&self) -> RsMessage {
        RsMessage::PullOplog { last_pulled: self.last_pulled }
    }

    /// Append the pulled entries and advance the pull frontier. Entries the
    /// secondary already holds (overlapping in-flight pulls) are skipped.
    /// Returns the ack to send back.
    pub fn handle_push(&mut self, entries: Vec<OplogEntry>, ct: Ts) -> RsMessage {
        for e in entries {
            if let Some(last) = self.oplog.last() {
                if e.ts <= last.ts {
                    continue;
                }
            }
            self.oplog.push(e);
        }
        if ct > self.last_pulled {
            self.last_pulled = ct;
        }
        RsMessage::ReplicateAck { last_pulled: self.last_pulled }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn replicate_once(p: &mut RsPrimary, s: &mut RsSecondary, sec: SecondaryId) {
        let RsMessage::PullOplog { last_pulled } = s.pull_request() else { unreachable!() };
        let RsMessage::PushOplog { entries, ct } = p.handle_pull(last_pulled) else {
            unreachable!()
        };
        let RsMessage::ReplicateAck { last_pulled } = s.handle_push(entries, ct) else {
            unreachable!()
        };
        p.handle_ack(sec, last_pulled);
    }

    #[test]
    fn read_ts_is_gap_free_frontier_at_open() {
        let mut p = RsPrimary::new(EngineMode::Rs, 1);
        let mut now = 1;
        // commit a write on session 1
        p.open_wt_session(1).unwrap();
        p.update(1, "x", 1).unwrap();
        let cts = p.commit_begin(1, now).unwrap();
        now += 1;
        p.commit_local(1).unwrap();
        // a new transaction reads exactly at the committed frontier
        let rts = p.open_wt_session(2).unwrap();
        assert_eq!(rts, cts);
        assert_eq!(p.read(2, "x").unwrap(), ReadStep::Value(1));
        // back-to-back transactions on one session get distinct wt sessions
        p.commit_begin(2, now).unwrap();
        p.commit_local(2).unwrap();
        let rts2 = p.open_wt_session(2).unwrap();
        assert!(rts2 > rts);
    }

    #[test]
    fn second_op_does_not_reopen() {
        let mut p = RsPrimary::new(EngineMode::Rs, 1);
        let rts = p.open_wt_session(1).unwrap();
        let wt_sid = p.wt_sid(1).unwrap();
        assert_eq!(p.open_wt_session(1).unwrap(), rts);
        assert_eq!(p.wt_sid(1).unwrap(), wt_sid);
    }

    #[test]
    fn commit_gap_pins_the_frontier_for_new_readers() {
        let mut p = RsPrimary::new(EngineMode::Rs, 1);
        p.open_wt_session(1).unwrap();
        p.update(1, "x", 1).unwrap();
        let cts = p.commit_begin(1, 5).unwrap();
        // between commit-begin and the local commit, a reader's snapshot
        // stays just below the pinned commit timestamp
        let rts = p.open_wt_session(2).unwrap();
        assert_eq!(rts, cts.predecessor());
        assert!(rts < cts);
        assert_eq!(p.read(2, "x").unwrap(), ReadStep::Value(0));
        p.commit_local(1).unwrap();
        let rts3 = p.open_wt_session(3).unwrap();
        assert_eq!(rts3, cts);
        assert_eq!(p.read(3, "x").unwrap(), ReadStep::Value(1));
    }

    #[test]
    fn commit_waits_for_majority_in_a_three_node_set() {
        let mut p = RsPrimary::new(EngineMode::Rs, 3);
        let mut s1 = RsSecondary::new();
        p.open_wt_session(1).unwrap();
        p.update(1, "x", 1).unwrap();
        let cts = p.commit_begin(1, 3).unwrap();
        p.commit_local(1).unwrap();
        // locally committed but not majority committed
        assert!(p.majority_frontier() < cts);
        replicate_once(&mut p, &mut s1, 0);
        assert!(p.majority_frontier() >= cts);
        assert_eq!(s1.oplog.len(), 1);
    }

    #[test]
    fn quorum_frontier_matches_sorted_ack_oracle() {
        // n = 3: one secondary acked 10, the primary is at 12
        let mut p = RsPrimary::new(EngineMode::Rs, 3);
        p.oplog.push(OplogEntry { ts: Ts::new(12, 0), payload: OplogPayload::Noop });
        p.handle_ack(0, Ts::new(10, 0));
        assert_eq!(p.majority_frontier(), Ts::new(10, 0));

        // n = 5: acks 10, 8, 6, 4 with the primary at 12 -> third largest
        let mut p = RsPrimary::new(EngineMode::Rs, 5);
        p.oplog.push(OplogEntry { ts: Ts::new(12, 0), payload: OplogPayload::Noop });
        for (sec, ts) in [(0, 10), (1, 8), (2, 6), (3, 4)] {
            p.handle_ack(sec, Ts::new(ts, 0));
        }
        // oracle: sort all five frontiers descending, take index n/2
        let mut vals =
            vec![Ts::new(12, 0), Ts::new(10, 0), Ts::new(8, 0), Ts::new(6, 0), Ts::new(4, 0)];
        vals.sort_by(|a, b| b.cmp(a));
        assert_eq!(p.majority_frontier(), vals[5 / 2]);
        assert_eq!(p.majority_frontier(), Ts::new(8, 0));

        // no acks yet: frontier is the minimum timestamp
        let mut p = RsPrimary::new(EngineMode::Rs, 3);
        p.oplog.push(OplogEntry { ts: Ts::new(12, 0), payload: OplogPayload::Noop });
        p.recompute_majority();
        assert_eq!(p.majority_frontier(), Ts::MIN);
    }

    #[test]
    fn replication_keeps_secondary_a_prefix() {
        let mut p = RsPrimary::new(EngineMode::Rs, 3);
        let mut s = RsSecondary::new();
        let mut now = 1;
        for i in 0..3 {
            let sid = i as RsSessionId + 1;
            p.open_wt_session(sid).unwrap();
            p.update(sid, "k", i).unwrap();
            p.commit_begin(sid, now).unwrap();
            now += 1;
            p.commit_local(sid).unwrap();
            replicate_once(&mut p, &mut s, 0);
            assert_eq!(s.oplog, p.oplog[..s.oplog.len()].to_vec());
            assert_eq!(s.oplog.len(), p.oplog.len());
        }
        // an empty delta acks with an unchanged frontier
        let before = s.last_pulled;
        replicate_once(&mut p, &mut s, 0);
        assert_eq!(s.last_pulled, before);
    }

    #[test]
    fn duplicate_push_is_idempotent() {
        let mut p = RsPrimary::new(EngineMode::Rs, 3);
        let mut s = RsSecondary::new();
        p.open_wt_session(1).unwrap();
        p.update(1, "x", 1).unwrap();
        p.commit_begin(1, 2).unwrap();
        p.commit_local(1).unwrap();
        let RsMessage::PushOplog { entries, ct } = p.handle_pull(Ts::MIN) else { unreachable!() };
        s.handle_push(entries.clone(), ct);
        s.handle_push(entries, ct);
        assert_eq!(s.oplog.len(), 1);
    }

    #[test]
    fn rollback_clears_ops_and_leaves_no_oplog_entry() {
        let mut p = RsPrimary::new(EngineMode::Rs, 1);
        p.open_wt_session(1).unwrap();
        p.update(1, "x", 1).unwrap();
        p.update(1, "y", 2).unwrap();
        p.rollback(1).unwrap();
        assert!(p.oplog.is_empty());
        assert!(!p.is_open(1));
        // fresh transaction on the same session starts clean and the store
        // shows only tombstones
        let rts = p.open_wt_session(1).unwrap();
        assert_eq!(rts, Ts::MIN);
        assert_eq!(p.read(1, "x").unwrap(), ReadStep::Value(0));
    }

    #[test]
    fn updates_recorded_in_issue_order_with_duplicates() {
        let mut p = RsPrimary::new(EngineMode::Rs, 1);
        p.open_wt_session(1).unwrap();
        p.update(1, "x", 1).unwrap();
        p.update(1, "y", 2).unwrap();
        p.update(1, "x", 3).unwrap();
        p.commit_begin(1, 9).unwrap();
        let OplogPayload::Ops(ops) = &p.oplog[0].payload else { panic!("expected ops") };
        assert_eq!(
            ops,
            &vec![("x".to_string(), 1), ("y".to_string(), 2), ("x".to_string(), 3)]
        );
    }

    #[test]
    fn clock_catch_up_writes_noop_at_read_ts() {
        let mut p = RsPrimary::new(EngineMode::Sc, 1);
        let rts = Ts::new(50, 0);
        p.ensure_clock_covers(rts);
        assert_eq!(p.oplog.last().unwrap(), &OplogEntry { ts: rts, payload: OplogPayload::Noop });
        assert_eq!(p.clock.now(), rts);
        assert!(p.wt.all_committed() >= rts);
        // already covered: nothing appended
        p.ensure_clock_covers(Ts::new(40, 0));
        assert_eq!(p.oplog.len(), 1);
    }
}
