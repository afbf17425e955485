//! The sharded-cluster protocol: the transaction router and the always-
//! commits two-phase commit among shard primaries.
//!
//! Each shard is a replica-set primary in sharded mode. The router assigns
//! read timestamps from its cluster time, routes keys to shards by a static
//! hash, designates the first shard touched as the coordinator, and tracks
//! participants. The shard-side handlers live on [`RsPrimary`]; the
//! simulator (or a test) carries the messages between them and realizes the
//! majority waits.

use crate::clock::{HlcClock, Ts};
use crate::rs_engine::{RsPrimary, RsSessionId};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type ScSessionId = u64;
pub type ShardId = u64;

/// Two-phase-commit wire messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoPcMessage {
    Prepare { sc_sid: ScSessionId },
    PrepareAck { prepare_ts: Ts },
    Commit { sc_sid: ScSessionId, commit_ts: Ts },
    Abort { sc_sid: ScSessionId },
    DecAck { sc_sid: ScSessionId },
    TwoPcAck,
}

/// Static key placement: FNV-1a over the key bytes, mod the shard count.
/// Stable across runs so histories replay identically.
pub fn route_key(k: &str, shard_count: u64) -> ShardId {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in k.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h % shard_count
}

#[derive(Debug, Clone)]
pub struct ScTxn {
    pub rs_sid: RsSessionId,
    pub read_ts: Ts,
    pub coordinator: Option<ShardId>,
    pub participants: BTreeSet<ShardId>,
    /// Whether any update succeeded; read-only transactions skip 2PC.
    pub updated: bool,
    pub aborted: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScError {
    #[error("session {0} already has an active transaction")]
    ActiveTxnExists(ScSessionId),
    #[error("session {0} has no active transaction")]
    NoActiveTxn(ScSessionId),
}

#[derive(Debug)]
pub struct Mongos {
    pub clock: HlcClock,
    shard_count: u64,
    next_rs_sid: RsSessionId,
    active: BTreeMap<ScSessionId, ScTxn>,
}

impl Mongos {
    pub fn new(shard_count: u64) -> Mongos {
        assert!(shard_count >= 1);
        Mongos { clock: HlcClock::new(), shard_count, next_rs_sid: 1, active: BTreeMap::new() }
    }

    pub fn shard_count(&self) -> u64 {
        self.shard_count
    }

    /// Start a transaction: merge the client's cluster time and take the
    /// router's time as the read timestamp.
    pub fn begin(&mut self, sc_sid: ScSessionId, client_ct: Ts) -> Result<Ts, ScError> {
        if self.active.contains_key(&sc_sid) {
            return Err(ScError::ActiveTxnExists(sc_sid));
        }
        self.clock.observe(client_ct);
        let read_ts = self.clock.now();
        let rs_sid = self.next_rs_sid;
        self.next_rs_sid += 1;
        self.active.insert(
            sc_sid,
            ScTxn {
                rs_sid,
                read_ts,
                coordinator: None,
                participants: BTreeSet::new(),
                updated: false,
                aborted: false,
            },
        );
        Ok(read_ts)
    }

    pub fn route(&self, k: &str) -> ShardId {
        route_key(k, self.shard_count)
    }

    /// Record that an operation is headed to `shard`. The first shard
    /// touched becomes the coordinator.
    pub fn note_op(&mut self, sc_sid: ScSessionId, shard: ShardId) -> Result<&ScTxn, ScError> {
        let txn = self.active.get_mut(&sc_sid).ok_or(ScError::NoActiveTxn(sc_sid))?;
        if txn.coordinator.is_none() {
            txn.coordinator = Some(shard);
        }
        txn.participants.insert(shard);
        Ok(txn)
    }

    pub fn note_update_ok(&mut self, sc_sid: ScSessionId) -> Result<(), ScError> {
        self.active.get_mut(&sc_sid).ok_or(ScError::NoActiveTxn(sc_sid))?.updated = true;
        Ok(())
    }

    pub fn note_aborted(&mut self, sc_sid: ScSessionId) -> Result<(), ScError> {
        self.active.get_mut(&sc_sid).ok_or(ScError::NoActiveTxn(sc_sid))?.aborted = true;
        Ok(())
    }

    pub fn txn(&self, sc_sid: ScSessionId) -> Result<&ScTxn, ScError> {
        self.active.get(&sc_sid).ok_or(ScError::NoActiveTxn(sc_sid))
    }

    pub fn end_txn(&mut self, sc_sid: ScSessionId) -> Result<ScTxn, ScError> {
        self.active.remove(&sc_sid).ok_or(ScError::NoActiveTxn(sc_sid))
    }
}

/// One shard: a replica-set primary in sharded mode; secondaries are owned
/// by the simulator.
pub fn shard_primary(replica_count: usize) -> RsPrimary {
    RsPrimary::new(crate::rs_engine::EngineMode::Sc, replica_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rs_engine::{EngineMode, ReadStep, UpdateStep};
    use crate::wt_engine::PreparePhase;

    #[test]
    fn routing_is_deterministic_and_in_range() {
        for shards in 1..=4u64 {
            for k in ["k0", "k1", "alpha", "x"] {
                let a = route_key(k, shards);
                let b = route_key(k, shards);
                assert_eq!(a, b);
                assert!(a < shards);
            }
        }
        // the standard corpus of ten keys spreads over two shards
        let hits: BTreeSet<ShardId> =
            (0..10).map(|i| route_key(&format!("k{i}"), 2)).collect();
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn begin_takes_router_time_and_merges_client_time() {
        let mut m = Mongos::new(2);
        m.clock.observe(Ts::new(5, 0));
        let rts = m.begin(1, Ts::MIN).unwrap();
        assert_eq!(rts, Ts::new(5, 0));
        assert!(matches!(m.begin(1, Ts::MIN), Err(ScError::ActiveTxnExists(1))));
        // a client ahead of the router drags the read timestamp forward
        let rts = m.begin(2, Ts::new(9, 3)).unwrap();
        assert_eq!(rts, Ts::new(9, 3));
    }

    #[test]
    fn first_shard_becomes_coordinator() {
        let mut m = Mongos::new(4);
        m.begin(7, Ts::MIN).unwrap();
        m.note_op(7, 3).unwrap();
        m.note_op(7, 1).unwrap();
        let t = m.txn(7).unwrap();
        assert_eq!(t.coordinator, Some(3));
        assert_eq!(t.participants, BTreeSet::from([1, 3]));
    }

    /// Drive a full two-shard 2PC by hand with single-node replica sets
    /// (majority = local append), checking timestamps end to end.
    #[test]
    fn two_shard_two_pc_commits_at_max_prepare_ts() {
        let mut m = Mongos::new(2);
        let mut shards = vec![shard_primary(1), shard_primary(1)];
        let mut now = 1;
        m.clock.tick(now);
        now += 1;

        let rts = m.begin(1, Ts::MIN).unwrap();
        let rs_sid = m.txn(1).unwrap().rs_sid;
        // update one key on each shard
        for (shard, k, v) in [(0usize, "a", 10), (1usize, "b", 20)] {
            m.note_op(1, shard as ShardId).unwrap();
            let p = &mut shards[shard];
            p.ensure_clock_covers(rts);
            // single-node set: the frontier follows the log instantly
            assert!(p.wt.all_committed() >= rts);
            p.open_wt_session_at(rs_sid, rts).unwrap();
            assert_eq!(p.update(rs_sid, k, v).unwrap(), UpdateStep::Ok);
            m.note_update_ok(1).unwrap();
        }
        // prepare on both participants
        let mut prepare_acks = Vec::new();
        for p in shards.iter_mut() {
            let pts = p.prepare_local(rs_sid, now).unwrap();
            now += 1;
            assert!(p.majority_frontier() >= pts);
            prepare_acks.push(pts);
        }
        let cts = *prepare_acks.iter().max().unwrap();
        assert_eq!(cts, prepare_acks[1], "later prepare has the larger timestamp");
        // commit on both
        for p in shards.iter_mut() {
            let (marker_ts, txn) = p.commit_prepared_local(rs_sid, cts, now).unwrap();
            now += 1;
            assert!(marker_ts > cts || marker_ts > txn.prepare_ts.unwrap());
            assert!(p.majority_frontier() >= marker_ts);
        }
        // both stores hold the values stamped at the decided timestamp
        for (shard, k, v) in [(0usize, "a", 10), (1usize, "b", 20)] {
            let e = &shards[shard].wt.version_chain(k)[0];
            assert_eq!((e.value, e.ts, e.phase), (v, Some(cts), Some(PreparePhase::Resolved)));
        }
        // a later transaction reading at a snapshot past cts sees both
        let rts2 = cts;
        for (shard, k, v) in [(0usize, "a", 10), (1usize, "b", 20)] {
            let p = &mut shards[shard];
            p.open_wt_session_at(99, rts2).unwrap();
            assert_eq!(p.read(99, k).unwrap(), ReadStep::Value(v));
            p.rollback(99).unwrap();
        }
        m.end_txn(1).unwrap();
    }

    #[test]
    fn reader_blocks_on_prepared_then_sees_decision() {
        let mut p = shard_primary(1);
        p.open_wt_session_at(1, Ts::MIN).unwrap();
        p.update(1, "x", 5).unwrap();
        let pts = p.prepare_local(1, 3).unwrap();
        // a reader whose snapshot covers the prepare timestamp blocks
        p.open_wt_session_at(2, pts).unwrap();
        assert_eq!(p.read(2, "x").unwrap(), ReadStep::BlockedOnPrepared);
        // updates delay the same way
        p.open_wt_session_at(3, pts).unwrap();
        assert_eq!(p.update(3, "x", 6).unwrap(), UpdateStep::BlockedOnPrepared);
        // decision lands above the reader's snapshot: value becomes
        // invisible, the older (initial) state is read instead
        let cts = Ts::new(pts.physical + 10, 0);
        p.commit_prepared_local(1, cts, 20).unwrap();
        assert_eq!(p.read(2, "x").unwrap(), ReadStep::Value(0));
        // the blocked updater now conflict-checks against the committed
        // version and rolls back
        assert_eq!(p.update(3, "x", 6).unwrap(), UpdateStep::Rollback);
        p.rollback(2).unwrap();
        assert_eq!(p.mode(), EngineMode::Sc);
    }

    #[test]
    fn conflict_on_one_shard_aborts_without_2pc() {
        let mut p = shard_primary(1);
        // committed writer at (5,0)
        p.open_wt_session_at(1, Ts::MIN).unwrap();
        p.update(1, "x", 1).unwrap();
        p.commit_begin(1, 5).unwrap();
        p.commit_local(1).unwrap();
        // a transaction reading below that write conflicts on update
        let stale = p.wt.all_committed().predecessor();
        p.open_wt_session_at(2, stale).unwrap();
        assert_eq!(p.update(2, "x", 2).unwrap(), UpdateStep::Rollback);
        // the abort handler on another participant is a plain rollback
        let mut other = shard_primary(1);
        other.open_wt_session_at(2, stale).unwrap();
        other.update(2, "y", 3).unwrap();
        other.abort_local(2).unwrap();
        assert!(other.oplog.is_empty());
        assert_eq!(other.wt.version_chain("y")[0].tid, crate::wt_engine::TID_ABORTED);
    }
}
