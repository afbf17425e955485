//! Sharded deployment: clients talk to a router over simulated messages;
//! each shard is a replica-set primary with its own secondaries; updaters
//! commit through the always-commits two-phase protocol.

use crate::clock::{HlcClock, Ts};
use crate::model::{History, Key, OpKind, TxnStatus};
use crate::rs_engine::{EngineMode, OplogEntry, ReadStep, RsMessage, RsPrimary, RsSecondary, UpdateStep};
use crate::sc_engine::{Mongos, ShardId};
use crate::sim::kernel::Kernel;
use crate::sim::recorder::{Recorder, TxnDraft};
use crate::sim::workload::{PlannedOp, Workload};
use crate::sim::{ReplicationDelay, SimConfig, SimError};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpResult {
    ReadValue(i64),
    WriteOk,
    WriteConflict,
}

#[derive(Debug, Clone)]
enum Ev {
    // transaction lifecycle hops
    Begin { c: usize },
    MongosBegin { c: usize, client_ct: Ts },
    BeginReply { c: usize, ct: Ts },
    OpIssue { c: usize },
    MongosOp { c: usize },
    ShardOp { c: usize, shard: usize, rs_sid: u64, read_ts: Ts, op: PlannedOp },
    OpReply { c: usize, shard: usize, result: OpResult, ct: Ts },
    ClientOpReply { c: usize, result: OpResult, ct: Ts },
    CommitIssue { c: usize },
    MongosCommit { c: usize },
    // read-only path: direct local commits on every participant
    DirectCommitBegin { c: usize, shard: usize, rs_sid: u64 },
    DirectCommitLocal { c: usize, shard: usize, rs_sid: u64, cts: Ts },
    DirectCommitAckSend { c: usize, shard: usize },
    DirectCommitAck { c: usize, ct: Ts },
    // two-phase commit
    TwoPcStart { c: usize },
    ParticipantsPersisted { c: usize },
    PrepareAtShard { c: usize, shard: usize, rs_sid: u64 },
    PrepareAckSend { c: usize, shard: usize, pts: Ts },
    PrepareAckAtCoord { c: usize, shard: usize, pts: Ts, ct: Ts },
    DecisionPersisted { c: usize },
    CommitAtShard { c: usize, shard: usize, rs_sid: u64, cts: Ts },
    DecAckSend { c: usize, shard: usize },
    DecAckAtCoord { c: usize, shard: usize, ct: Ts },
    TwoPcAckAtMongos { c: usize, ct: Ts },
    CommitReplyAtClient { c: usize, ct: Ts },
    // abort fan-out
    AbortAtShard { c: usize, shard: usize, rs_sid: u64 },
    AbortAckSend { c: usize, shard: usize },
    AbortAckAtMongos { c: usize, ct: Ts },
    AbortReplyAtClient { c: usize, ct: Ts },
    // replication, per shard
    PullStart { shard: usize, sec: usize },
    PullAtPrimary { shard: usize, sec: usize, last_pulled: Ts },
    PushAtSecondary { shard: usize, sec: usize, entries: Vec<OplogEntry>, ct: Ts },
    AckAtPrimary { shard: usize, sec: usize, last_pulled: Ts },
}

/// A blocked protocol step on a shard and the condition releasing it.
#[derive(Debug)]
enum WaitCond {
    Frontier(Ts),
    AllCommitted(Ts),
    ReadResolvable { rs_sid: u64, key: Key },
}

#[derive(Debug)]
struct Waiter {
    cond: WaitCond,
    then: Ev,
}

struct Shard {
    primary: RsPrimary,
    secondaries: Vec<RsSecondary>,
    waiters: Vec<Waiter>,
    pull_in_flight: Vec<bool>,
    pull_dirty: Vec<bool>,
    chan_floor: Vec<[u64; 3]>,
}

enum CommitCtx {
    Direct { pending: usize },
    TwoPc { expected: BTreeSet<ShardId>, acks: BTreeMap<ShardId, Ts>, pending_dec: BTreeSet<ShardId> },
    Abort { pending: usize },
}

struct Open {
    draft: TxnDraft,
    plan: Vec<PlannedOp>,
    next: usize,
}

struct Client {
    clock: HlcClock,
    txn: Option<Open>,
}

struct ScRun<'cfg> {
    cfg: &'cfg SimConfig,
    kernel: Kernel<Ev>,
    mongos: Mongos,
    shards: Vec<Shard>,
    clients: Vec<Client>,
    commit_ctx: BTreeMap<usize, CommitCtx>,
    recorder: Recorder,
    workload: Workload,
    issued: usize,
}

pub(crate) fn run(cfg: &SimConfig) -> Result<History, SimError> {
    let n_sec = cfg.replica_count - 1;
    let mut sim = ScRun {
        cfg,
        kernel: Kernel::new(cfg.seed),
        mongos: Mongos::new(cfg.shard_count as u64),
        shards: (0..cfg.shard_count)
            .map(|_| Shard {
                primary: RsPrimary::new(EngineMode::Sc, cfg.replica_count),
                secondaries: (0..n_sec).map(|_| RsSecondary::new()).collect(),
                waiters: Vec::new(),
                pull_in_flight: vec![false; n_sec],
                pull_dirty: vec![false; n_sec],
                chan_floor: vec![[0; 3]; n_sec],
            })
            .collect(),
        clients: (0..cfg.concurrency)
            .map(|_| Client { clock: HlcClock::new(), txn: None })
            .collect(),
        commit_ctx: BTreeMap::new(),
        recorder: Recorder::new(cfg.deployment, cfg.shard_count as u64),
        workload: Workload::new(cfg),
        issued: 0,
    };

    for c in 0..cfg.concurrency {
        let d = sim.kernel.think_delay(cfg.max_think_ticks);
        sim.kernel.at(d + 1, Ev::Begin { c });
    }

    while let Some(ev) = sim.kernel.pop() {
        sim.handle(ev)?;
        sim.pump_waiters();
    }

    let pending: Vec<String> = sim
        .shards
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.waiters.iter().map(move |w| format!("shard {i}: {:?}", w.cond)))
        .collect();
    if !pending.is_empty() {
        return Err(SimError::Deadlock { dump: pending.join("\n") });
    }
    Ok(sim.recorder.into_history(sim.workload.all_keys()))
}

impl ScRun<'_> {
    fn svc(&mut self) -> u64 {
        self.kernel.service_delay(self.cfg.max_service_ticks)
    }

    fn think(&mut self) -> u64 {
        self.kernel.think_delay(self.cfg.max_think_ticks)
    }

    fn sc_sid(c: usize) -> u64 {
        c as u64 + 1
    }

    /// Queue `then` once `cond` holds on `shard`; fires immediately if it
    /// already does.
    fn wait_on(&mut self, shard: usize, cond: WaitCond, then: Ev) {
        if Self::cond_ready(&self.shards[shard], &cond) {
            self.kernel.at(1, then);
        } else {
            self.shards[shard].waiters.push(Waiter { cond, then });
        }
    }

    fn cond_ready(shard: &Shard, cond: &WaitCond) -> bool {
        match cond {
            WaitCond::Frontier(ts) => shard.primary.majority_frontier() >= *ts,
            WaitCond::AllCommitted(ts) => shard.primary.wt.all_committed() >= *ts,
            WaitCond::ReadResolvable { rs_sid, key } => {
                !shard.primary.read_would_block(*rs_sid, key)
            }
        }
    }

    fn pump_waiters(&mut self) {
        for shard in 0..self.shards.len() {
            let mut i = 0;
            while i < self.shards[shard].waiters.len() {
                if Self::cond_ready(&self.shards[shard], &self.shards[shard].waiters[i].cond) {
                    let w = self.shards[shard].waiters.remove(i);
                    self.kernel.at(1, w.then);
                } else {
                    i += 1;
                }
            }
        }
    }

    fn schedule_pulls(&mut self, shard: usize) {
        for sec in 0..self.shards[shard].secondaries.len() {
            if self.shards[shard].pull_in_flight[sec] {
                self.shards[shard].pull_dirty[sec] = true;
            } else {
                self.start_pull(shard, sec);
            }
        }
    }

    fn start_pull(&mut self, shard: usize, sec: usize) {
        self.shards[shard].pull_in_flight[sec] = true;
        let delay = match self.cfg.replication_delay {
            ReplicationDelay::Eager => 1,
            ReplicationDelay::Randomized => {
                1 + self.kernel.rng.gen_range(0..=4 * self.cfg.max_service_ticks)
            }
        };
        self.kernel.at(delay, Ev::PullStart { shard, sec });
    }

    fn finish_txn(&mut self, c: usize, status: TxnStatus) {
        let open = self.clients[c].txn.take().expect("finishing a transaction not open");
        self.recorder.finish(open.draft, status, self.kernel.nanos());
        let _ = self.mongos.end_txn(Self::sc_sid(c));
        self.commit_ctx.remove(&c);
        let d = self.think();
        self.kernel.at(d + 1, Ev::Begin { c });
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Begin { c } => {
                if self.issued >= self.cfg.txn_num {
                    return Ok(());
                }
                self.issued += 1;
                let plan = self.workload.gen_txn(&mut self.kernel.rng, self.cfg);
                self.clients[c].txn = Some(Open {
                    draft: TxnDraft {
                        txn_id: self.issued as u64,
                        session_id: c as u64 + 1,
                        ..Default::default()
                    },
                    plan,
                    next: 0,
                });
                let ct = self.clients[c].clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::MongosBegin { c, client_ct: ct });
            }
            Ev::MongosBegin { c, client_ct } => {
                let read_ts = self.mongos.begin(Self::sc_sid(c), client_ct)?;
                let open = self.clients[c].txn.as_mut().expect("begin without open txn");
                open.draft.start_nanos = self.kernel.nanos();
                open.draft.read_ts = Some(read_ts);
                let ct = self.mongos.clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::BeginReply { c, ct });
            }
            Ev::BeginReply { c, ct } => {
                self.clients[c].clock.observe(ct);
                let d = self.think();
                self.kernel.at(d + 1, Ev::OpIssue { c });
            }
            Ev::OpIssue { c } => {
                let d = self.svc();
                self.kernel.at(d, Ev::MongosOp { c });
            }
            Ev::MongosOp { c } => {
                let sid = Self::sc_sid(c);
                let open = self.clients[c].txn.as_ref().expect("op without open txn");
                let op = open.plan[open.next].clone();
                let shard = self.mongos.route(op.key()) as usize;
                self.mongos.note_op(sid, shard as ShardId)?;
                let txn = self.mongos.txn(sid)?;
                let (rs_sid, read_ts) = (txn.rs_sid, txn.read_ts);
                let d = self.svc();
                self.kernel.at(d, Ev::ShardOp { c, shard, rs_sid, read_ts, op });
            }
            Ev::ShardOp { c, shard, rs_sid, read_ts, op } => {
                if !self.shards[shard].primary.is_open(rs_sid) {
                    // read-concern gate: catch the clock up, then wait for a
                    // gap-free snapshot at the read timestamp
                    self.shards[shard].primary.ensure_clock_covers(read_ts);
                    self.schedule_pulls(shard);
                    if self.shards[shard].primary.wt.all_committed() < read_ts {
                        self.wait_on(
                            shard,
                            WaitCond::AllCommitted(read_ts),
                            Ev::ShardOp { c, shard, rs_sid, read_ts, op },
                        );
                        return Ok(());
                    }
                    self.shards[shard].primary.open_wt_session_at(rs_sid, read_ts)?;
                }
                enum Outcome {
                    Reply(OpResult, Ts),
                    Blocked(Key),
                }
                let outcome = {
                    let primary = &mut self.shards[shard].primary;
                    match &op {
                        PlannedOp::Read { key } => match primary.read(rs_sid, key)? {
                            ReadStep::Value(v) => {
                                Outcome::Reply(OpResult::ReadValue(v), primary.clock.now())
                            }
                            ReadStep::BlockedOnPrepared => Outcome::Blocked(key.clone()),
                        },
                        PlannedOp::Write { key, value } => {
                            match primary.update(rs_sid, key, *value)? {
                                UpdateStep::Ok => {
                                    Outcome::Reply(OpResult::WriteOk, primary.clock.now())
                                }
                                UpdateStep::Rollback => {
                                    Outcome::Reply(OpResult::WriteConflict, primary.clock.now())
                                }
                                UpdateStep::BlockedOnPrepared => Outcome::Blocked(key.clone()),
                            }
                        }
                    }
                };
                match outcome {
                    Outcome::Reply(result, ct) => {
                        let d = self.svc();
                        self.kernel.at(d, Ev::OpReply { c, shard, result, ct });
                    }
                    Outcome::Blocked(key) => {
                        self.wait_on(
                            shard,
                            WaitCond::ReadResolvable { rs_sid, key },
                            Ev::ShardOp { c, shard, rs_sid, read_ts, op },
                        );
                    }
                }
            }
            Ev::OpReply { c, shard, result, ct } => {
                self.mongos.clock.observe(ct);
                let sid = Self::sc_sid(c);
                if result == OpResult::WriteConflict {
                    // abort fan-out to the other participants, no 2PC
                    self.mongos.note_aborted(sid)?;
                    let txn = self.mongos.txn(sid)?;
                    let rs_sid = txn.rs_sid;
                    let others: Vec<usize> = txn
                        .participants
                        .iter()
                        .map(|&s| s as usize)
                        .filter(|&s| s != shard)
                        .collect();
                    self.commit_ctx.insert(c, CommitCtx::Abort { pending: others.len() });
                    if others.is_empty() {
                        let ct = self.mongos.clock.now();
                        let d = self.svc();
                        self.kernel.at(d, Ev::AbortReplyAtClient { c, ct });
                    } else {
                        for s in others {
                            let d = self.svc();
                            self.kernel.at(d, Ev::AbortAtShard { c, shard: s, rs_sid });
                        }
                    }
                    return Ok(());
                }
                if result == OpResult::WriteOk {
                    self.mongos.note_update_ok(sid)?;
                }
                let ct = self.mongos.clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::ClientOpReply { c, result, ct });
            }
            Ev::ClientOpReply { c, result, ct } => {
                self.clients[c].clock.observe(ct);
                let open = self.clients[c].txn.as_mut().expect("reply without open txn");
                let op = open.plan[open.next].clone();
                open.next += 1;
                match (op, result) {
                    (PlannedOp::Read { key }, OpResult::ReadValue(v)) => {
                        self.recorder.observe(&mut open.draft, OpKind::Read { key, value: v });
                    }
                    (PlannedOp::Write { key, value }, OpResult::WriteOk) => {
                        self.recorder.observe(&mut open.draft, OpKind::Write { key, value });
                    }
                    other => unreachable!("mismatched op/result: {other:?}"),
                }
                let done = open.next == open.plan.len();
                let d = self.think();
                if done {
                    self.kernel.at(d + 1, Ev::CommitIssue { c });
                } else {
                    self.kernel.at(d + 1, Ev::OpIssue { c });
                }
            }
            Ev::CommitIssue { c } => {
                let d = self.svc();
                self.kernel.at(d, Ev::MongosCommit { c });
            }
            Ev::MongosCommit { c } => {
                let sid = Self::sc_sid(c);
                let txn = self.mongos.txn(sid)?;
                let participants: Vec<(usize, u64)> =
                    txn.participants.iter().map(|&s| (s as usize, txn.rs_sid)).collect();
                if !txn.updated {
                    // read-only: commit locally everywhere; the checker's
                    // commit timestamp is the read timestamp
                    let read_ts = txn.read_ts;
                    let open = self.clients[c].txn.as_mut().expect("commit without open txn");
                    open.draft.commit_ts = Some(read_ts);
                    open.draft.lamport = Some(self.kernel.instant());
                    self.commit_ctx.insert(c, CommitCtx::Direct { pending: participants.len() });
                    for (shard, rs_sid) in participants {
                        let d = self.svc();
                        self.kernel.at(d, Ev::DirectCommitBegin { c, shard, rs_sid });
                    }
                } else {
                    self.commit_ctx.insert(
                        c,
                        CommitCtx::TwoPc {
                            expected: txn.participants.clone(),
                            acks: BTreeMap::new(),
                            pending_dec: txn.participants.clone(),
                        },
                    );
                    let d = self.svc();
                    self.kernel.at(d, Ev::TwoPcStart { c });
                }
            }
            Ev::DirectCommitBegin { c, shard, rs_sid } => {
                let cts = self.shards[shard].primary.commit_begin(rs_sid, self.kernel.instant())?;
                self.schedule_pulls(shard);
                self.kernel.at(1, Ev::DirectCommitLocal { c, shard, rs_sid, cts });
            }
            Ev::DirectCommitLocal { c, shard, rs_sid, cts } => {
                self.shards[shard].primary.commit_local(rs_sid)?;
                self.wait_on(shard, WaitCond::Frontier(cts), Ev::DirectCommitAckSend { c, shard });
            }
            Ev::DirectCommitAckSend { c, shard } => {
                let ct = self.shards[shard].primary.clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::DirectCommitAck { c, ct });
            }
            Ev::DirectCommitAck { c, ct } => {
                self.mongos.clock.observe(ct);
                let Some(CommitCtx::Direct { pending }) = self.commit_ctx.get_mut(&c) else {
                    unreachable!("direct ack without context")
                };
                *pending -= 1;
                if *pending == 0 {
                    let ct = self.mongos.clock.now();
                    let d = self.svc();
                    self.kernel.at(d, Ev::CommitReplyAtClient { c, ct });
                }
            }
            Ev::TwoPcStart { c } => {
                let sid = Self::sc_sid(c);
                let coordinator = self.mongos.txn(sid)?.coordinator.unwrap() as usize;
                // persist the participant set in the coordinator's replica
                // set before any prepare goes out
                let ts = self.shards[coordinator].primary.append_noop_record(self.kernel.instant());
                self.schedule_pulls(coordinator);
                self.wait_on(coordinator, WaitCond::Frontier(ts), Ev::ParticipantsPersisted { c });
            }
            Ev::ParticipantsPersisted { c } => {
                let sid = Self::sc_sid(c);
                let txn = self.mongos.txn(sid)?;
                let rs_sid = txn.rs_sid;
                let shards: Vec<usize> = txn.participants.iter().map(|&s| s as usize).collect();
                for shard in shards {
                    let d = self.svc();
                    self.kernel.at(d, Ev::PrepareAtShard { c, shard, rs_sid });
                }
            }
            Ev::PrepareAtShard { c, shard, rs_sid } => {
                let pts = self.shards[shard].primary.prepare_local(rs_sid, self.kernel.instant())?;
                self.schedule_pulls(shard);
                self.wait_on(shard, WaitCond::Frontier(pts), Ev::PrepareAckSend { c, shard, pts });
            }
            Ev::PrepareAckSend { c, shard, pts } => {
                let ct = self.shards[shard].primary.clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::PrepareAckAtCoord { c, shard, pts, ct });
            }
            Ev::PrepareAckAtCoord { c, shard, pts, ct } => {
                let sid = Self::sc_sid(c);
                let coordinator = self.mongos.txn(sid)?.coordinator.unwrap() as usize;
                self.shards[coordinator].primary.clock.observe(ct);
                let Some(CommitCtx::TwoPc { expected, acks, .. }) = self.commit_ctx.get_mut(&c)
                else {
                    unreachable!("prepare ack without 2pc context")
                };
                acks.insert(shard as ShardId, pts);
                if acks.len() == expected.len() {
                    let cts = *acks.values().max().expect("at least one participant");
                    let open = self.clients[c].txn.as_mut().expect("2pc without open txn");
                    open.draft.commit_ts = Some(cts);
                    open.draft.lamport = Some(self.kernel.instant());
                    // persist the decision before distributing it
                    let ts =
                        self.shards[coordinator].primary.append_noop_record(self.kernel.instant());
                    self.schedule_pulls(coordinator);
                    self.wait_on(coordinator, WaitCond::Frontier(ts), Ev::DecisionPersisted { c });
                }
            }
            Ev::DecisionPersisted { c } => {
                let sid = Self::sc_sid(c);
                let txn = self.mongos.txn(sid)?;
                let rs_sid = txn.rs_sid;
                let shards: Vec<usize> = txn.participants.iter().map(|&s| s as usize).collect();
                let open = self.clients[c].txn.as_ref().expect("2pc without open txn");
                let cts = open.draft.commit_ts.expect("decided");
                for shard in shards {
                    let d = self.svc();
                    self.kernel.at(d, Ev::CommitAtShard { c, shard, rs_sid, cts });
                }
            }
            Ev::CommitAtShard { c, shard, rs_sid, cts } => {
                let (marker_ts, wt_txn) = self.shards[shard]
                    .primary
                    .commit_prepared_local(rs_sid, cts, self.kernel.instant())?;
                if wt_txn.tid > 0 {
                    let open = self.clients[c].txn.as_mut().expect("2pc without open txn");
                    open.draft.shard_tids.insert(shard as u64, wt_txn.tid);
                }
                self.schedule_pulls(shard);
                self.wait_on(shard, WaitCond::Frontier(marker_ts), Ev::DecAckSend { c, shard });
            }
            Ev::DecAckSend { c, shard } => {
                let ct = self.shards[shard].primary.clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::DecAckAtCoord { c, shard, ct });
            }
            Ev::DecAckAtCoord { c, shard, ct } => {
                let sid = Self::sc_sid(c);
                let coordinator = self.mongos.txn(sid)?.coordinator.unwrap() as usize;
                self.shards[coordinator].primary.clock.observe(ct);
                let Some(CommitCtx::TwoPc { pending_dec, .. }) = self.commit_ctx.get_mut(&c) else {
                    unreachable!("decision ack without 2pc context")
                };
                pending_dec.remove(&(shard as ShardId));
                if pending_dec.is_empty() {
                    let ct = self.shards[coordinator].primary.clock.now();
                    let d = self.svc();
                    self.kernel.at(d, Ev::TwoPcAckAtMongos { c, ct });
                }
            }
            Ev::TwoPcAckAtMongos { c, ct } => {
                self.mongos.clock.observe(ct);
                let ct = self.mongos.clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::CommitReplyAtClient { c, ct });
            }
            Ev::CommitReplyAtClient { c, ct } => {
                self.clients[c].clock.observe(ct);
                // single-shard updaters carry their one storage tid
                let open = self.clients[c].txn.as_mut().expect("commit reply without open txn");
                if open.draft.shard_tids.len() == 1 {
                    open.draft.wt_tid = open.draft.shard_tids.values().next().copied();
                }
                self.finish_txn(c, TxnStatus::Committed);
            }
            Ev::AbortAtShard { c, shard, rs_sid } => {
                self.shards[shard].primary.abort_local(rs_sid)?;
                let ts = self.shards[shard].primary.clock.now();
                self.wait_on(shard, WaitCond::Frontier(ts), Ev::AbortAckSend { c, shard });
            }
            Ev::AbortAckSend { c, shard } => {
                let ct = self.shards[shard].primary.clock.now();
                let d = self.svc();
                self.kernel.at(d, Ev::AbortAckAtMongos { c, ct });
            }
            Ev::AbortAckAtMongos { c, ct } => {
                self.mongos.clock.observe(ct);
                let Some(CommitCtx::Abort { pending }) = self.commit_ctx.get_mut(&c) else {
                    unreachable!("abort ack without context")
                };
                *pending -= 1;
                if *pending == 0 {
                    let ct = self.mongos.clock.now();
                    let d = self.svc();
                    self.kernel.at(d, Ev::AbortReplyAtClient { c, ct });
                }
            }
            Ev::AbortReplyAtClient { c, ct } => {
                self.clients[c].clock.observe(ct);
                self.finish_txn(c, TxnStatus::Aborted);
            }
            Ev::PullStart { shard, sec } => {
                let RsMessage::PullOplog { last_pulled } =
                    self.shards[shard].secondaries[sec].pull_request()
                else {
                    unreachable!()
                };
                let d = self.svc();
                let floor = self.shards[shard].chan_floor[sec][0] + 1;
                self.shards[shard].chan_floor[sec][0] =
                    self.kernel.at_least(d, floor, Ev::PullAtPrimary { shard, sec, last_pulled });
            }
            Ev::PullAtPrimary { shard, sec, last_pulled } => {
                let RsMessage::PushOplog { entries, ct } =
                    self.shards[shard].primary.handle_pull(last_pulled)
                else {
                    unreachable!()
                };
                let d = self.svc();
                let floor = self.shards[shard].chan_floor[sec][1] + 1;
                self.shards[shard].chan_floor[sec][1] = self
                    .kernel
                    .at_least(d, floor, Ev::PushAtSecondary { shard, sec, entries, ct });
            }
            Ev::PushAtSecondary { shard, sec, entries, ct } => {
                let RsMessage::ReplicateAck { last_pulled } =
                    self.shards[shard].secondaries[sec].handle_push(entries, ct)
                else {
                    unreachable!()
                };
                let d = self.svc();
                let floor = self.shards[shard].chan_floor[sec][2] + 1;
                self.shards[shard].chan_floor[sec][2] =
                    self.kernel.at_least(d, floor, Ev::AckAtPrimary { shard, sec, last_pulled });
            }
            Ev::AckAtPrimary { shard, sec, last_pulled } => {
                self.shards[shard].primary.handle_ack(sec, last_pulled);
                self.shards[shard].pull_in_flight[sec] = false;
                if self.shards[shard].pull_dirty[sec] {
                    self.shards[shard].pull_dirty[sec] = false;
                    self.start_pull(shard, sec);
                }
            }
        }
        Ok(())
    }
}
