//! Replica-set deployment: clients against one primary, with secondaries
//! pulling the oplog and commits gated on the majority frontier.

use crate::clock::Ts;
use crate::model::{History, OpKind, TxnStatus};
use crate::rs_engine::{ReadStep, RsMessage, RsPrimary, RsSecondary, UpdateStep, EngineMode};
use crate::sim::kernel::Kernel;
use crate::sim::recorder::{Recorder, TxnDraft};
use crate::sim::workload::{PlannedOp, Workload};
use crate::sim::{ReplicationDelay, SimConfig, SimError};
use rand::Rng;

enum Ev {
    Begin { c: usize },
    Op { c: usize },
    CommitIssue { c: usize },
    CommitLocal { c: usize },
    CommitDone { c: usize },
    PullStart { sec: usize },
    PullAtPrimary { sec: usize, last_pulled: Ts },
    PushAtSecondary { sec: usize, entries: Vec<crate::rs_engine::OplogEntry>, ct: Ts },
    AckAtPrimary { sec: usize, last_pulled: Ts },
}

struct Client {
    txn: Option<Open>,
}

struct Open {
    draft: TxnDraft,
    plan: Vec<PlannedOp>,
    next: usize,
}

struct World {
    primary: RsPrimary,
    secondaries: Vec<RsSecondary>,
    /// (commit ts, client) pairs waiting for the majority frontier.
    commit_waiters: Vec<(Ts, usize)>,
    pull_in_flight: Vec<bool>,
    pull_dirty: Vec<bool>,
    /// Per-channel FIFO floors: delivery times never regress.
    chan_floor: Vec<[u64; 3]>,
}

pub(crate) fn run(cfg: &SimConfig) -> Result<History, SimError> {
    let mut kernel: Kernel<Ev> = Kernel::new(cfg.seed);
    let mut workload = Workload::new(cfg);
    let mut recorder = Recorder::new(cfg.deployment, 1);
    let n_sec = cfg.replica_count - 1;
    let mut world = World {
        primary: RsPrimary::new(EngineMode::Rs, cfg.replica_count),
        secondaries: (0..n_sec).map(|_| RsSecondary::new()).collect(),
        commit_waiters: Vec::new(),
        pull_in_flight: vec![false; n_sec],
        pull_dirty: vec![false; n_sec],
        chan_floor: vec![[0; 3]; n_sec],
    };
    let mut clients: Vec<Client> = (0..cfg.concurrency).map(|_| Client { txn: None }).collect();
    let mut issued = 0usize;

    for c in 0..cfg.concurrency {
        let d = kernel.think_delay(cfg.max_think_ticks);
        kernel.at(d + 1, Ev::Begin { c });
    }

    while let Some(ev) = kernel.pop() {
        match ev {
            Ev::Begin { c } => {
                if issued >= cfg.txn_num {
                    continue;
                }
                issued += 1;
                let plan = workload.gen_txn(&mut kernel.rng, cfg);
                clients[c].txn = Some(Open {
                    draft: TxnDraft {
                        txn_id: issued as u64,
                        session_id: c as u64 + 1,
                        start_nanos: kernel.nanos(),
                        ..Default::default()
                    },
                    plan,
                    next: 0,
                });
                let d = kernel.think_delay(cfg.max_think_ticks);
                kernel.at(d + 1, Ev::Op { c });
            }
            Ev::Op { c } => {
                let rs_sid = c as u64 + 1;
                let open = clients[c].txn.as_mut().expect("op without open txn");
                if open.next == 0 {
                    open.draft.read_ts = Some(world.primary.open_wt_session(rs_sid)?);
                }
                let op = open.plan[open.next].clone();
                open.next += 1;
                match op {
                    PlannedOp::Read { key } => {
                        match world.primary.read(rs_sid, &key)? {
                            ReadStep::Value(v) => {
                                recorder.observe(&mut open.draft, OpKind::Read { key, value: v });
                            }
                            ReadStep::BlockedOnPrepared => {
                                unreachable!("no prepared transactions in a replica set")
                            }
                        }
                    }
                    PlannedOp::Write { key, value } => match world.primary.update(rs_sid, &key, value)? {
                        UpdateStep::Ok => {
                            recorder.observe(&mut open.draft, OpKind::Write { key, value });
                        }
                        UpdateStep::Rollback => {
                            let open = clients[c].txn.take().unwrap();
                            recorder.finish(open.draft, TxnStatus::Aborted, kernel.nanos());
                            let d = kernel.think_delay(cfg.max_think_ticks);
                            kernel.at(d + 1, Ev::Begin { c });
                            continue;
                        }
                        UpdateStep::BlockedOnPrepared => unreachable!("rs updates never block"),
                    },
                }
                let d = kernel.think_delay(cfg.max_think_ticks);
                if open.next == open.plan.len() {
                    kernel.at(d + 1, Ev::CommitIssue { c });
                } else {
                    kernel.at(d + 1, Ev::Op { c });
                }
            }
            Ev::CommitIssue { c } => {
                let rs_sid = c as u64 + 1;
                let cts = world.primary.commit_begin(rs_sid, kernel.instant())?;
                let open = clients[c].txn.as_mut().expect("commit without open txn");
                open.draft.commit_ts = Some(cts);
                open.draft.lamport = Some(kernel.instant());
                schedule_pulls(cfg, &mut kernel, &mut world);
                let d = kernel.service_delay(cfg.max_service_ticks);
                kernel.at(d, Ev::CommitLocal { c });
            }
            Ev::CommitLocal { c } => {
                let rs_sid = c as u64 + 1;
                let txn = world.primary.commit_local(rs_sid)?;
                let open = clients[c].txn.as_mut().expect("commit without open txn");
                if txn.tid > 0 {
                    open.draft.wt_tid = Some(txn.tid);
                }
                let cts = open.draft.commit_ts.expect("commit ts set at commit begin");
                world.commit_waiters.push((cts, c));
                pump_commit_waiters(&mut kernel, &mut world);
            }
            Ev::CommitDone { c } => {
                let open = clients[c].txn.take().expect("commit done without open txn");
                recorder.finish(open.draft, TxnStatus::Committed, kernel.nanos());
                let d = kernel.think_delay(cfg.max_think_ticks);
                kernel.at(d + 1, Ev::Begin { c });
            }
            Ev::PullStart { sec } => {
                let RsMessage::PullOplog { last_pulled } = world.secondaries[sec].pull_request()
                else {
                    unreachable!()
                };
                let d = kernel.service_delay(cfg.max_service_ticks);
                let floor = world.chan_floor[sec][0] + 1;
                world.chan_floor[sec][0] =
                    kernel.at_least(d, floor, Ev::PullAtPrimary { sec, last_pulled });
            }
            Ev::PullAtPrimary { sec, last_pulled } => {
                let RsMessage::PushOplog { entries, ct } = world.primary.handle_pull(last_pulled)
                else {
                    unreachable!()
                };
                let d = kernel.service_delay(cfg.max_service_ticks);
                let floor = world.chan_floor[sec][1] + 1;
                world.chan_floor[sec][1] =
                    kernel.at_least(d, floor, Ev::PushAtSecondary { sec, entries, ct });
            }
            Ev::PushAtSecondary { sec, entries, ct } => {
                let RsMessage::ReplicateAck { last_pulled } =
                    world.secondaries[sec].handle_push(entries, ct)
                else {
                    unreachable!()
                };
                let d = kernel.service_delay(cfg.max_service_ticks);
                let floor = world.chan_floor[sec][2] + 1;
                world.chan_floor[sec][2] =
                    kernel.at_least(d, floor, Ev::AckAtPrimary { sec, last_pulled });
            }
            Ev::AckAtPrimary { sec, last_pulled } => {
                world.primary.handle_ack(sec, last_pulled);
                pump_commit_waiters(&mut kernel, &mut world);
                world.pull_in_flight[sec] = false;
                if world.pull_dirty[sec] {
                    world.pull_dirty[sec] = false;
                    start_pull(cfg, &mut kernel, &mut world, sec);
                }
            }
        }
    }

    if !world.commit_waiters.is_empty() {
        let dump = world
            .commit_waiters
            .iter()
            .map(|(ts, c)| format!("client {c} waiting for majority at {ts}"))
            .collect::<Vec<_>>()
            .join("\n");
        return Err(SimError::Deadlock { dump });
    }
    Ok(recorder.into_history(workload.all_keys()))
}

fn schedule_pulls(cfg: &SimConfig, kernel: &mut Kernel<Ev>, world: &mut World) {
    for sec in 0..world.secondaries.len() {
        if world.pull_in_flight[sec] {
            world.pull_dirty[sec] = true;
        } else {
            start_pull(cfg, kernel, world, sec);
        }
    }
}

fn start_pull(cfg: &SimConfig, kernel: &mut Kernel<Ev>, world: &mut World, sec: usize) {
    world.pull_in_flight[sec] = true;
    let delay = match cfg.replication_delay {
        ReplicationDelay::Eager => 1,
        ReplicationDelay::Randomized => 1 + kernel.rng.gen_range(0..=4 * cfg.max_service_ticks),
    };
    kernel.at(delay, Ev::PullStart { sec });
}

fn pump_commit_waiters(kernel: &mut Kernel<Ev>, world: &mut World) {
    let frontier = world.primary.majority_frontier();
    world.commit_waiters.sort_unstable_by_key(|&(ts, c)| (ts, c));
    let mut remaining = Vec::new();
    for (ts, c) in world.commit_waiters.drain(..) {
        if ts <= frontier {
            kernel.at(1, Ev::CommitDone { c });
        } else {
            remaining.push((ts, c));
        }
    }
    world.commit_waiters = remaining;
}
