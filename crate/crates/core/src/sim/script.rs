//! Directed interleavings: a line-based script drives engine handlers
//! explicitly, pinning down windows the random scheduler may or may not hit
//! (the speculative-majority read, the gap between publishing a commit
//! timestamp and the local storage commit).
//!
//! One command per line; `#` starts a comment. Sessions are named and
//! created on first use.
//!
//! ```text
//! begin t1
//! update t1 x 1
//! commit-start t1      # tick, commit timestamp, oplog append
//! commit-local t1      # storage commit; the majority wait parks here
//! begin t2
//! read t2 x
//! commit t2            # commit-start + commit-local in one line
//! pull 0               # secondary 0 runs one pull/push/ack round
//! rollback t1
//! ```
//!
//! Parked commits resolve (and record their commit instants) as soon as the
//! majority frontier covers them, re-checked after every line. A script
//! ending with parked commits is a deadlock.

use crate::clock::Ts;
use crate::model::{Deployment, History, Key, OpKind, TxnStatus};
use crate::rs_engine::{EngineMode, ReadStep, RsMessage, RsPrimary, RsSecondary, UpdateStep};
use crate::sim::recorder::{Recorder, TxnDraft};
use crate::sim::{SimError, NANOS_PER_TICK};
use crate::wt_engine::{UpdateOutcome, WtEngine};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cmd {
    Begin(String),
    Read(String, Key),
    Update(String, Key, i64),
    CommitStart(String),
    CommitLocal(String),
    Commit(String),
    Rollback(String),
    Pull(usize),
}

pub fn parse(text: &str) -> Result<Vec<Cmd>, SimError> {
    let mut cmds = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: &str| SimError::Script(format!("line {}: {}", lineno + 1, msg));
        let cmd = match (toks[0], toks.len()) {
            ("begin", 2) => Cmd::Begin(toks[1].into()),
            ("read", 3) => Cmd::Read(toks[1].into(), toks[2].into()),
            ("update", 4) => Cmd::Update(
                toks[1].into(),
                toks[2].into(),
                toks[3].parse().map_err(|_| err("bad value"))?,
            ),
            ("commit-start", 2) => Cmd::CommitStart(toks[1].into()),
            ("commit-local", 2) => Cmd::CommitLocal(toks[1].into()),
            ("commit", 2) => Cmd::Commit(toks[1].into()),
            ("rollback", 2) => Cmd::Rollback(toks[1].into()),
            ("pull", 2) => Cmd::Pull(toks[1].parse().map_err(|_| err("bad secondary index"))?),
            _ => return Err(err(&format!("unknown command {:?}", toks[0]))),
        };
        cmds.push(cmd);
    }
    Ok(cmds)
}

struct Session {
    id: u64,
    draft: Option<TxnDraft>,
    pending_commit: Option<Ts>,
}

struct Runner {
    deployment: Deployment,
    wt: Option<WtEngine>,
    primary: Option<RsPrimary>,
    secondaries: Vec<RsSecondary>,
    sessions: BTreeMap<String, Session>,
    recorder: Recorder,
    keys: Vec<Key>,
    next_txn: u64,
    next_session: u64,
    instant: u64,
}

/// Execute a script against a standalone engine (`wt`) or a replica set
/// (`rs` with `replica_count` nodes) and return the recorded history.
pub fn run_script(
    text: &str,
    deployment: Deployment,
    replica_count: usize,
) -> Result<History, SimError> {
    let cmds = parse(text)?;
    let mut r = match deployment {
        Deployment::Wt => Runner::new_wt(),
        Deployment::Rs => Runner::new_rs(replica_count),
        Deployment::Sc => {
            return Err(SimError::Script("scripts drive wt or rs deployments".into()))
        }
    };
    for cmd in cmds {
        r.step(cmd)?;
        r.resolve_commits();
    }
    let parked: Vec<String> = r
        .sessions
        .iter()
        .filter(|(_, s)| s.pending_commit.is_some())
        .map(|(name, s)| format!("session {name} waiting for majority at {}", s.pending_commit.unwrap()))
        .collect();
    if !parked.is_empty() {
        return Err(SimError::Deadlock { dump: parked.join("\n") });
    }
    Ok(r.recorder.into_history(&r.keys))
}

impl Runner {
    fn new_wt() -> Runner {
        Runner {
            deployment: Deployment::Wt,
            wt: Some(WtEngine::new()),
            primary: None,
            secondaries: Vec::new(),
            sessions: BTreeMap::new(),
            recorder: Recorder::new(Deployment::Wt, 1),
            keys: Vec::new(),
            next_txn: 1,
            next_session: 1,
            instant: 0,
        }
    }

    fn new_rs(replica_count: usize) -> Runner {
        Runner {
            deployment: Deployment::Rs,
            wt: None,
            primary: Some(RsPrimary::new(EngineMode::Rs, replica_count)),
            secondaries: (0..replica_count - 1).map(|_| RsSecondary::new()).collect(),
            sessions: BTreeMap::new(),
            recorder: Recorder::new(Deployment::Rs, 1),
            keys: Vec::new(),
            next_txn: 1,
            next_session: 1,
            instant: 0,
        }
    }

    fn tick(&mut self) -> u64 {
        self.instant += 1;
        self.instant
    }

    fn nanos(&self) -> i64 {
        self.instant as i64 * NANOS_PER_TICK
    }

    fn note_key(&mut self, k: &str) {
        if !self.keys.iter().any(|x| x == k) {
            self.keys.push(k.to_string());
        }
    }

    fn session(&mut self, name: &str) -> &mut Session {
        if !self.sessions.contains_key(name) {
            let id = self.next_session;
            self.next_session += 1;
            self.sessions
                .insert(name.to_string(), Session { id, draft: None, pending_commit: None });
        }
        self.sessions.get_mut(name).unwrap()
    }

    fn active_draft(&mut self, name: &str) -> Result<&mut TxnDraft, SimError> {
        self.sessions
            .get_mut(name)
            .and_then(|s| s.draft.as_mut())
            .ok_or_else(|| SimError::Script(format!("session {name} has no open transaction")))
    }

    fn step(&mut self, cmd: Cmd) -> Result<(), SimError> {
        match cmd {
            Cmd::Begin(name) => {
                self.tick();
                let txn_id = self.next_txn;
                self.next_txn += 1;
                let nanos = self.nanos();
                let s = self.session(&name);
                if s.draft.is_some() || s.pending_commit.is_some() {
                    return Err(SimError::Script(format!("session {name} already in a transaction")));
                }
                let session_id = s.id;
                s.draft = Some(TxnDraft {
                    txn_id,
                    session_id,
                    start_nanos: nanos,
                    ..Default::default()
                });
                if let Some(wt) = &mut self.wt {
                    wt.start(session_id)?;
                }
                Ok(())
            }
            Cmd::Read(name, key) => {
                self.tick();
                self.note_key(&key);
                let sid = self.session(&name).id;
                let value = match (&mut self.wt, &mut self.primary) {
                    (Some(wt), _) => wt.read(sid, &key)?.0,
                    (_, Some(p)) => {
                        if !p.is_open(sid) {
                            let rts = p.open_wt_session(sid)?;
                            self.active_draft(&name)?.read_ts = Some(rts);
                        }
                        match p.read(sid, &key)? {
                            ReadStep::Value(v) => v,
                            ReadStep::BlockedOnPrepared => {
                                return Err(SimError::Script("read blocked on prepared".into()))
                            }
                        }
                    }
                    _ => unreachable!(),
                };
                let draft = self.active_draft(&name)?;
                let op = OpKind::Read { key, value };
                self.recorder.observe(draft, op);
                Ok(())
            }
            Cmd::Update(name, key, value) => {
                self.tick();
                self.note_key(&key);
                let sid = self.session(&name).id;
                let ok = match (&mut self.wt, &mut self.primary) {
                    (Some(wt), _) => wt.update(sid, &key, value)? == UpdateOutcome::Ok,
                    (_, Some(p)) => {
                        if !p.is_open(sid) {
                            let rts = p.open_wt_session(sid)?;
                            self.active_draft(&name)?.read_ts = Some(rts);
                        }
                        match p.update(sid, &key, value)? {
                            UpdateStep::Ok => true,
                            UpdateStep::Rollback => false,
                            UpdateStep::BlockedOnPrepared => {
                                return Err(SimError::Script("update blocked on prepared".into()))
                            }
                        }
                    }
                    _ => unreachable!(),
                };
                if ok {
                    let draft = self.active_draft(&name)?;
                    let op = OpKind::Write { key, value };
                    self.recorder.observe(draft, op);
                } else {
                    let s = self.sessions.get_mut(&name).unwrap();
                    let draft = s.draft.take().unwrap();
                    let nanos = self.nanos();
                    self.recorder.finish(draft, TxnStatus::Aborted, nanos);
                }
                Ok(())
            }
            Cmd::CommitStart(name) => {
                let now = self.tick();
                let sid = self.session(&name).id;
                let p = self
                    .primary
                    .as_mut()
                    .ok_or_else(|| SimError::Script("commit-start needs an rs deployment".into()))?;
                let cts = p.commit_begin(sid, now)?;
                let draft = self.active_draft(&name)?;
                draft.commit_ts = Some(cts);
                draft.lamport = Some(now);
                Ok(())
            }
            Cmd::CommitLocal(name) => {
                self.tick();
                let sid = self.session(&name).id;
                let p = self
                    .primary
                    .as_mut()
                    .ok_or_else(|| SimError::Script("commit-local needs an rs deployment".into()))?;
                let wt_txn = p.commit_local(sid)?;
                let draft = self.active_draft(&name)?;
                if wt_txn.tid > 0 {
                    draft.wt_tid = Some(wt_txn.tid);
                }
                let cts = draft
                    .commit_ts
                    .ok_or_else(|| SimError::Script(format!("{name}: commit-local before commit-start")))?;
                self.sessions.get_mut(&name).unwrap().pending_commit = Some(cts);
                Ok(())
            }
            Cmd::Commit(name) => {
                match self.deployment {
                    Deployment::Wt => {
                        let now = self.tick();
                        let sid = self.session(&name).id;
                        let wt = self.wt.as_mut().unwrap();
                        let txn = wt.commit(sid)?;
                        let nanos = self.nanos();
                        let s = self.sessions.get_mut(&name).unwrap();
                        let mut draft = s.draft.take().unwrap();
                        if txn.tid > 0 {
                            draft.wt_tid = Some(txn.tid);
                        }
                        draft.lamport = Some(now);
                        self.recorder.finish(draft, TxnStatus::Committed, nanos);
                        Ok(())
                    }
                    _ => {
                        self.step(Cmd::CommitStart(name.clone()))?;
                        self.step(Cmd::CommitLocal(name))
                    }
                }
            }
            Cmd::Rollback(name) => {
                self.tick();
                let sid = self.session(&name).id;
                match (&mut self.wt, &mut self.primary) {
                    (Some(wt), _) => {
                        wt.rollback(sid)?;
                    }
                    (_, Some(p)) => {
                        p.rollback(sid)?;
                    }
                    _ => unreachable!(),
                }
                let s = self.sessions.get_mut(&name).unwrap();
                let draft = s
                    .draft
                    .take()
                    .ok_or_else(|| SimError::Script(format!("session {name} has no open transaction")))?;
                let nanos = self.nanos();
                self.recorder.finish(draft, TxnStatus::Aborted, nanos);
                Ok(())
            }
            Cmd::Pull(sec) => {
                self.tick();
                let p = self
                    .primary
                    .as_mut()
                    .ok_or_else(|| SimError::Script("pull needs an rs deployment".into()))?;
                let s = self
                    .secondaries
                    .get_mut(sec)
                    .ok_or_else(|| SimError::Script(format!("no secondary {sec}")))?;
                let RsMessage::PullOplog { last_pulled } = s.pull_request() else { unreachable!() };
                let RsMessage::PushOplog { entries, ct } = p.handle_pull(last_pulled) else {
                    unreachable!()
                };
                let RsMessage::ReplicateAck { last_pulled } = s.handle_push(entries, ct) else {
                    unreachable!()
                };
                p.handle_ack(sec, last_pulled);
                Ok(())
            }
        }
    }

    /// Complete parked commits covered by the majority frontier, in commit-
    /// timestamp order.
    fn resolve_commits(&mut self) {
        let Some(p) = &self.primary else { return };
        let frontier = p.majority_frontier();
        let mut ready: Vec<(Ts, String)> = self
            .sessions
            .iter()
            .filter_map(|(name, s)| {
                s.pending_commit.filter(|&cts| cts <= frontier).map(|cts| (cts, name.clone()))
            })
            .collect();
        ready.sort();
        for (_, name) in ready {
            self.tick();
            let nanos = self.nanos();
            let s = self.sessions.get_mut(&name).unwrap();
            s.pending_commit = None;
            let draft = s.draft.take().expect("parked commit has a draft");
            self.recorder.finish(draft, TxnStatus::Committed, nanos);
        }
    }
}
