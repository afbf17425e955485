//! Standalone deployment: clients drive the storage engine directly.

use crate::model::{History, OpKind, TxnStatus};
use crate::sim::kernel::Kernel;
use crate::sim::recorder::{Recorder, TxnDraft};
use crate::sim::workload::{PlannedOp, Workload};
use crate::sim::{SimConfig, SimError};
use crate::wt_engine::{UpdateOutcome, WtEngine, WtSessionId};

enum Ev {
    Begin { c: usize },
    Op { c: usize },
    Commit { c: usize },
}

struct Client {
    session: WtSessionId,
    txn: Option<Open>,
}

struct Open {
    draft: TxnDraft,
    plan: Vec<PlannedOp>,
    next: usize,
}

pub(crate) fn run(cfg: &SimConfig) -> Result<History, SimError> {
    let mut kernel: Kernel<Ev> = Kernel::new(cfg.seed);
    let mut wt = WtEngine::new();
    let mut workload = Workload::new(cfg);
    let mut recorder = Recorder::new(cfg.deployment, 1);
    let mut clients: Vec<Client> =
        (0..cfg.concurrency).map(|_| Client { session: wt.open_session(), txn: None }).collect();
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
                let client = &mut clients[c];
                wt.start(client.session)?;
                client.txn = Some(Open {
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
                let client = &mut clients[c];
                let open = client.txn.as_mut().expect("op without open txn");
                let op = open.plan[open.next].clone();
                open.next += 1;
                match op {
                    PlannedOp::Read { key } => {
                        let (v, _) = wt.read(client.session, &key)?;
                        recorder.observe(&mut open.draft, OpKind::Read { key, value: v });
                    }
                    PlannedOp::Write { key, value } => match wt.update(client.session, &key, value)? {
                        UpdateOutcome::Ok => {
                            recorder.observe(&mut open.draft, OpKind::Write { key, value });
                        }
                        UpdateOutcome::Rollback => {
                            let open = client.txn.take().unwrap();
                            recorder.finish(open.draft, TxnStatus::Aborted, kernel.nanos());
                            let d = kernel.think_delay(cfg.max_think_ticks);
                            kernel.at(d + 1, Ev::Begin { c });
                            continue;
                        }
                    },
                }
                let d = kernel.think_delay(cfg.max_think_ticks);
                if open.next == open.plan.len() {
                    kernel.at(d + 1, Ev::Commit { c });
                } else {
                    kernel.at(d + 1, Ev::Op { c });
                }
            }
            Ev::Commit { c } => {
                let client = &mut clients[c];
                let mut open = client.txn.take().expect("commit without open txn");
                let txn = wt.commit(client.session)?;
                if txn.tid > 0 {
                    open.draft.wt_tid = Some(txn.tid);
                }
                open.draft.lamport = Some(kernel.instant());
                recorder.finish(open.draft, TxnStatus::Committed, kernel.nanos());
                let d = kernel.think_delay(cfg.max_think_ticks);
                kernel.at(d + 1, Ev::Begin { c });
            }
        }
    }

    Ok(recorder.into_history(workload.all_keys()))
}
