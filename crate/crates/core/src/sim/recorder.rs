//! Assembles the client-observed history as transactions finish.

use crate::clock::Ts;
use crate::model::{
    Deployment, Event, History, Key, OpKind, RealTimeStamps, Transaction, TxnMeta, TxnStatus,
    TxnId, INITIAL_TXN_ID, INITIAL_VALUE,
};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default)]
pub(crate) struct TxnDraft {
    pub txn_id: TxnId,
    pub session_id: u64,
    pub events: Vec<Event>,
    pub start_nanos: i64,
    pub read_ts: Option<Ts>,
    pub commit_ts: Option<Ts>,
    pub wt_tid: Option<i64>,
    pub lamport: Option<u64>,
    pub shard_tids: BTreeMap<u64, i64>,
}

pub(crate) struct Recorder {
    deployment: Deployment,
    shard_count: u64,
    next_event_id: u64,
    done: Vec<(TxnDraft, TxnStatus, i64)>,
}

impl Recorder {
    pub fn new(deployment: Deployment, shard_count: u64) -> Recorder {
        Recorder { deployment, shard_count, next_event_id: 1, done: Vec::new() }
    }

    pub fn observe(&mut self, draft: &mut TxnDraft, op: OpKind) {
        let event_id = self.next_event_id;
        self.next_event_id += 1;
        draft.events.push(Event { event_id, op });
    }

    pub fn finish(&mut self, draft: TxnDraft, status: TxnStatus, end_nanos: i64) {
        self.done.push((draft, status, end_nanos));
    }

    /// Build the history: the initial transaction writing every key, then
    /// all recorded transactions by id.
    pub fn into_history(mut self, all_keys: &[Key]) -> History {
        let mut h = History::new(self.deployment);
        h.shard_count = self.shard_count;
        let mut initial_events = Vec::new();
        for k in all_keys {
            let event_id = self.next_event_id;
            self.next_event_id += 1;
            initial_events
                .push(Event { event_id, op: OpKind::Write { key: k.clone(), value: INITIAL_VALUE } });
        }
        h.transactions.push(Transaction {
            txn_id: INITIAL_TXN_ID,
            session_id: 0,
            status: TxnStatus::Committed,
            events: initial_events,
        });
        h.real_time
            .insert(INITIAL_TXN_ID, RealTimeStamps { start_nanos: -1, commit_nanos: 0 });
        h.meta.insert(
            INITIAL_TXN_ID,
            TxnMeta {
                read_ts: Some(Ts::MIN),
                commit_ts: Some(Ts::MIN),
                wt_tid: Some(0),
                lamport: Some(0),
                shard_tids: (0..self.shard_count).map(|s| (s, 0)).collect(),
            },
        );
        self.done.sort_by_key(|(d, _, _)| d.txn_id);
        for (draft, status, end_nanos) in self.done {
            h.real_time.insert(
                draft.txn_id,
                RealTimeStamps { start_nanos: draft.start_nanos, commit_nanos: end_nanos },
            );
            h.meta.insert(
                draft.txn_id,
                TxnMeta {
                    read_ts: draft.read_ts,
                    commit_ts: draft.commit_ts,
                    wt_tid: draft.wt_tid,
                    lamport: draft.lamport,
                    shard_tids: draft.shard_tids,
                },
            );
            h.transactions.push(Transaction {
                txn_id: draft.txn_id,
                session_id: draft.session_id,
                status,
                events: draft.events,
            });
        }
        h
    }
}
