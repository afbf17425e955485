//! Hand-built histories separating the snapshot-isolation variants.
//!
//! Both histories use five client transactions T_a..T_e plus the initial
//! transaction, with write values unique per key so reads pin their writers.

use crate::model::{
    Deployment, Event, History, OpKind, RealTimeStamps, Transaction, TxnStatus, INITIAL_TXN_ID,
};

fn w(k: &str, v: i64) -> OpKind {
    OpKind::Write { key: k.into(), value: v }
}

fn r(k: &str, v: i64) -> OpKind {
    OpKind::Read { key: k.into(), value: v }
}

fn txn(id: u64, session: u64, ops: &[OpKind]) -> Transaction {
    Transaction {
        txn_id: id,
        session_id: session,
        status: TxnStatus::Committed,
        events: ops
            .iter()
            .enumerate()
            .map(|(i, op)| Event { event_id: id * 100 + i as u64, op: op.clone() })
            .collect(),
    }
}

fn initial_txn(keys: &[&str]) -> Transaction {
    txn(INITIAL_TXN_ID, 0, &keys.iter().map(|k| w(k, 0)).collect::<Vec<_>>())
}

/// Satisfies SI but not SessionSI.
///
/// T_a and T_b share a session (T_a first). T_e reads the initial x while
/// T_a writes x1; symmetrically T_b reads the initial y while T_d writes y1.
/// T_b reads w1 written by T_c, T_d reads v1 written by T_b, and T_e reads
/// z1 written by T_d. Without the session edge everything is explained by
/// the arbitration order T_c, T_b, T_d, T_e, T_a; with it, the forced
/// visibility chain T_a -> T_b -> T_d -> T_e makes T_a visible to T_e, whose
/// external read of the initial x then has no consistent explanation.
pub fn si_not_session_si() -> History {
    let mut h = History::new(Deployment::Wt);
    let t_a = txn(1, 1, &[w("x", 1)]);
    let t_b = txn(2, 1, &[r("w", 1), r("y", 0), w("v", 1)]);
    let t_c = txn(3, 2, &[w("w", 1)]);
    let t_d = txn(4, 3, &[r("v", 1), w("y", 1), w("z", 1)]);
    let t_e = txn(5, 4, &[r("z", 1), r("x", 0)]);
    h.transactions = vec![initial_txn(&["x", "y", "z", "v", "w"]), t_a, t_b, t_c, t_d, t_e];
    // Start/commit instants: per-session issue order respected, otherwise
    // arbitrary (SI and SessionSI ignore real time).
    let stamps = [
        (0, -1, 0),
        (1, 1, 2),
        (2, 3, 4),
        (3, 5, 6),
        (4, 7, 8),
        (5, 9, 10),
    ];
    for (id, s, c) in stamps {
        h.real_time.insert(id, RealTimeStamps { start_nanos: s, commit_nanos: c });
    }
    h
}

/// Satisfies RealtimeSI but not StrongSI.
///
/// Same five-transaction read pattern, but driven by real-time intervals:
/// T_b starts before T_c commits yet reads y1 written by T_c, so the forced
/// visibility edge T_c -> T_b leaves the snapshot of T_b ahead of real time
/// (INRB fails). All returned transactions are visible and arbitration
/// follows commit order, so RealtimeSI holds.
pub fn realtime_si_not_strong_si() -> History {
    let mut h = History::new(Deployment::Wt);
    let t_c = txn(1, 1, &[w("y", 1)]);
    let t_b = txn(2, 2, &[r("y", 1), w("v", 1)]);
    let t_d = txn(3, 3, &[r("v", 1), w("z", 1)]);
    let t_e = txn(4, 4, &[r("z", 1), r("x", 0)]);
    let t_a = txn(5, 5, &[w("x", 1)]);
    h.transactions = vec![initial_txn(&["x", "y", "z", "v"]), t_c, t_b, t_d, t_e, t_a];
    let stamps = [
        (0, -1, 0),
        (1, 1, 8),   // T_c
        (2, 5, 12),  // T_b: starts inside T_c's lifetime, reads its write
        (3, 13, 20), // T_d
        (4, 21, 25), // T_e
        (5, 26, 30), // T_a: starts after T_e returned
    ];
    for (id, s, c) in stamps {
        h.real_time.insert(id, RealTimeStamps { start_nanos: s, commit_nanos: c });
    }
    h
}
