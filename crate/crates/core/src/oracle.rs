//! Brute-force black-box membership oracle for small histories.
//!
//! Searches for a visibility relation and arbitration order satisfying a
//! model. Checking SI membership without a version order is NP-complete in
//! general, so the search is capped; within the cap it is exact. The axiom
//! evaluation here is intentionally written from the definitions, separate
//! from the checker's evaluators, so the two can cross-validate each other.
//!
//! Search shape: arbitration is enumerated as permutations of the committed
//! transactions (pinned to the real-time commit order when the model
//! contains CB, which forces it). Under PREFIX every snapshot is a prefix of
//! the arbitration order, so visibility is enumerated as one prefix length
//! per transaction, with INT checked up front (it is vis-independent) and
//! EXT, SESSION, NOCONFLICT, RB, INRB and vis-transitivity pruned per prefix
//! choice.

use crate::axioms::{Axiom, Model};
use crate::model::{History, ModelError, RealTimeStamps, Transaction, TxnId, INITIAL_TXN_ID, INITIAL_VALUE};
use crate::relation::Relation;
use std::collections::BTreeMap;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const DEFAULT_CAP: usize = 6;

#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Maximum number of committed client transactions (the initial
    /// transaction does not count against the cap).
    pub cap: usize,
    pub parallel: bool,
}

impl Default for OracleConfig {
    fn default() -> OracleConfig {
        OracleConfig { cap: DEFAULT_CAP, parallel: cfg!(feature = "parallel") }
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("history has {committed} committed transactions, over the oracle cap {cap}")]
    SizeLimit { committed: usize, cap: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub satisfiable: bool,
    /// One satisfying (vis, ar) pair when satisfiable.
    pub witness: Option<(Relation, Relation)>,
}

struct SearchCtx<'h> {
    txns: Vec<&'h Transaction>,
    /// Per transaction: session predecessors (indices into `txns`).
    so_preds: Vec<Vec<usize>>,
    /// Per transaction: conflicting transactions (indices into `txns`).
    conflicts: Vec<Vec<usize>>,
    /// Per transaction: (key, value) of each external read.
    ext_reads: Vec<Vec<(String, i64)>>,
    /// Per transaction: last written value per key.
    last_writes: Vec<BTreeMap<String, i64>>,
    stamps: Option<Vec<RealTimeStamps>>,
    /// Index of the initial transaction. It is the initial state of every
    /// key, so it is pinned first in ar and visible to everyone; letting it
    /// float would let the search "restore" initial values by arbitrating it
    /// after a real writer.
    initial: Option<usize>,
    need_session: bool,
    need_rb: bool,
    need_inrb: bool,
}

pub fn brute_force_satisfies(
    h: &History,
    model: Model,
    cfg: &OracleConfig,
) -> Result<OracleOutcome, OracleError> {
    let txns: Vec<&Transaction> = h.committed().collect();
    let client_txns = txns.iter().filter(|t| t.txn_id != INITIAL_TXN_ID).count();
    if client_txns > cfg.cap {
        return Err(OracleError::SizeLimit { committed: client_txns, cap: cfg.cap });
    }

    // INT does not depend on vis or ar; reject early.
    if !internal_reads_consistent(&txns) {
        return Ok(OracleOutcome { satisfiable: false, witness: None });
    }

    let axioms = model.axioms();
    let has = |a: Axiom| axioms.contains(&a);
    let need_cb = has(Axiom::Cb);
    let need_rb = has(Axiom::Rb) || has(Axiom::RealTimeSnapshot);
    let need_inrb = has(Axiom::Inrb) || has(Axiom::RealTimeSnapshot);

    let stamps = if need_cb || need_rb || need_inrb {
        let mut v = Vec::with_capacity(txns.len());
        for t in &txns {
            v.push(h.stamps(t.txn_id)?);
        }
        Some(v)
    } else {
        None
    };

    let n = txns.len();
    let mut so_preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j
                && txns[i].session_id == txns[j].session_id
                && txns[i].txn_id < txns[j].txn_id
            {
                so_preds[j].push(i);
            }
        }
    }
    let mut conflicts: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if crate::model::conflict(txns[i], txns[j]) {
                conflicts[i].push(j);
                conflicts[j].push(i);
            }
        }
    }
    let ext_reads: Vec<Vec<(String, i64)>> = txns
        .iter()
        .map(|t| {
            let mut keys = std::collections::BTreeSet::new();
            for e in &t.events {
                keys.insert(e.op.key().to_string());
            }
            keys.into_iter()
                .filter_map(|k| t.first_external_read(&k).map(|v| (k, v)))
                .collect()
        })
        .collect();
    let last_writes: Vec<BTreeMap<String, i64>> = txns
        .iter()
        .map(|t| {
            t.written_keys()
                .map(|k| (k.to_string(), t.last_write(k).unwrap()))
                .collect()
        })
        .collect();

    let initial = txns.iter().position(|t| t.txn_id == INITIAL_TXN_ID);
    let ctx = SearchCtx {
        txns,
        so_preds,
        conflicts,
        ext_reads,
        last_writes,
        stamps,
        initial,
        need_session: has(Axiom::Session),
        need_rb,
        need_inrb,
    };

    let found = if need_cb {
        // CB forces ar to extend the (total) real-time commit order, so there
        // is exactly one candidate permutation.
        let mut perm: Vec<usize> = (0..n).collect();
        let stamps = ctx.stamps.as_ref().expect("stamps collected for CB");
        perm.sort_by_key(|&i| stamps[i].commit_nanos);
        search_prefixes(&ctx, &perm)
    } else {
        search_permutations(&ctx, cfg)
    };

    match found {
        Some((perm, prefix)) => {
            let mut vis = Relation::new();
            let mut ar = Relation::new();
            for a in 0..n {
                for b in a + 1..n {
                    ar.insert(ctx.txns[perm[a]].txn_id, ctx.txns[perm[b]].txn_id);
                }
            }
            for (j, &p) in prefix.iter().enumerate() {
                for i in 0..p {
                    vis.insert(ctx.txns[perm[i]].txn_id, ctx.txns[perm[j]].txn_id);
                }
            }
            Ok(OracleOutcome { satisfiable: true, witness: Some((vis, ar)) })
        }
        None => Ok(OracleOutcome { satisfiable: false, witness: None }),
    }
}

fn internal_reads_consistent(txns: &[&Transaction]) -> bool {
    for t in txns {
        let mut last: BTreeMap<&str, i64> = BTreeMap::new();
        for e in &t.events {
            let (k, v) = (e.op.key(), e.op.value());
            if e.op.is_read() {
                if let Some(&prev) = last.get(k) {
                    if prev != v {
                        return false;
                    }
                }
            }
            last.insert(k, v);
        }
    }
    true
}

/// Enumerate permutations in lexicographic order of transaction indices
/// (the initial transaction, when present, stays first) and return the first
/// satisfiable one with its prefix vector.
fn search_permutations(ctx: &SearchCtx, cfg: &OracleConfig) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = ctx.txns.len();
    if n == 0 {
        return Some((Vec::new(), Vec::new()));
    }
    let branches: Vec<Vec<usize>> = match ctx.initial {
        Some(t0) if n > 1 => (0..n).filter(|&i| i != t0).map(|s| vec![t0, s]).collect(),
        Some(t0) => vec![vec![t0]],
        None => (0..n).map(|f| vec![f]).collect(),
    };
    let explore = |seed: &Vec<usize>| -> Option<(Vec<usize>, Vec<usize>)> {
        let mut perm = seed.clone();
        let mut used = vec![false; n];
        for &i in seed {
            used[i] = true;
        }
        permute_rest(ctx, &mut perm, &mut used)
    };
    #[cfg(feature = "parallel")]
    {
        if cfg.parallel {
            return branches.par_iter().filter_map(explore).find_first(|_| true);
        }
    }
    let _ = cfg;
    branches.iter().find_map(explore)
}

fn permute_rest(
    ctx: &SearchCtx,
    perm: &mut Vec<usize>,
    used: &mut Vec<bool>,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = ctx.txns.len();
    if perm.len() == n {
        return search_prefixes(ctx, perm).map(|(p, pre)| (p, pre));
    }
    for next in 0..n {
        if used[next] {
            continue;
        }
        used[next] = true;
        perm.push(next);
        if let Some(hit) = permute_rest(ctx, perm, used) {
            return Some(hit);
        }
        perm.pop();
        used[next] = false;
    }
    None
}

/// Given a fixed arbitration order, search for per-transaction snapshot
/// prefix lengths satisfying the model.
fn search_prefixes(ctx: &SearchCtx, perm: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = perm.len();
    let pos_of: BTreeMap<usize, usize> = perm.iter().enumerate().map(|(p, &t)| (t, p)).collect();
    let mut prefix = vec![0usize; n];
    if dfs(ctx, perm, &pos_of, &mut prefix, 0) {
        Some((perm.to_vec(), prefix))
    } else {
        None
    }
}

fn dfs(
    ctx: &SearchCtx,
    perm: &[usize],
    pos_of: &BTreeMap<usize, usize>,
    prefix: &mut Vec<usize>,
    j: usize,
) -> bool {
    let n = perm.len();
    if j == n {
        return true;
    }
    let t = perm[j];
    // Lower bound on the snapshot: the initial state, session predecessors,
    // rb predecessors and earlier conflicting transactions must be visible.
    let mut lo = 0usize;
    if j > 0 && ctx.initial.is_some_and(|t0| perm[0] == t0) {
        lo = 1;
    }
    if ctx.need_session {
        for &s in &ctx.so_preds[t] {
            match pos_of.get(&s) {
                Some(&p) if p < j => lo = lo.max(p + 1),
                _ => return false, // session predecessor after t in ar
            }
        }
    }
    for &c in &ctx.conflicts[t] {
        if let Some(&p) = pos_of.get(&c) {
            if p < j {
                lo = lo.max(p + 1);
            }
        }
    }
    if ctx.need_rb {
        let stamps = ctx.stamps.as_ref().unwrap();
        for i in 0..j {
            if stamps[perm[i]].commit_nanos < stamps[t].start_nanos {
                lo = lo.max(i + 1);
            }
        }
        // an rb predecessor placed after t in ar can never become visible
        for i in j + 1..n {
            if stamps[perm[i]].commit_nanos < stamps[t].start_nanos {
                return false;
            }
        }
    }
    'cand: for p in (lo..=j).rev() {
        if ctx.need_inrb {
            let stamps = ctx.stamps.as_ref().unwrap();
            for i in 0..p {
                if stamps[perm[i]].commit_nanos >= stamps[t].start_nanos {
                    continue 'cand;
                }
            }
        }
        // vis transitivity: prefixes must be monotone along visibility
        for i in 0..p {
            if prefix[i] > p {
                continue 'cand;
            }
        }
        if !ext_ok(ctx, perm, t, p) {
            continue 'cand;
        }
        prefix[j] = p;
        if dfs(ctx, perm, pos_of, prefix, j + 1) {
            return true;
        }
    }
    false
}

fn ext_ok(ctx: &SearchCtx, perm: &[usize], t: usize, p: usize) -> bool {
    for (k, v) in &ctx.ext_reads[t] {
        let mut found = None;
        for i in (0..p).rev() {
            if let Some(&written) = ctx.last_writes[perm[i]].get(k) {
                found = Some(written);
                break;
            }
        }
        match found {
            Some(written) => {
                if written != *v {
                    return false;
                }
            }
            None => {
                if *v != INITIAL_VALUE {
                    return false;
                }
            }
        }
    }
    true
}

/// The witness as full relations over txn ids, for reports.
pub fn witness_pairs(w: &(Relation, Relation)) -> (Vec<(TxnId, TxnId)>, Vec<(TxnId, TxnId)>) {
    (w.0.pairs().collect(), w.1.pairs().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axioms::{check_model, Model};
    use crate::model::{AbstractExecution, Deployment, Event, OpKind, TxnStatus};

    fn w(k: &str, v: i64) -> OpKind {
        OpKind::Write { key: k.into(), value: v }
    }

    fn r(k: &str, v: i64) -> OpKind {
        OpKind::Read { key: k.into(), value: v }
    }

    fn txn(id: TxnId, session: u64, ops: &[OpKind]) -> Transaction {
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

    fn history(txns: Vec<Transaction>) -> History {
        let mut h = History::new(Deployment::Wt);
        for (i, t) in txns.iter().enumerate() {
            h.real_time.insert(
                t.txn_id,
                RealTimeStamps { start_nanos: 10 * i as i64 + 1, commit_nanos: 10 * i as i64 + 5 },
            );
        }
        h.transactions = txns;
        h
    }

    #[test]
    fn session_chain_is_satisfiable_with_so_edge_in_witness() {
        let h = history(vec![txn(1, 9, &[w("x", 1)]), txn(2, 9, &[r("x", 1)])]);
        let out = brute_force_satisfies(&h, Model::SessionSi, &OracleConfig::default()).unwrap();
        assert!(out.satisfiable);
        let (vis, ar) = out.witness.unwrap();
        assert!(vis.contains(1, 2));
        assert!(ar.contains(1, 2));
        // the witness itself passes the checker's evaluation (dual route)
        let ae = AbstractExecution { history: &h, vis, ar };
        assert!(check_model(&ae, Model::SessionSi).unwrap().verdict);
    }

    #[test]
    fn unexplainable_read_is_unsatisfiable() {
        let h = history(vec![txn(1, 1, &[w("x", 1)]), txn(2, 2, &[r("x", 42)])]);
        for m in Model::ALL {
            let out = brute_force_satisfies(&h, m, &OracleConfig::default()).unwrap();
            assert!(!out.satisfiable, "{m} should be unsatisfiable");
        }
    }

    #[test]
    fn internal_inconsistency_is_pruned_before_search() {
        let h = history(vec![txn(1, 1, &[w("x", 1), r("x", 2)])]);
        let out = brute_force_satisfies(&h, Model::Si, &OracleConfig::default()).unwrap();
        assert!(!out.satisfiable);
    }

    #[test]
    fn over_cap_is_an_error() {
        let txns: Vec<Transaction> =
            (1..=8).map(|i| txn(i, i, &[w(&format!("k{i}"), 1)])).collect();
        let h = history(txns);
        let err = brute_force_satisfies(&h, Model::Si, &OracleConfig::default());
        assert!(matches!(err, Err(OracleError::SizeLimit { committed: 8, cap: 6 })));
    }

    #[test]
    fn stale_read_allowed_by_si_but_not_under_rb() {
        // T1 writes and returns, then T2 starts and reads the initial value:
        // legal under plain SI (T1 simply not visible), illegal once RB
        // forces returned transactions into the snapshot.
        let h = history(vec![txn(1, 1, &[w("x", 1)]), txn(2, 2, &[r("x", 0)])]);
        let si = brute_force_satisfies(&h, Model::Si, &OracleConfig::default()).unwrap();
        assert!(si.satisfiable);
        let rtsi = brute_force_satisfies(&h, Model::RealtimeSi, &OracleConfig::default()).unwrap();
        assert!(!rtsi.satisfiable);
    }

    #[test]
    fn lost_update_is_rejected() {
        // both write x from the initial snapshot; no prefix assignment can
        // order them without one seeing the other
        let h = history(vec![
            txn(1, 1, &[r("x", 0), w("x", 1)]),
            txn(2, 2, &[r("x", 0), w("x", 2)]),
        ]);
        let out = brute_force_satisfies(&h, Model::Si, &OracleConfig::default()).unwrap();
        assert!(!out.satisfiable);
    }

    #[test]
    fn monotone_under_model_weakening() {
        // axiom-set inclusions: SI ⊆ SessionSI, SI ⊆ GSI ⊆ StrongSI,
        // SI ⊆ RealtimeSI ⊆ StrongSI
        let cases = [
            (Model::Si, Model::SessionSi),
            (Model::Si, Model::RealtimeSi),
            (Model::RealtimeSi, Model::StrongSi),
            (Model::Si, Model::Gsi),
            (Model::Gsi, Model::StrongSi),
        ];
        let histories = vec![
            history(vec![txn(1, 1, &[w("x", 1)]), txn(2, 1, &[r("x", 1)])]),
            history(vec![txn(1, 1, &[w("x", 1)]), txn(2, 2, &[r("x", 0)])]),
            history(vec![
                txn(1, 1, &[r("x", 0), w("x", 1)]),
                txn(2, 2, &[r("y", 0), w("y", 2)]),
                txn(3, 3, &[r("x", 1), r("y", 0)]),
            ]),
        ];
        for h in &histories {
            for (weaker, stronger) in cases {
                let strong =
                    brute_force_satisfies(h, stronger, &OracleConfig::default()).unwrap();
                if strong.satisfiable {
                    let weak =
                        brute_force_satisfies(h, weaker, &OracleConfig::default()).unwrap();
                    assert!(weak.satisfiable, "{stronger} sat but {weaker} unsat");
                }
            }
        }
    }
}
