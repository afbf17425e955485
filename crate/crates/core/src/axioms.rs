//! Consistency axioms over abstract executions, and the snapshot-isolation
//! variants composed from them.
//!
//! All axioms are evaluated against a [`CheckView`]: committed transactions
//! arranged in arbitration order plus a visibility test. A view can be built
//! from materialized relations (small histories, oracle witnesses) or from
//! per-transaction order keys where `vis(S, T) <=> key(S) < threshold(T)`,
//! which is how the protocol extractions represent visibility without
//! materializing O(n^2) edges.

use crate::model::{
    AbstractExecution, History, ModelError, OpKind, RealTimeStamps, Transaction, TxnId,
    INITIAL_VALUE,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Axiom {
    Int,
    Ext,
    Session,
    Prefix,
    NoConflict,
    Rb,
    Inrb,
    RealTimeSnapshot,
    Cb,
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axiom::Int => "INT",
            Axiom::Ext => "EXT",
            Axiom::Session => "SESSION",
            Axiom::Prefix => "PREFIX",
            Axiom::NoConflict => "NOCONFLICT",
            Axiom::Rb => "RB",
            Axiom::Inrb => "INRB",
            Axiom::RealTimeSnapshot => "REALTIMESNAPSHOT",
            Axiom::Cb => "CB",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "si")]
    Si,
    #[serde(rename = "session-si")]
    SessionSi,
    #[serde(rename = "realtime-si")]
    RealtimeSi,
    #[serde(rename = "strong-si")]
    StrongSi,
    #[serde(rename = "gsi")]
    Gsi,
}

impl Model {
    pub const ALL: [Model; 5] =
        [Model::Si, Model::SessionSi, Model::RealtimeSi, Model::StrongSi, Model::Gsi];

    /// The axiom set defining each variant. REALTIMESNAPSHOT = RB ∧ INRB and
    /// is evaluated as those two sub-verdicts so failures localize.
    pub fn axioms(self) -> &'static [Axiom] {
        use Axiom::*;
        match self {
            Model::Si => &[Int, Ext, Prefix, NoConflict],
            Model::SessionSi => &[Int, Ext, Prefix, NoConflict, Session],
            Model::RealtimeSi => &[Int, Ext, Prefix, NoConflict, Rb, Cb],
            Model::StrongSi => &[Int, Ext, Prefix, NoConflict, RealTimeSnapshot, Cb],
            Model::Gsi => &[Int, Ext, Prefix, NoConflict, Inrb, Cb],
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Si => "si",
            Model::SessionSi => "session-si",
            Model::RealtimeSi => "realtime-si",
            Model::StrongSi => "strong-si",
            Model::Gsi => "gsi",
        })
    }
}

impl std::str::FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Model, String> {
        match s {
            "si" => Ok(Model::Si),
            "session-si" => Ok(Model::SessionSi),
            "realtime-si" => Ok(Model::RealtimeSi),
            "strong-si" => Ok(Model::StrongSi),
            "gsi" => Ok(Model::Gsi),
            other => Err(format!("unknown model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub axiom: Axiom,
    pub txns: Vec<TxnId>,
    pub message: String,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Report every witness instead of the first one per axiom.
    pub all_violations: bool,
    /// Fan axioms and the quadratic real-time scans out to worker threads.
    /// Results are identical either way; merge order is fixed.
    pub parallel: bool,
    /// Slack applied to RB/INRB when checking histories whose stamps came
    /// from physical clocks. Zero for simulated histories.
    pub rt_tolerance_nanos: i64,
}

impl Default for CheckOptions {
    fn default() -> CheckOptions {
        CheckOptions {
            all_violations: false,
            parallel: cfg!(feature = "parallel"),
            rt_tolerance_nanos: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckStats {
    pub txns: usize,
    pub committed: usize,
    pub aborted: usize,
    pub events: usize,
}

impl CheckStats {
    pub fn of(h: &History) -> CheckStats {
        let committed = h.committed().count();
        CheckStats {
            txns: h.transactions.len(),
            committed,
            aborted: h.transactions.len() - committed,
            events: h.transactions.iter().map(|t| t.events.len()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TidViolation {
    pub txns: Vec<TxnId>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub model: Model,
    pub verdict: bool,
    pub violations: Vec<Violation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub real_time_error_nanos: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tid_violations: Vec<TidViolation>,
    /// Wall-clock time; populated only on request since it would break
    /// byte-identical replays of the report file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_nanos: Option<u128>,
    pub stats: CheckStats,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.verdict && self.tid_violations.is_empty()
    }
}

/// A sortable key for threshold-based visibility: the packed timestamp plus a
/// Lamport tie-breaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OrderKey {
    pub primary: i128,
    pub tie: u64,
}

impl OrderKey {
    pub fn new(primary: i128, tie: u64) -> OrderKey {
        OrderKey { primary, tie }
    }
}

enum VisRep {
    /// preds[j] = set of positions visible to position j.
    Explicit(Vec<BTreeSet<usize>>),
    /// vis(i, j) <=> keys[i] < thresholds[j].
    Threshold { keys: Vec<OrderKey>, thresholds: Vec<OrderKey> },
}

pub struct CheckView<'h> {
    pub history: &'h History,
    txns: Vec<&'h Transaction>,
    vis: VisRep,
    stamps: Option<Vec<RealTimeStamps>>,
}

impl<'h> CheckView<'h> {
    /// Build a view from materialized relations, validating well-formedness:
    /// ar must be a strict total order over the committed transactions and
    /// vis a strict partial order contained in ar.
    pub fn from_execution(ae: &AbstractExecution<'h>) -> Result<CheckView<'h>, ModelError> {
        let ids: Vec<TxnId> = ae.history.committed().map(|t| t.txn_id).collect();
        if !ae.ar.is_total_over(&ids) {
            return Err(ModelError::Malformed("ar is not total over committed transactions".into()));
        }
        if !ae.ar.is_acyclic() {
            return Err(ModelError::Malformed("ar is cyclic".into()));
        }
        if !ae.vis.is_subset_of(&ae.ar) {
            return Err(ModelError::Malformed("vis is not contained in ar".into()));
        }
        if !ae.vis.is_strict_partial_order() {
            return Err(ModelError::Malformed("vis is not a strict partial order".into()));
        }
        let order = ae.ar.total_order_sequence(&ids);
        let txns: Vec<&Transaction> =
            order.iter().map(|&id| ae.history.txn(id).expect("committed id")).collect();
        let pos: BTreeMap<TxnId, usize> =
            order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); txns.len()];
        for (a, b) in ae.vis.pairs() {
            preds[pos[&b]].insert(pos[&a]);
        }
        let stamps = Self::collect_stamps(ae.history, &txns);
        Ok(CheckView { history: ae.history, txns, vis: VisRep::Explicit(preds), stamps })
    }

    /// Build a view from per-transaction order keys. `order` must hold every
    /// committed transaction id sorted ascending by its arbitration key;
    /// `keys`/`thresholds` align with it.
    pub fn from_threshold(
        history: &'h History,
        order: &[TxnId],
        keys: Vec<OrderKey>,
        thresholds: Vec<OrderKey>,
    ) -> CheckView<'h> {
        let txns: Vec<&Transaction> =
            order.iter().map(|&id| history.txn(id).expect("committed id")).collect();
        let stamps = Self::collect_stamps(history, &txns);
        CheckView { history, txns, vis: VisRep::Threshold { keys, thresholds }, stamps }
    }

    fn collect_stamps(history: &History, txns: &[&Transaction]) -> Option<Vec<RealTimeStamps>> {
        txns.iter().map(|t| history.real_time.get(&t.txn_id).copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.txns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txns.is_empty()
    }

    pub fn txn_at(&self, pos: usize) -> &Transaction {
        self.txns[pos]
    }

    fn id_at(&self, pos: usize) -> TxnId {
        self.txns[pos].txn_id
    }

    /// vis test on arbitration positions.
    pub fn vis(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        match &self.vis {
            VisRep::Explicit(preds) => preds[j].contains(&i),
            VisRep::Threshold { keys, thresholds } => keys[i] < thresholds[j],
        }
    }

    fn stamps(&self) -> Result<&[RealTimeStamps], ModelError> {
        match &self.stamps {
            Some(s) => Ok(s),
            None => {
                let missing = self
                    .txns
                    .iter()
                    .find(|t| !self.history.real_time.contains_key(&t.txn_id))
                    .map(|t| t.txn_id)
                    .unwrap_or_default();
                Err(ModelError::MissingRealTime(missing))
            }
        }
    }

    /// Positions of writers per key, ascending in ar, with the last value
    /// each writer leaves on the key.
    fn writers_by_key(&self) -> BTreeMap<&str, Vec<(usize, i64)>> {
        let mut map: BTreeMap<&str, Vec<(usize, i64)>> = BTreeMap::new();
        for (pos, t) in self.txns.iter().enumerate() {
            for k in t.written_keys() {
                let v = t.last_write(k).expect("written key has a last write");
                map.entry(k).or_default().push((pos, v));
            }
        }
        map
    }

    /// Materialize vis as a relation; intended for small views.
    pub fn materialize_vis(&self) -> crate::relation::Relation {
        let mut rel = crate::relation::Relation::new();
        for j in 0..self.len() {
            for i in 0..self.len() {
                if self.vis(i, j) {
                    rel.insert(self.id_at(i), self.id_at(j));
                }
            }
        }
        rel
    }

    /// Materialize ar as a relation; intended for small views.
    pub fn materialize_ar(&self) -> crate::relation::Relation {
        let mut rel = crate::relation::Relation::new();
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                rel.insert(self.id_at(i), self.id_at(j));
            }
        }
        rel
    }
}

/// INT: within a transaction, a read returns the value of the last preceding
/// write to or read from the same key. Visibility-independent.
pub fn check_int(h: &History) -> Vec<Violation> {
    let mut out = Vec::new();
    for t in h.committed() {
        let mut last_seen: BTreeMap<&str, i64> = BTreeMap::new();
        for e in &t.events {
            match &e.op {
                OpKind::Read { key, value } => {
                    if let Some(&prev) = last_seen.get(key.as_str()) {
                        if prev != *value {
                            out.push(Violation {
                                axiom: Axiom::Int,
                                txns: vec![t.txn_id],
                                message: format!(
                                    "txn {} event {} read {}={} but the last same-key event saw {}",
                                    t.txn_id, e.event_id, key, value, prev
                                ),
                            });
                        }
                    }
                    last_seen.insert(key, *value);
                }
                OpKind::Write { key, value } => {
                    last_seen.insert(key, *value);
                }
            }
        }
    }
    out
}

fn ext_violations_at(view: &CheckView, writers: &BTreeMap<&str, Vec<(usize, i64)>>, j: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let t = view.txn_at(j);
    let mut seen_keys: BTreeSet<&str> = BTreeSet::new();
    for e in &t.events {
        let k = e.op.key();
        if !seen_keys.insert(k) {
            continue;
        }
        let Some(v) = t.first_external_read(k) else { continue };
        let visible = writers
            .get(k)
            .into_iter()
            .flatten()
            .rev()
            .find(|&&(i, _)| i != j && view.vis(i, j));
        match visible {
            Some(&(i, written)) => {
                if written != v {
                    out.push(Violation {
                        axiom: Axiom::Ext,
                        txns: vec![view.id_at(i), t.txn_id],
                        message: format!(
                            "txn {} externally read {}={} but the latest visible writer (txn {}) wrote {}",
                            t.txn_id, k, v, view.id_at(i), written
                        ),
                    });
                }
            }
            None => {
                if v != INITIAL_VALUE {
                    out.push(Violation {
                        axiom: Axiom::Ext,
                        txns: vec![t.txn_id],
                        message: format!(
                            "txn {} externally read {}={} with no visible writer (initial value is {})",
                            t.txn_id, k, v, INITIAL_VALUE
                        ),
                    });
                }
            }
        }
    }
    out
}

/// EXT: every external read returns the value written by the arbitration-
/// latest visible writer of the key, or the initial value if none.
pub fn check_ext_view(view: &CheckView, opts: &CheckOptions) -> Vec<Violation> {
    let writers = view.writers_by_key();
    for_each_position(view.len(), opts, |j| ext_violations_at(view, &writers, j))
}

/// SESSION: so ⊆ vis.
pub fn check_session_view(view: &CheckView, _opts: &CheckOptions) -> Vec<Violation> {
    let pos: BTreeMap<TxnId, usize> =
        (0..view.len()).map(|i| (view.id_at(i), i)).collect();
    let mut out = Vec::new();
    for (a, b) in view.history.session_order_pairs() {
        let (pa, pb) = (pos[&a], pos[&b]);
        if !view.vis(pa, pb) {
            out.push(Violation {
                axiom: Axiom::Session,
                txns: vec![a, b],
                message: format!("session predecessor {a} is not visible to {b}"),
            });
        }
    }
    out
}

/// PREFIX: ar ∘ vis ⊆ vis, i.e. every snapshot is downward-closed under ar.
pub fn check_prefix_view(view: &CheckView, opts: &CheckOptions) -> Vec<Violation> {
    for_each_position(view.len(), opts, |j| {
        let mut out = Vec::new();
        let mut first_gap: Option<usize> = None;
        for i in 0..view.len() {
            if i == j {
                continue;
            }
            if view.vis(i, j) {
                if let Some(g) = first_gap {
                    out.push(Violation {
                        axiom: Axiom::Prefix,
                        txns: vec![view.id_at(g), view.id_at(i), view.id_at(j)],
                        message: format!(
                            "txn {} precedes txn {} in ar and txn {} is visible to txn {}, but txn {} is not",
                            view.id_at(g),
                            view.id_at(i),
                            view.id_at(i),
                            view.id_at(j),
                            view.id_at(g)
                        ),
                    });
                    break;
                }
            } else if first_gap.is_none() {
                first_gap = Some(i);
            }
        }
        out
    })
}

/// NOCONFLICT: transactions writing a common key are vis-related one way or
/// the other.
pub fn check_noconflict_view(view: &CheckView, _opts: &CheckOptions) -> Vec<Violation> {
    let writers = view.writers_by_key();
    let mut checked: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::new();
    for (k, list) in &writers {
        for a in 0..list.len() {
            for b in a + 1..list.len() {
                let (i, j) = (list[a].0, list[b].0);
                if !checked.insert((i, j)) {
                    continue;
                }
                if !view.vis(i, j) && !view.vis(j, i) {
                    out.push(Violation {
                        axiom: Axiom::NoConflict,
                        txns: vec![view.id_at(i), view.id_at(j)],
                        message: format!(
                            "txns {} and {} both write {} but neither is visible to the other",
                            view.id_at(i),
                            view.id_at(j),
                            k
                        ),
                    });
                }
            }
        }
    }
    out
}

/// The real-time axioms. REALTIMESNAPSHOT is evaluated as its RB and INRB
/// halves so the failing side is named.
pub fn check_rt_axiom_view(
    view: &CheckView,
    which: Axiom,
    opts: &CheckOptions,
) -> Result<Vec<Violation>, ModelError> {
    let stamps = view.stamps()?.to_vec();
    let tol = opts.rt_tolerance_nanos;
    match which {
        Axiom::Rb => Ok(for_each_position(view.len(), opts, |j| {
            let mut out = Vec::new();
            for i in 0..view.len() {
                if i != j
                    && stamps[i].commit_nanos.saturating_add(tol) < stamps[j].start_nanos
                    && !view.vis(i, j)
                {
                    out.push(Violation {
                        axiom: Axiom::Rb,
                        txns: vec![view.id_at(i), view.id_at(j)],
                        message: format!(
                            "txn {} returned before txn {} started but is not visible to it",
                            view.id_at(i),
                            view.id_at(j)
                        ),
                    });
                }
            }
            out
        })),
        Axiom::Inrb => Ok(for_each_position(view.len(), opts, |j| {
            let mut out = Vec::new();
            for i in 0..view.len() {
                if i != j
                    && view.vis(i, j)
                    && stamps[i].commit_nanos >= stamps[j].start_nanos.saturating_add(tol)
                {
                    out.push(Violation {
                        axiom: Axiom::Inrb,
                        txns: vec![view.id_at(i), view.id_at(j)],
                        message: format!(
                            "txn {} is visible to txn {} but committed after it started",
                            view.id_at(i),
                            view.id_at(j)
                        ),
                    });
                }
            }
            out
        })),
        Axiom::RealTimeSnapshot => {
            let mut out = check_rt_axiom_view(view, Axiom::Rb, opts)?;
            out.extend(check_rt_axiom_view(view, Axiom::Inrb, opts)?);
            Ok(out)
        }
        Axiom::Cb => {
            // cb ⊆ ar: commit instants must ascend along the ar order.
            let mut by_commit: Vec<usize> = (0..view.len()).collect();
            by_commit.sort_by_key(|&i| stamps[i].commit_nanos);
            let mut out = Vec::new();
            for w in by_commit.windows(2) {
                let (i, j) = (w[0], w[1]);
                if i > j {
                    out.push(Violation {
                        axiom: Axiom::Cb,
                        txns: vec![view.id_at(i), view.id_at(j)],
                        message: format!(
                            "txn {} commits before txn {} in real time but follows it in ar",
                            view.id_at(i),
                            view.id_at(j)
                        ),
                    });
                }
            }
            Ok(out)
        }
        other => Err(ModelError::Malformed(format!("{other} is not a real-time axiom"))),
    }
}

fn axiom_violations(
    view: &CheckView,
    axiom: Axiom,
    opts: &CheckOptions,
) -> Result<Vec<Violation>, ModelError> {
    match axiom {
        Axiom::Int => Ok(check_int(view.history)),
        Axiom::Ext => Ok(check_ext_view(view, opts)),
        Axiom::Session => Ok(check_session_view(view, opts)),
        Axiom::Prefix => Ok(check_prefix_view(view, opts)),
        Axiom::NoConflict => Ok(check_noconflict_view(view, opts)),
        rt => check_rt_axiom_view(view, rt, opts),
    }
}

/// Evaluate a model's axiom set; the verdict is the conjunction. Axioms are
/// reported in definition order regardless of evaluation order.
pub fn check_model_view(
    view: &CheckView,
    model: Model,
    opts: &CheckOptions,
) -> Result<CheckReport, ModelError> {
    let axioms = model.axioms();
    let per_axiom: Result<Vec<Vec<Violation>>, ModelError> = {
        #[cfg(feature = "parallel")]
        {
            if opts.parallel {
                axioms.par_iter().map(|&a| axiom_violations(view, a, opts)).collect()
            } else {
                axioms.iter().map(|&a| axiom_violations(view, a, opts)).collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            axioms.iter().map(|&a| axiom_violations(view, a, opts)).collect()
        }
    };
    let mut violations = Vec::new();
    for mut vs in per_axiom? {
        if !opts.all_violations {
            vs.truncate(1);
        }
        violations.extend(vs);
    }
    Ok(CheckReport {
        model,
        verdict: violations.is_empty(),
        violations,
        real_time_error_nanos: None,
        tid_violations: Vec::new(),
        elapsed_nanos: None,
        stats: CheckStats::of(view.history),
    })
}

/// Convenience wrappers over materialized abstract executions.
pub fn check_ext(ae: &AbstractExecution) -> Result<Vec<Violation>, ModelError> {
    Ok(check_ext_view(&CheckView::from_execution(ae)?, &CheckOptions::default()))
}

pub fn check_session(ae: &AbstractExecution) -> Result<Vec<Violation>, ModelError> {
    Ok(check_session_view(&CheckView::from_execution(ae)?, &CheckOptions::default()))
}

pub fn check_prefix(ae: &AbstractExecution) -> Result<Vec<Violation>, ModelError> {
    Ok(check_prefix_view(&CheckView::from_execution(ae)?, &CheckOptions::default()))
}

pub fn check_noconflict(ae: &AbstractExecution) -> Result<Vec<Violation>, ModelError> {
    Ok(check_noconflict_view(&CheckView::from_execution(ae)?, &CheckOptions::default()))
}

pub fn check_rt_axiom(ae: &AbstractExecution, which: Axiom) -> Result<Vec<Violation>, ModelError> {
    check_rt_axiom_view(&CheckView::from_execution(ae)?, which, &CheckOptions::default())
}

pub fn check_model(ae: &AbstractExecution, model: Model) -> Result<CheckReport, ModelError> {
    check_model_view(&CheckView::from_execution(ae)?, model, &CheckOptions::default())
}

/// Run `f` for every arbitration position and concatenate in position order.
fn for_each_position<F>(n: usize, opts: &CheckOptions, f: F) -> Vec<Violation>
where
    F: Fn(usize) -> Vec<Violation> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if opts.parallel {
            return (0..n).into_par_iter().flat_map_iter(f).collect();
        }
    }
    let _ = opts;
    (0..n).flat_map(f).collect()
}
