//! Binary relations over transaction ids, stored as adjacency sets.

use crate::model::TxnId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    succ: BTreeMap<TxnId, BTreeSet<TxnId>>,
}

impl Relation {
    pub fn new() -> Relation {
        Relation::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (TxnId, TxnId)>) -> Relation {
        let mut r = Relation::new();
        for (a, b) in pairs {
            r.insert(a, b);
        }
        r
    }

    pub fn insert(&mut self, a: TxnId, b: TxnId) {
        self.succ.entry(a).or_default().insert(b);
    }

    pub fn remove(&mut self, a: TxnId, b: TxnId) {
        if let Some(s) = self.succ.get_mut(&a) {
            s.remove(&b);
            if s.is_empty() {
                self.succ.remove(&a);
            }
        }
    }

    pub fn contains(&self, a: TxnId, b: TxnId) -> bool {
        self.succ.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn len(&self) -> usize {
        self.succ.values().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    /// All pairs in deterministic order.
    pub fn pairs(&self) -> impl Iterator<Item = (TxnId, TxnId)> + '_ {
        self.succ.iter().flat_map(|(&a, s)| s.iter().map(move |&b| (a, b)))
    }

    pub fn successors(&self, a: TxnId) -> impl Iterator<Item = TxnId> + '_ {
        self.succ.get(&a).into_iter().flatten().copied()
    }

    /// `R^{-1}(b)`: everything related into `b`.
    pub fn predecessors(&self, b: TxnId) -> Vec<TxnId> {
        self.succ
            .iter()
            .filter(|(_, s)| s.contains(&b))
            .map(|(&a, _)| a)
            .collect()
    }

    pub fn inverse(&self) -> Relation {
        Relation::from_pairs(self.pairs().map(|(a, b)| (b, a)))
    }

    /// `R ∘ S = {(a, c) | ∃ b: a R b ∧ b S c}`.
    pub fn compose(&self, other: &Relation) -> Relation {
        let mut out = Relation::new();
        for (a, b) in self.pairs() {
            for c in other.successors(b) {
                out.insert(a, c);
            }
        }
        out
    }

    /// Restriction to pairs whose first component lies in `set`.
    pub fn restrict(&self, set: &BTreeSet<TxnId>) -> Relation {
        Relation::from_pairs(self.pairs().filter(|(a, _)| set.contains(a)))
    }

    pub fn transitive_closure(&self) -> Relation {
        let mut out = self.clone();
        loop {
            let mut added = Vec::new();
            for (a, b) in out.pairs() {
                for c in out.successors(b) {
                    if !out.contains(a, c) {
                        added.push((a, c));
                    }
                }
            }
            if added.is_empty() {
                return out;
            }
            for (a, c) in added {
                out.insert(a, c);
            }
        }
    }

    pub fn is_irreflexive(&self) -> bool {
        self.pairs().all(|(a, b)| a != b)
    }

    pub fn is_transitive(&self) -> bool {
        self.pairs().all(|(a, b)| {
            self.successors(b).all(|c| self.contains(a, c))
        })
    }

    pub fn is_strict_partial_order(&self) -> bool {
        self.is_irreflexive() && self.is_transitive()
    }

    pub fn is_acyclic(&self) -> bool {
        // A strict partial order has no cycles; for arbitrary relations,
        // check that the closure stays irreflexive.
        self.transitive_closure().is_irreflexive()
    }

    /// Total over `ids`: every distinct pair is related one way or the other.
    pub fn is_total_over(&self, ids: &[TxnId]) -> bool {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if !self.contains(a, b) && !self.contains(b, a) {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_subset_of(&self, other: &Relation) -> bool {
        self.pairs().all(|(a, b)| other.contains(a, b))
    }

    /// The total order as a sequence, assuming this relation is a strict
    /// total order over `ids`; ids sorted by number of predecessors.
    pub fn total_order_sequence(&self, ids: &[TxnId]) -> Vec<TxnId> {
        let mut v: Vec<TxnId> = ids.to_vec();
        v.sort_by_key(|&t| self.predecessors(t).len());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_relation() -> impl Strategy<Value = Relation> {
        proptest::collection::vec((0u64..6, 0u64..6), 0..12)
            .prop_map(Relation::from_pairs)
    }

    proptest! {
        #[test]
        fn compose_inverse_law(r in small_relation(), s in small_relation()) {
            // (R ∘ S)^{-1} = S^{-1} ∘ R^{-1}
            let lhs = r.compose(&s).inverse();
            let rhs = s.inverse().compose(&r.inverse());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn closure_is_idempotent(r in small_relation()) {
            let once = r.transitive_closure();
            let twice = once.transitive_closure();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn acyclicity_and_totality() {
        let chain = Relation::from_pairs([(1, 2), (2, 3), (1, 3)]);
        assert!(chain.is_acyclic());
        assert!(chain.is_total_over(&[1, 2, 3]));
        assert!(!chain.is_total_over(&[1, 2, 3, 4]));
        let cyc = Relation::from_pairs([(1, 2), (2, 1)]);
        assert!(!cyc.is_acyclic());
    }
}
