//! Deterministic simulation and snapshot-isolation checking for MongoDB-style
//! transaction protocols.
//!
//! Three engines model the transactional consistency protocols of the three
//! deployments: a standalone MVCC storage engine ([`wt_engine`]), a replica
//! set with a replicated oplog and majority commit ([`rs_engine`]), and a
//! sharded cluster with router-assigned snapshots and two-phase commit
//! ([`sc_engine`]). A seeded discrete-event harness ([`sim`]) drives client
//! workloads against any of them and records histories, which are then
//! verified against snapshot-isolation variants two ways: a white-box
//! checker ([`extract`]) that reads the protocol metadata to build the
//! visibility and arbitration relations in polynomial time, and a
//! brute-force black-box oracle ([`oracle`]) that searches for them at small
//! scale.

pub mod axioms;
pub mod clock;
pub mod extract;
pub mod fixtures;
pub mod hist_io;
pub mod model;
pub mod mutate;
pub mod oracle;
pub mod relation;
pub mod rs_engine;
pub mod sc_engine;
pub mod sim;
pub mod wt_engine;

pub use axioms::{Axiom, CheckOptions, CheckReport, Model, Violation};
pub use clock::Ts;
pub use model::{Deployment, History, Transaction};
