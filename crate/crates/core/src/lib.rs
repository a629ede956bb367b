//! Root-cause analysis for Kubernetes incidents.
//!
//! The crate turns periodic resource snapshots into a temporal [`StateGraph`],
//! derives a kind-level [`MetaGraph`] from it, and answers incidents by
//! walking metapaths between the incident's source kind and a predicted
//! root-cause kind. A five-stage LLM pipeline (locator, Cypher generator,
//! diagnostic summarizer, report generator, investigation estimator) turns the
//! retrieved state into a report with remediation commands.
//!
//! The pipeline in order:
//!
//! 1. [`ingest`] loads newline-delimited snapshot envelopes and collapses
//!    consecutive duplicates into time-ranged records.
//! 2. [`entity`] profiles flattened keys, selects entity keys and extracts
//!    canonical entity references.
//! 3. [`stategraph`] assembles entity and snapshot vertices with time-ranged
//!    edges, and matches incidents to Event snapshots.
//! 4. [`metagraph`] extracts `(srcKind, destKind, key, type)` quadruplets and
//!    searches ranked metapaths.
//! 5. [`query`] compiles metapaths into plans, executes them into statepaths
//!    and emits Cypher text.
//! 6. [`llm`] renders prompts, parses and validates responses over a pluggable
//!    [`llm::LlmBackend`].
//! 7. [`driver`] runs the retry loop per incident and the evaluation harness.
//!
//! Nothing in the crate executes a recommended command, and a built
//! [`StateGraph`] exposes no mutating methods.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod config;
pub mod driver;
pub mod entity;
pub mod ingest;
pub mod llm;
pub mod metagraph;
pub mod query;
pub mod stategraph;
pub mod synthetic;
pub mod time;

pub use config::Config;
pub use driver::{Incident, RcaResult, RcaStatus};
pub use entity::{EdgeType, EntityRef, FlatKey, Identity};
pub use ingest::{DedupedSnapshot, RawSnapshot};
pub use metagraph::{MetaGraph, Metapath};
pub use stategraph::{StateGraph, VertexId};
pub use time::TimeRange;
