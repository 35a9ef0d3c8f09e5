//! Lifecycle toolkit for CVE-centric cyber threat intelligence pipelines.
//!
//! The crate is organized around the stages of an LLM-centered CTI workflow:
//!
//! - [`ingest`] parses threat-feed records into normalized [`ingest::ThreatRecord`]s
//!   and maintains a queryable, mergeable store.
//! - [`modelio`] abstracts text-generation backends behind one trait, with a
//!   deterministic digest-based mock for tests and a remote HTTP client.
//! - [`corpusgen`] assembles 1-shot prompts from demo reports plus threat
//!   metadata and runs the generate-then-revise corpus procedure.
//! - [`curriculum`] orders a corpus chronologically and by length, then emits
//!   per-epoch training manifests from a three-stage pacing schedule.
//! - [`cascade`] builds dependency-ordered multi-step instruction chains from
//!   threat records.
//! - [`objective`] realizes the regularized causal-LM loss and the cascading
//!   instruction-tuning loss on a closed-form bigram model with analytic
//!   gradients.
//! - [`infer`] is the modularized inference engine: task planning, entity and
//!   relation extraction, cached retrieval, and concurrent stage scheduling.
//! - [`evalharness`] implements the metric suite (P/R/F1/IoU, Hit@K, CVSS
//!   accuracy, EPSS RMSE, embedding similarity) and the experiment protocols.
//!
//! Every stochastic step is seedable; with mock backends the whole pipeline is
//! byte-reproducible.

pub mod artifact;
pub mod cascade;
pub mod corpusgen;
pub mod curriculum;
pub mod evalharness;
pub mod infer;
pub mod ingest;
pub mod modelio;
pub mod objective;
pub mod taxonomy;
pub mod util;
