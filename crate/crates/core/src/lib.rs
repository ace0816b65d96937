//! Reliability tooling for circuit-diagram-to-Verilog generation.
//!
//! * [`verilog`] lexes Verilog and parses module headers.
//! * [`anonymize`] produces the placeholder-renamed (`module_name`, `val_i`)
//!   variant of a module.
//! * [`toolchain`] drives synthesis, rendering, compilation and simulation
//!   through a pluggable command runner.
//! * [`metrics`] and [`stats`] compute Pass@k, outcome breakdowns, refusal
//!   rates and McNemar tests with Holm–Bonferroni correction.
//! * [`dorpo`] implements the decision-focused ORPO objective, its gradients
//!   and a toy alignment loop.
//! * [`pairs`] builds Match/Blank/Mismatch preference pairs.
//! * [`corpus`] holds the curation filters (Rouge-L decontamination, visual
//!   token budget) and token-count statistics.
//! * [`jsonl`] reads and writes the JSON Lines manifests.
//! * [`harness`] runs the paired Normal/Anony × Original/Mirage protocol and
//!   emits reports.
//!
//! Batch work (decontamination, judging) runs on rayon when the `parallel`
//! feature is enabled (the default) and sequentially otherwise.

pub mod anonymize;
pub mod corpus;
pub mod dorpo;
pub mod harness;
pub mod jsonl;
pub mod metrics;
pub mod pairs;
pub mod par;
pub mod stats;
pub mod toolchain;
pub mod verilog;
