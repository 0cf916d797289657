//! Detection and attribution of group-level disparity in multi-stage
//! report → stop → action pipelines.
//!
//! The crate models incident handling as a five-stage chain per context
//! (group, criminality, report, stop, action), with criminality
//! independent of group given the context. On top of that model it
//! provides:
//!
//! - [`scm`] — exact closed-form probabilities: interventional action
//!   rates, innocent shares, the per-context disparity computed by two
//!   independent routes, and stage-parity / fairness checks.
//! - [`simulate`] — deterministic seeded sampling with per-block RNG
//!   substreams, the empirical oracle for everything in [`scm`].
//! - [`estimate`] — disparity estimates, standard errors, confidence
//!   intervals and the per-context significance decision.
//! - [`scenario`] — the limiting forms of the disparity under declared
//!   assumption regimes, their residual bounds, and the attribution of
//!   significant results to a pipeline stage.
//! - [`verify`] — brute-force enumeration oracles and the randomized
//!   identity sweep behind the `verify` subcommand.
//! - [`race_infer`] — group-composition imputation for calls that never
//!   became stops, via call-type → stop-type matching.
//! - [`ingest`] — CSV parsing, call/stop stitching, outcome
//!   thresholding and cell construction.
//! - [`report`] / [`pipeline`] — deterministic report assembly and the
//!   end-to-end analysis entry point.

pub mod error;
pub mod estimate;
pub mod ingest;
pub mod pipeline;
pub mod race_infer;
pub mod report;
pub mod scenario;
pub mod scm;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
