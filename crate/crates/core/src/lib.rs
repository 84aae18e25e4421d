//! Fault classification for multivariate process time series, with
//! per-decision feature attribution.
//!
//! The crate is organised as a pipeline:
//!
//! - [`autodiff`] — dense f64 tensors and a static computation graph with
//!   reverse-mode differentiation, enough for LSTM training and
//!   gradient-w.r.t.-input extraction.
//! - [`model`] — an LSTM sequence classifier over fixed-length windows of
//!   process variables: training (BPTT + Adam), inference, persistence and
//!   input gradients.
//! - [`procsim`] — labeled fault datasets, either from a built-in
//!   PI-controlled reactor/separator process with four fault archetypes
//!   (step, random, slow drift, sticking) or ingested from TEP-style CSVs.
//! - [`attribution`] — integrated gradients and Shapley values (exact
//!   enumeration and antithetic permutation sampling) over sensor-channel
//!   features.
//! - [`analysis`] — post-fault aggregation, z-score normalization, top-k
//!   extraction, method agreement and fault-to-subsystem localization.
//! - [`report`] — static SVG/CSV artifacts: heatmaps, score tables,
//!   per-variable trace plots, and a hashed artifact manifest.
//! - [`pipeline`] — the experiment config plus the stage functions the CLI
//!   wraps (simulate/ingest/train/attribute/analyze/report/repro).

pub mod analysis;
pub mod attribution;
pub mod autodiff;
pub mod model;
pub mod pipeline;
pub mod procsim;
pub mod report;
