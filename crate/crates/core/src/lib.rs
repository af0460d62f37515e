//! County-level panel toolkit: ingest AFV registrations, census covariates,
//! and pollutant readings; derive a PCA air-quality score; fit and query a
//! linear model of that score.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aqi_pca;
pub mod canonical;
pub mod fixtures;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod stats;
pub mod synth;
