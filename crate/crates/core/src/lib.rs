//! Parametric portfolio policies estimated under a CRRA loss of tunable
//! curvature, evaluated out of sample with a cross-sectional bootstrap.
//!
//! The pipeline runs [`panel`] (ingest, filter, standardize) into
//! [`policy`] (annual re-estimation of the characteristic tilts), with
//! [`bootstrap`] resampling the panel and [`evaluate`] / [`factors`]
//! summarizing the out-of-sample paths. [`synthgen`] produces panels with a
//! known data-generating process.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod config;
pub mod evaluate;
pub mod factors;
pub mod month;
pub mod panel;
pub mod parallel;
pub mod pipeline;
pub mod policy;
pub mod report;
pub mod selftest;
pub mod synthgen;

pub use month::Month;
