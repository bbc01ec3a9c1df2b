//! Conditional independence tests for embedded features with confounders.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cmiknn;
pub mod confounder;
pub mod cpt_kpc;
pub mod data;
pub mod embeddings;
pub mod fcit;
pub mod forest;
pub mod error;
pub mod kernels;
pub mod knn;
pub mod linalg;
pub mod method;
pub mod rcot;
pub mod seed;
pub mod stats;
pub mod wald;

pub use data::{ColumnKind, ColumnMeta, FeatureSample, Method, Params, TestOutcome};
pub use error::{Error, Result};
