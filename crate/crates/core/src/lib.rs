//! Generation and ground-truth agnostic evaluation of local feature-importance
//! explanations for binary classifiers on tabular data.

pub mod axe;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod explainers;
pub mod io;
pub mod knn;
pub mod linalg;
pub mod metrics;
pub mod models;

pub use error::{Error, Result};
