//! Hierarchical multi-label classification with node-wise imbalance weighting
//! and ensemble-uncertainty focal weighting on top of the max-constraint loss.

pub mod cli;
pub mod config;
pub mod constraint;
pub mod data;
pub mod error;
pub mod hierarchy;
pub mod imbalance;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod resample;
pub mod uncertainty;

pub use error::{Error, ParseError, ParseErrorKind, Result};
pub use hierarchy::{DescendantMatrix, Hierarchy, LabelMatrix, NodeFrequencies};
