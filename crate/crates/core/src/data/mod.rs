//! Datasets: the ARFF subset, the native binary format, DAG sidecars and the
//! synthetic long-tail generator.

pub mod arff;
pub mod native;
pub mod synth;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LabelMatrix, NodeFrequencies};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Valid, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "valid" => Ok(SplitTag::Valid),
            "test" => Ok(SplitTag::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

/// Features and ancestor-closed labels over a shared hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: LabelMatrix,
    pub hierarchy: Arc<Hierarchy>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: LabelMatrix, hierarchy: Arc<Hierarchy>, split: SplitTag) -> Result<Self> {
        if features.nrows() != labels.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} label rows",
                features.nrows(),
                labels.nrows()
            )));
        }
        if labels.ncols() != hierarchy.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} label columns but {} hierarchy nodes",
                labels.ncols(),
                hierarchy.len()
            )));
        }
        Ok(Dataset {
            features,
            labels,
            hierarchy,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_nodes(&self) -> usize {
        self.hierarchy.len()
    }

    /// Rows in the given order; indices may repeat.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: self.labels.select_rows(rows),
            hierarchy: Arc::clone(&self.hierarchy),
            split: self.split,
        }
    }

    pub fn frequencies(&self) -> NodeFrequencies {
        NodeFrequencies::from_labels(&self.labels)
    }

    /// Replaces the hierarchy, e.g. after adding DAG edges, and re-closes labels.
    pub fn with_hierarchy(&self, hierarchy: Arc<Hierarchy>) -> Result<Dataset> {
        if hierarchy.node_ids() != self.hierarchy.node_ids() {
            return Err(Error::DimensionMismatch("hierarchies declare different nodes".into()));
        }
        let labels = hierarchy.close_labels(self.labels.view())?;
        Dataset::new(self.features.clone(), labels, hierarchy, self.split)
    }
}

/// Train, validation and test sets over one hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, tag: SplitTag) -> &Dataset {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Valid => &self.valid,
            SplitTag::Test => &self.test,
        }
    }
}

/// Adds the edges of a sidecar file to `h`.
pub fn load_dag_sidecar(path: &Path, h: &Hierarchy) -> Result<Hierarchy> {
    let text = std::fs::read_to_string(path)?;
    h.with_sidecar(&text)
}
