//! Training configuration and its validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imbalance::{NClassesMode, SchedulerKind, DEFAULT_SCHEDULER_K, DEFAULT_W0};
use crate::uncertainty::{FocalKind, DEFAULT_FOCAL_K, DEFAULT_U0};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintySource {
    /// Spread across independently trained members.
    #[default]
    Ensemble,
    /// Repeated stochastic passes of a single model.
    Dropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocalInput {
    /// Member sigmoid outputs before the hierarchy constraint.
    #[default]
    Raw,
    /// Member outputs after the hierarchy constraint.
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    #[default]
    Independent,
    /// One trunk shared by all members, one output head each.
    SharedTrunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMethod {
    #[default]
    None,
    Lpros,
    HrosPd,
}

macro_rules! kebab_enum {
    ($ty:ty { $($name:literal => $var:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($var),)+
                    _ => Err(Error::Config(format!("unknown value `{}` for {}", s, stringify!($ty)))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $var { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

kebab_enum!(UncertaintySource { "ensemble" => UncertaintySource::Ensemble, "dropout" => UncertaintySource::Dropout });
kebab_enum!(FocalInput { "raw" => FocalInput::Raw, "constrained" => FocalInput::Constrained });
kebab_enum!(EnsembleMode { "independent" => EnsembleMode::Independent, "shared-trunk" => EnsembleMode::SharedTrunk });
kebab_enum!(ResampleMethod { "none" => ResampleMethod::None, "lpros" => ResampleMethod::Lpros, "hros-pd" => ResampleMethod::HrosPd });

/// Everything that determines a training run. Defaults follow the
/// gene-product settings: batch size 4, learning rate 1e-4, dropout 0.7,
/// gates of 0.25, focal exponent 1 and ten ensemble members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub ensemble_size: usize,
    pub ensemble_mode: EnsembleMode,
    pub trunk_frozen: bool,
    /// Apply node-wise imbalance weights; when false every weight is 1.
    pub imbalance: bool,
    pub w0: f64,
    pub n_classes_mode: NClassesMode,
    pub scheduler: SchedulerKind,
    pub scheduler_k: f64,
    pub lambda: f64,
    pub focal: FocalKind,
    pub u0: f64,
    pub focal_k: f64,
    pub uncertainty_source: UncertaintySource,
    pub focal_input: FocalInput,
    pub resample: ResampleMethod,
    pub resample_pct: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 20,
            batch_size: 4,
            hidden_dim: 128,
            dropout: 0.7,
            ensemble_size: 10,
            ensemble_mode: EnsembleMode::Independent,
            trunk_frozen: false,
            imbalance: true,
            w0: DEFAULT_W0,
            n_classes_mode: NClassesMode::Nodes,
            scheduler: SchedulerKind::None,
            scheduler_k: DEFAULT_SCHEDULER_K,
            lambda: 0.5,
            focal: FocalKind::None,
            u0: DEFAULT_U0,
            focal_k: DEFAULT_FOCAL_K,
            uncertainty_source: UncertaintySource::Ensemble,
            focal_input: FocalInput::Raw,
            resample: ResampleMethod::None,
            resample_pct: 0.25,
            threshold: 0.5,
            seed: 0,
        }
    }
}

/// Published settings for the gene-product benchmarks: hidden size and epoch
/// count for the FUN and GO variants. All use a learning rate of 1e-4.
const PRESETS: [(&str, [usize; 2], [usize; 2]); 8] = [
    ("cellcycle", [500, 1000], [106, 62]),
    ("derisi", [500, 500], [67, 91]),
    ("eisen", [500, 500], [110, 123]),
    ("expr", [1250, 4000], [20, 70]),
    ("gasch1", [1000, 500], [42, 122]),
    ("gasch2", [500, 500], [123, 177]),
    ("seq", [2000, 9000], [13, 45]),
    ("spo", [250, 500], [115, 103]),
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_dim == 0 || self.ensemble_size == 0 {
            return bad("epochs, batch-size, hidden-dim and ensemble-size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.w0 >= 0.0 && self.w0.is_finite()) {
            return bad(format!("w0 must be non-negative, got {}", self.w0));
        }
        if !(self.u0 >= 0.0 && self.u0.is_finite()) {
            return bad(format!("u0 must be non-negative, got {}", self.u0));
        }
        if !(self.focal_k > 0.0 && self.focal_k.is_finite()) {
            return bad(format!("focal-k must be positive, got {}", self.focal_k));
        }
        if !(self.scheduler_k > 0.0 && self.scheduler_k.is_finite()) {
            return bad(format!("scheduler-k must be positive, got {}", self.scheduler_k));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if !(self.resample_pct > 0.0 && self.resample_pct.is_finite()) {
            return bad(format!("resample-pct must be positive, got {}", self.resample_pct));
        }
        if self.focal.min_members() > self.ensemble_size {
            return bad(format!(
                "focal `{}` needs at least {} ensemble members or dropout passes",
                self.focal,
                self.focal.min_members()
            ));
        }
        if self.uncertainty_source == UncertaintySource::Dropout && self.focal != FocalKind::None && self.dropout == 0.0 {
            return bad("dropout uncertainty needs a positive dropout rate".into());
        }
        Ok(())
    }

    /// Members actually trained: one model when uncertainty comes from dropout.
    pub fn n_members(&self) -> usize {
        match self.uncertainty_source {
            UncertaintySource::Ensemble => self.ensemble_size,
            UncertaintySource::Dropout => 1,
        }
    }

    /// Defaults for a named benchmark such as `cellcycle-fun` or `seq-go`.
    pub fn preset(name: &str) -> Result<Self> {
        let (dataset, variant) = name
            .rsplit_once('-')
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`; expected e.g. `cellcycle-fun`")))?;
        let col = match variant {
            "fun" => 0,
            "go" => 1,
            _ => return Err(Error::Config(format!("unknown preset variant `{variant}`; expected fun or go"))),
        };
        let (_, hidden, epochs) = PRESETS
            .iter()
            .find(|(d, ..)| *d == dataset)
            .ok_or_else(|| Error::Config(format!("unknown preset dataset `{dataset}`")))?;
        Ok(TrainConfig {
            hidden_dim: hidden[col],
            epochs: epochs[col],
            lr: 1e-4,
            ..Default::default()
        })
    }

    pub fn preset_names() -> Vec<String> {
        PRESETS
            .iter()
            .flat_map(|(d, ..)| [format!("{d}-fun"), format!("{d}-go")])
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}
