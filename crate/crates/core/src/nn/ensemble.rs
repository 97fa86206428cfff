use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mlp::Mlp;
use crate::config::{EnsembleMode, TrainConfig};
use crate::constraint::f_cm;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hierarchy::DescendantMatrix;
use crate::metrics::MetricsReport;
use crate::par;
use crate::uncertainty::EnsembleOutput;

pub(crate) const SHUFFLE_STREAM: u64 = 0;
pub(crate) const DROPOUT_STREAM: u64 = 1;
pub(crate) const INIT_STREAM: u64 = 1 << 32;

/// A ChaCha stream keyed by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `M` networks whose thresholded mean output is the prediction.
///
/// In shared-trunk mode every member carries an identical copy of the trunk
/// and the trainer keeps the copies in lockstep.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub mode: EnsembleMode,
    pub trunk_frozen: bool,
    pub members: Vec<Mlp>,
}

impl Ensemble {
    pub fn init(n_in: usize, n_out: usize, cfg: &TrainConfig) -> Self {
        let m = cfg.n_members();
        let mut members: Vec<Mlp> = (0..m)
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, INIT_STREAM + i as u64);
                Mlp::init(n_in, cfg.hidden_dim, n_out, cfg.dropout, &mut rng)
            })
            .collect();
        if cfg.ensemble_mode == EnsembleMode::SharedTrunk {
            let trunk = members[0].trunk.clone();
            for member in &mut members[1..] {
                member.trunk = trunk.clone();
            }
        }
        Ensemble {
            mode: cfg.ensemble_mode,
            trunk_frozen: cfg.trunk_frozen,
            members,
        }
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn n_in(&self) -> usize {
        self.members[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.members[0].n_out()
    }

    /// Dropout-free member outputs, `M × B × N`.
    pub fn member_probs(&self, x: ArrayView2<'_, f64>) -> Result<Array3<f64>> {
        if x.ncols() != self.n_in() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, input has {}",
                self.n_in(),
                x.ncols()
            )));
        }
        let outs = par::map_slice(&self.members, |m| m.predict(x));
        let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
        Ok(ndarray::stack(Axis(0), &views).expect("members share output shape"))
    }

    pub fn mean_probs(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.member_probs(x)?.mean_axis(Axis(0)).expect("at least one member"))
    }

    /// `f_cm` applied to the ensemble mean.
    pub fn predict_constrained(&self, x: ArrayView2<'_, f64>, a: &DescendantMatrix) -> Result<Array2<f64>> {
        f_cm(self.mean_probs(x)?.view(), a)
    }

    pub fn evaluate(&self, d: &Dataset, threshold: f64) -> Result<MetricsReport> {
        if d.n_nodes() != self.n_out() {
            return Err(Error::DimensionMismatch(format!(
                "model predicts {} nodes, dataset has {}",
                self.n_out(),
                d.n_nodes()
            )));
        }
        let a = d.hierarchy.descendant_matrix();
        let probs = self.predict_constrained(d.features.view(), &a)?;
        MetricsReport::evaluate(d.hierarchy.node_ids(), probs.view(), &d.labels, threshold)
    }
}

/// `passes` stochastic forward passes of one model, as an ensemble sample.
pub fn mc_dropout_probs<R: Rng + ?Sized>(model: &Mlp, x: ArrayView2<'_, f64>, passes: usize, rng: &mut R) -> Result<EnsembleOutput> {
    let outs: Vec<Array2<f64>> = (0..passes).map(|_| model.forward(x, true, rng)).collect();
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    EnsembleOutput::from_members(stacked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::UncertaintySource;
    use ndarray::Array2;

    fn cfg() -> TrainConfig {
        TrainConfig {
            hidden_dim: 6,
            ensemble_size: 3,
            ..Default::default()
        }
    }

    #[test]
    fn members_differ_unless_shared() {
        let e = Ensemble::init(4, 2, &cfg());
        assert_eq!(e.n_members(), 3);
        assert_ne!(e.members[0].trunk, e.members[1].trunk);
        let shared = Ensemble::init(
            4,
            2,
            &TrainConfig {
                ensemble_mode: EnsembleMode::SharedTrunk,
                ..cfg()
            },
        );
        assert_eq!(shared.members[0].trunk, shared.members[2].trunk);
        assert_ne!(shared.members[0].head, shared.members[2].head);
        let dropout = Ensemble::init(
            4,
            2,
            &TrainConfig {
                uncertainty_source: UncertaintySource::Dropout,
                ..cfg()
            },
        );
        assert_eq!(dropout.n_members(), 1);
    }

    #[test]
    fn mean_is_member_average() {
        let e = Ensemble::init(4, 2, &cfg());
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let mean = e.mean_probs(x.view()).unwrap();
        let manual = e.members.iter().map(|m| m.predict(x.view())).fold(Array2::<f64>::zeros((5, 2)), |a, b| a + b) / 3.0;
        assert!((mean - manual).iter().all(|d| d.abs() < 1e-15));
        assert!(e.mean_probs(Array2::zeros((1, 3)).view()).is_err());
    }

    #[test]
    fn mc_dropout_spreads() {
        let m = Ensemble::init(4, 2, &cfg()).members.remove(0);
        let x = Array2::from_elem((2, 4), 0.7);
        let out = mc_dropout_probs(&m, x.view(), 8, &mut stream_rng(0, 5)).unwrap();
        assert_eq!(out.n_members(), 8);
        assert!(out.var.iter().any(|&v| v > 0.0));
    }
}
