//! Node-wise imbalance weights, the minimum-weight gate, and batch schedulers
//! that move the weighted objective towards the unweighted one.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{LabelMatrix, NodeFrequencies};

pub const DEFAULT_W0: f64 = 0.25;
pub const DEFAULT_SCHEDULER_K: f64 = 3.0;

/// What `N_classes` means in `w_i = N_obs / (N_classes * n_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NClassesMode {
    /// Number of nodes in the hierarchy.
    #[default]
    Nodes,
    /// Presence/absence, i.e. two.
    Binary,
}

impl FromStr for NClassesMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nodes" | "node-count" => Ok(Self::Nodes),
            "binary" => Ok(Self::Binary),
            _ => Err(Error::Config(format!("unknown n-classes mode `{s}`"))),
        }
    }
}

/// Raw and rescaled imbalance weights for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceWeights {
    pub raw: Array1<f64>,
    pub rescaled: Array1<f64>,
    pub w0: f64,
    pub mode: NClassesMode,
}

impl ImbalanceWeights {
    pub fn compute(freqs: &NodeFrequencies, mode: NClassesMode, w0: f64) -> Result<Self> {
        let raw = raw_weights(freqs, mode)?;
        let rescaled = rescale_weights(raw.view(), w0)?;
        Ok(ImbalanceWeights { raw, rescaled, w0, mode })
    }
}

/// Inverse-frequency weights. A node never observed gets the largest weight
/// among observed nodes.
pub fn raw_weights(freqs: &NodeFrequencies, mode: NClassesMode) -> Result<Array1<f64>> {
    if freqs.is_empty() || freqs.total_obs == 0 {
        return Err(Error::NotDefined("imbalance weighting of an empty dataset"));
    }
    let n_classes = match mode {
        NClassesMode::Nodes => freqs.len() as f64,
        NClassesMode::Binary => 2.0,
    };
    let n_obs = freqs.total_obs as f64;
    let mut w: Array1<f64> = freqs
        .counts
        .mapv(|c| if c == 0 { f64::NAN } else { n_obs / (n_classes * c as f64) });
    let max_seen = w.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    let unseen = w.iter().filter(|v| v.is_nan()).count();
    if unseen > 0 {
        log::warn!("{unseen} node(s) have no positive annotations; assigning the rarest-node weight");
        w.mapv_inplace(|v| if v.is_nan() { max_seen } else { v });
    }
    Ok(w)
}

/// `w0 + w * (w - w_min) / (w_max - w_min)`, with the normalized factor taken
/// as zero when every weight is equal.
pub fn rescale_weights(w: ArrayView1<'_, f64>, w0: f64) -> Result<Array1<f64>> {
    if w.is_empty() {
        return Err(Error::NotDefined("rescaling an empty weight vector"));
    }
    let w_min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let w_max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = w_max - w_min;
    Ok(w.mapv(|wi| {
        if range > 0.0 {
            w0 + wi * (wi - w_min) / range
        } else {
            w0
        }
    }))
}

/// Per-entry weights: `w̃_i` for positive annotations, 1 for negatives.
pub fn weight_matrix(rescaled: ArrayView1<'_, f64>, labels: &LabelMatrix) -> Result<Array2<f64>> {
    let lv = labels.view();
    if lv.ncols() != rescaled.len() {
        return Err(Error::shape(&[lv.nrows(), rescaled.len()], lv.shape()));
    }
    let mut out = Array2::ones(lv.dim());
    Zip::from(out.rows_mut()).and(lv.rows()).for_each(|mut o, y| {
        for ((o, &y), &w) in o.iter_mut().zip(y.iter()).zip(rescaled.iter()) {
            if y != 0 {
                *o = w;
            }
        }
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    #[default]
    None,
    Linear,
    #[serde(alias = "exponential")]
    Exp,
    #[serde(alias = "alternating")]
    Alt,
    Mixed,
}

impl FromStr for SchedulerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "linear" => Self::Linear,
            "exp" | "exponential" => Self::Exp,
            "alt" | "alternating" => Self::Alt,
            "mixed" => Self::Mixed,
            _ => return Err(Error::Config(format!("unknown scheduler `{s}`"))),
        })
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Linear => "linear",
            Self::Exp => "exp",
            Self::Alt => "alt",
            Self::Mixed => "mixed",
        })
    }
}

/// Within-epoch schedule of the imbalance weights. `t` is the batch index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerState {
    pub kind: SchedulerKind,
    pub k_exp: f64,
    pub lambda: f64,
    pub n_steps: usize,
    pub t: usize,
}

impl SchedulerState {
    pub fn new(kind: SchedulerKind, k_exp: f64, lambda: f64, n_steps: usize) -> Self {
        SchedulerState {
            kind,
            k_exp,
            lambda,
            n_steps,
            t: 0,
        }
    }

    /// Moves to the next batch, wrapping at the end of an epoch.
    pub fn advance(&mut self) {
        self.t += 1;
        if self.t >= self.n_steps {
            self.t = 0;
        }
    }

    /// Fraction of the distance from `w̃` to 1 covered at step `t`.
    fn progress(&self) -> f64 {
        if self.n_steps < 2 {
            return 0.0;
        }
        let last = (self.n_steps - 1) as f64;
        let t = self.t as f64;
        match self.kind {
            SchedulerKind::Linear => t / last,
            SchedulerKind::Exp => {
                if self.t == self.n_steps - 1 {
                    1.0
                } else {
                    (t / last).powf(self.k_exp)
                }
            }
            SchedulerKind::Alt => {
                if self.t % 2 == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            SchedulerKind::None | SchedulerKind::Mixed => 0.0,
        }
    }
}

/// Effective per-node weights at the scheduler's current step.
pub fn scheduled_weights(rescaled: ArrayView1<'_, f64>, s: &SchedulerState) -> Result<Array1<f64>> {
    if s.n_steps == 0 || s.t >= s.n_steps {
        return Err(Error::Config(format!("scheduler step {} outside 0..{}", s.t, s.n_steps)));
    }
    let frac = s.progress();
    if frac == 1.0 {
        return Ok(Array1::ones(rescaled.len()));
    }
    Ok(rescaled.mapv(|w| w + frac * (1.0 - w)))
}

/// `lambda * weighted + (1 - lambda) * unweighted`.
pub fn mixed_loss(weighted: ArrayView2<'_, f64>, unweighted: ArrayView2<'_, f64>, lambda: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if weighted.dim() != unweighted.dim() {
        return Err(Error::shape(weighted.shape(), unweighted.shape()));
    }
    Ok(Zip::from(&weighted)
        .and(&unweighted)
        .map_collect(|&a, &b| lambda * a + (1.0 - lambda) * b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn freqs(counts: &[usize], total: usize) -> NodeFrequencies {
        NodeFrequencies::from_counts(Array1::from(counts.to_vec()), total)
    }

    #[test]
    fn raw_weight_examples() {
        let w = raw_weights(&freqs(&[100, 50, 40, 10], 100), NClassesMode::Nodes).unwrap();
        assert_eq!(w.to_vec(), vec![0.25, 0.5, 0.625, 2.5]);
        let w = raw_weights(&freqs(&[30, 30, 30], 30), NClassesMode::Nodes).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = raw_weights(&freqs(&[5, 5], 10), NClassesMode::Binary).unwrap();
        assert_eq!(w.to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn unseen_node_gets_rarest_weight() {
        let w = raw_weights(&freqs(&[10, 2, 0], 10), NClassesMode::Nodes).unwrap();
        assert_eq!(w[2], w[1]);
        assert!(raw_weights(&freqs(&[], 0), NClassesMode::Nodes).is_err());
    }

    #[test]
    fn rescale_examples() {
        let w = rescale_weights(array![0.25, 0.5, 0.625, 2.5].view(), 0.25).unwrap();
        let expect = [0.25, 0.30556, 0.35417, 2.75];
        for (a, b) in w.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-5);
        }
        let flat = rescale_weights(array![0.7, 0.7].view(), 0.25).unwrap();
        assert_eq!(flat.to_vec(), vec![0.25, 0.25]);
        let w = rescale_weights(array![0.1, 4.0].view(), 0.3).unwrap();
        assert_eq!(w[1], 0.3 + 4.0);
    }

    #[test]
    fn weight_matrix_examples() {
        let wt = array![0.25, 2.75];
        let m = weight_matrix(wt.view(), &LabelMatrix::from_closed(array![[1u8, 0], [0, 0], [1, 1]])).unwrap();
        assert_eq!(m, array![[0.25, 1.0], [1.0, 1.0], [0.25, 2.75]]);
    }

    #[test]
    fn exponential_schedule_values() {
        let wt = array![0.4];
        let expect = [0.4, 0.42222, 0.57778, 1.0];
        for (t, e) in expect.iter().enumerate() {
            let s = SchedulerState { t, ..SchedulerState::new(SchedulerKind::Exp, 3.0, 1.0, 4) };
            assert_abs_diff_eq!(scheduled_weights(wt.view(), &s).unwrap()[0], *e, epsilon = 1e-5);
        }
    }

    #[test]
    fn alternating_and_none() {
        let wt = array![0.3, 2.0];
        let mut s = SchedulerState::new(SchedulerKind::Alt, 3.0, 1.0, 5);
        assert_eq!(scheduled_weights(wt.view(), &s).unwrap(), wt);
        s.advance();
        assert_eq!(scheduled_weights(wt.view(), &s).unwrap(), array![1.0, 1.0]);
        let s = SchedulerState { t: 3, ..SchedulerState::new(SchedulerKind::None, 3.0, 1.0, 5) };
        assert_eq!(scheduled_weights(wt.view(), &s).unwrap(), wt);
        let s = SchedulerState { t: 5, ..s };
        assert!(scheduled_weights(wt.view(), &s).is_err());
    }

    #[test]
    fn advance_wraps() {
        let mut s = SchedulerState::new(SchedulerKind::Linear, 3.0, 1.0, 2);
        s.advance();
        assert_eq!(s.t, 1);
        s.advance();
        assert_eq!(s.t, 0);
    }

    #[test]
    fn mixed_loss_examples() {
        let a = array![[2.0]];
        let b = array![[1.0]];
        assert_eq!(mixed_loss(a.view(), b.view(), 1.0).unwrap(), a);
        assert_eq!(mixed_loss(a.view(), b.view(), 0.0).unwrap(), b);
        assert_eq!(mixed_loss(a.view(), b.view(), 0.5).unwrap(), array![[1.5]]);
        assert!(mixed_loss(a.view(), b.view(), 1.5).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_frequency(counts in proptest::collection::vec(1usize..1000, 2..40)) {
            let total = *counts.iter().max().unwrap();
            let f = freqs(&counts, total);
            let w = ImbalanceWeights::compute(&f, NClassesMode::Nodes, DEFAULT_W0).unwrap();
            let min = w.rescaled.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min, DEFAULT_W0);
            for i in 0..counts.len() {
                for j in 0..counts.len() {
                    if counts[i] < counts[j] {
                        prop_assert!(w.rescaled[i] > w.rescaled[j]);
                    }
                }
            }
        }

        #[test]
        fn schedule_endpoints_and_monotone(
            w in proptest::collection::vec(0.0f64..5.0, 1..10),
            n_steps in 2usize..64,
            k in 0.1f64..6.0,
        ) {
            let wt = Array1::from(w);
            for kind in [SchedulerKind::Linear, SchedulerKind::Exp] {
                let mut s = SchedulerState::new(kind, k, 1.0, n_steps);
                prop_assert_eq!(scheduled_weights(wt.view(), &s).unwrap(), wt.clone());
                let mut prev = wt.clone();
                for t in 0..n_steps {
                    s.t = t;
                    let cur = scheduled_weights(wt.view(), &s).unwrap();
                    for i in 0..wt.len() {
                        if wt[i] < 1.0 {
                            prop_assert!(cur[i] >= prev[i]);
                        }
                    }
                    prev = cur;
                }
                prop_assert!(prev.iter().all(|&v| v == 1.0));
            }
        }
    }
}
