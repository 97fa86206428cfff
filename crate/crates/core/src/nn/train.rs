use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, MlpAdam};
use super::ensemble::{stream_rng, Ensemble, DROPOUT_STREAM, SHUFFLE_STREAM};
use super::loss::{loss_and_grad, probs_to_logit_grad};
use super::mlp::{Dense, ForwardCache, Mlp, MlpGrads};
use crate::config::{EnsembleMode, FocalInput, ResampleMethod, TrainConfig, UncertaintySource};
use crate::constraint::f_cm;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hierarchy::{DescendantMatrix, LabelMatrix};
use crate::imbalance::{mixed_loss, scheduled_weights, weight_matrix, ImbalanceWeights, SchedulerKind, SchedulerState};
use crate::metrics::MetricsReport;
use crate::par;
use crate::resample::{hros_pd, lpros, IrTarget, ResamplePlan};
use crate::uncertainty::{focal_weights, uncertainty, EnsembleOutput, FocalKind};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the members' mean loss.
    pub train_loss: f64,
    pub valid: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub ensemble: Ensemble,
    pub history: Vec<EpochRecord>,
    /// `None` when imbalance weighting is off.
    pub weights: Option<ImbalanceWeights>,
    pub plan: Option<ResamplePlan>,
}

/// Per-member losses and gradients for one batch, with the focal weights used.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub losses: Vec<f64>,
    pub grads: Vec<MlpGrads>,
    pub focal: Array2<f64>,
}

/// Focal factors `u0 + U^k` from a detached `M × B × N` sample. All ones when
/// focal weighting is off.
pub fn focal_matrix(member_probs: Array3<f64>, a: &DescendantMatrix, cfg: &TrainConfig) -> Result<Array2<f64>> {
    let (_, b, n) = member_probs.dim();
    if cfg.focal == FocalKind::None {
        return Ok(Array2::ones((b, n)));
    }
    let probs = match cfg.focal_input {
        FocalInput::Raw => member_probs,
        FocalInput::Constrained => {
            let mut out = member_probs;
            for mut slice in out.axis_iter_mut(Axis(0)) {
                let c = f_cm(slice.view(), a)?;
                slice.assign(&c);
            }
            out
        }
    };
    let e = EnsembleOutput::from_members(probs)?;
    Ok(focal_weights(uncertainty(&e, cfg.focal)?, cfg.u0, cfg.focal_k)?.combined)
}

/// Loss and parameter gradients of one member given constant weights.
pub fn member_gradients(
    model: &Mlp,
    cache: &ForwardCache,
    labels: &LabelMatrix,
    a: &DescendantMatrix,
    weights: ArrayView2<'_, f64>,
    focal: ArrayView2<'_, f64>,
) -> Result<(f64, MlpGrads)> {
    let (loss, g) = loss_and_grad(cache.probs.view(), labels, a, weights, focal)?;
    let gz = probs_to_logit_grad(cache.probs.view(), g.view());
    Ok((loss, model.backward(cache, gz.view())))
}

fn average_dense<'a>(layers: impl Iterator<Item = &'a Dense>, n: usize) -> Dense {
    let mut it = layers;
    let mut acc = it.next().expect("at least one member").clone();
    for d in it {
        acc.add_scaled(d, 1.0);
    }
    acc.w /= n as f64;
    acc.b /= n as f64;
    acc
}

/// Forward, focal assembly and backward for every member on one batch.
///
/// `rngs` holds one dropout stream per member. With dropout uncertainty the
/// single model runs `cfg.ensemble_size` passes, the first of which carries
/// the gradient.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    ens: &Ensemble,
    rngs: &mut [ChaCha8Rng],
    x: ArrayView2<'_, f64>,
    labels: &LabelMatrix,
    a: &DescendantMatrix,
    weights: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
    dropout_on: bool,
) -> Result<BatchGrads> {
    let caches = par::zip_map_mut(rngs, &ens.members, |_, rng, m| m.forward_cached(x, dropout_on, rng));
    let focal = if cfg.focal == FocalKind::None {
        Array2::ones(caches[0].probs.raw_dim())
    } else {
        let mut sample: Vec<Array2<f64>> = caches.iter().map(|c| c.probs.clone()).collect();
        if cfg.uncertainty_source == UncertaintySource::Dropout {
            for _ in 1..cfg.ensemble_size {
                sample.push(ens.members[0].forward(x, dropout_on, &mut rngs[0]));
            }
        }
        let views: Vec<_> = sample.iter().map(|s| s.view()).collect();
        let stacked = ndarray::stack(Axis(0), &views).expect("members share output shape");
        focal_matrix(stacked, a, cfg)?
    };
    let results = par::map_range(ens.n_members(), |m| {
        member_gradients(&ens.members[m], &caches[m], labels, a, weights, focal.view())
    });
    let mut losses = Vec::with_capacity(results.len());
    let mut grads = Vec::with_capacity(results.len());
    for r in results {
        let (l, g) = r?;
        losses.push(l);
        grads.push(g);
    }
    if ens.mode == EnsembleMode::SharedTrunk && grads.len() > 1 {
        let n = grads.len();
        let input = average_dense(grads.iter().map(|g| &g.input), n);
        let hidden = average_dense(grads.iter().map(|g| &g.hidden), n);
        for g in &mut grads {
            g.input = input.clone();
            g.hidden = hidden.clone();
        }
    }
    Ok(BatchGrads { losses, grads, focal })
}

/// Per-entry imbalance weights for the scheduler's current step.
pub fn batch_weights(
    imb: Option<&ImbalanceWeights>,
    sched: &SchedulerState,
    labels: &LabelMatrix,
) -> Result<Array2<f64>> {
    let Some(imb) = imb else {
        return Ok(Array2::ones((labels.nrows(), labels.ncols())));
    };
    let w = scheduled_weights(imb.rescaled.view(), sched)?;
    let m = weight_matrix(w.view(), labels)?;
    if sched.kind == SchedulerKind::Mixed {
        let ones = Array2::ones(m.raw_dim());
        return mixed_loss(m.view(), ones.view(), sched.lambda);
    }
    Ok(m)
}

/// Applies the configured oversampling to a training set.
pub fn resample_train(train: &Dataset, cfg: &TrainConfig) -> Result<Option<ResamplePlan>> {
    Ok(match cfg.resample {
        ResampleMethod::None => None,
        ResampleMethod::Lpros => Some(lpros(&train.labels, cfg.resample_pct, cfg.seed)?),
        ResampleMethod::HrosPd => Some(hros_pd(&train.labels, &train.hierarchy, IrTarget::Initial, cfg.seed)?),
    })
}

/// Trains an ensemble on `train`, scoring `valid` after every epoch.
///
/// Imbalance weights come from the training frequencies after resampling.
/// Every member sees the same shuffled batch sequence; focal weights are
/// recomputed per batch from all members' current outputs.
pub fn train(train: &Dataset, valid: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::DimensionMismatch("training set has no rows".into()));
    }
    if let Some(v) = valid {
        if v.hierarchy.node_ids() != train.hierarchy.node_ids() || v.n_features() != train.n_features() {
            return Err(Error::DimensionMismatch("validation set does not match the training set".into()));
        }
    }
    let plan = resample_train(train, cfg)?;
    let data = match &plan {
        Some(p) => train.select_rows(&p.index_multiset),
        None => train.clone(),
    };
    let weights = if cfg.imbalance {
        Some(ImbalanceWeights::compute(&data.frequencies(), cfg.n_classes_mode, cfg.w0)?)
    } else {
        None
    };
    let a = data.hierarchy.descendant_matrix();
    let mut ens = Ensemble::init(data.n_features(), data.n_nodes(), cfg);
    let opt = Adam::new(cfg.lr);
    let mut states: Vec<MlpAdam> = ens.members.iter().map(MlpAdam::new).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..ens.n_members())
        .map(|m| stream_rng(cfg.seed, DROPOUT_STREAM + m as u64))
        .collect();
    let mut shuffle = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let n = data.len();
    let n_batches = n.div_ceil(cfg.batch_size);
    let mut sched = SchedulerState::new(cfg.scheduler, cfg.scheduler_k, cfg.lambda, n_batches);
    let train_trunk = !cfg.trunk_frozen;
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.features.select(Axis(0), rows);
            let labels = data.labels.select_rows(rows);
            let w = batch_weights(weights.as_ref(), &sched, &labels)?;
            let step = batch_gradients(&ens, &mut rngs, x.view(), &labels, &a, w.view(), cfg, true)?;
            let loss = step.losses.iter().sum::<f64>() / step.losses.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += loss;
            let mut pairs: Vec<(&mut Mlp, &mut MlpAdam)> = ens.members.iter_mut().zip(states.iter_mut()).collect();
            par::zip_map_mut(&mut pairs, &step.grads, |_, (m, s), g| s.step(&opt, m, g, train_trunk));
            sched.advance();
        }
        let valid_report = valid.map(|v| ens.evaluate(v, cfg.threshold)).transpose()?;
        let train_loss = total / n_batches as f64;
        match &valid_report {
            Some(r) => log::info!(
                "epoch {}: loss {:.6}, valid macro F1 {:.4}",
                epoch + 1,
                train_loss,
                r.macro_avg.f1
            ),
            None => log::info!("epoch {}: loss {:.6}", epoch + 1, train_loss),
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            valid: valid_report,
        });
    }
    Ok(TrainOutcome {
        ensemble: ens,
        history,
        weights,
        plan,
    })
}

/// Flat copy of every parameter, in [`Mlp::layers`] order.
pub fn flatten_params(model: &Mlp) -> Array1<f64> {
    model
        .layers()
        .iter()
        .flat_map(|d| d.w.iter().chain(d.b.iter()).copied().collect::<Vec<_>>())
        .collect()
}

pub fn flatten_grads(g: &MlpGrads) -> Array1<f64> {
    g.layers()
        .iter()
        .flat_map(|d| d.w.iter().chain(d.b.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Mutable access to the `k`-th parameter in [`flatten_params`] order.
pub fn param_mut(model: &mut Mlp, mut k: usize) -> &mut f64 {
    for d in model.layers_mut() {
        let (nw, nb) = (d.w.len(), d.b.len());
        if k < nw {
            return d.w.iter_mut().nth(k).expect("in range");
        }
        k -= nw;
        if k < nb {
            return &mut d.b[k];
        }
        k -= nb;
    }
    panic!("parameter index out of range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth, SynthSpec};
    use crate::hierarchy::Hierarchy;
    use std::sync::Arc;

    fn tiny() -> crate::data::Splits {
        synth(&SynthSpec {
            n_nodes: 12,
            max_depth: 3,
            n_obs: 40,
            feature_dim: 6,
            ..Default::default()
        })
        .unwrap()
    }

    fn quick(cfg: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            hidden_dim: 8,
            ensemble_size: 3,
            lr: 1e-2,
            ..cfg
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let s = tiny();
        let cfg = quick(TrainConfig {
            focal: FocalKind::Gmu,
            scheduler: SchedulerKind::Exp,
            ..Default::default()
        });
        let a = train(&s.train, Some(&s.valid), &cfg).unwrap();
        let b = train(&s.train, Some(&s.valid), &cfg).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn all_variants_run() {
        let s = tiny();
        let variants = [
            TrainConfig {
                imbalance: false,
                ensemble_size: 1,
                ..Default::default()
            },
            TrainConfig {
                ensemble_mode: EnsembleMode::SharedTrunk,
                focal: FocalKind::EpJs,
                focal_input: FocalInput::Constrained,
                ..Default::default()
            },
            TrainConfig {
                ensemble_mode: EnsembleMode::SharedTrunk,
                trunk_frozen: true,
                scheduler: SchedulerKind::Mixed,
                ..Default::default()
            },
            TrainConfig {
                uncertainty_source: UncertaintySource::Dropout,
                focal: FocalKind::EpKl,
                resample: ResampleMethod::Lpros,
                ..Default::default()
            },
            TrainConfig {
                resample: ResampleMethod::HrosPd,
                scheduler: SchedulerKind::Alt,
                focal: FocalKind::Bbma,
                ..Default::default()
            },
        ];
        for cfg in variants {
            let out = train(&s.train, Some(&s.valid), &quick(cfg.clone())).unwrap();
            assert!(out.history.iter().all(|h| h.train_loss.is_finite() && h.train_loss >= 0.0));
            if cfg.ensemble_mode == EnsembleMode::SharedTrunk {
                let t0 = &out.ensemble.members[0].trunk;
                assert!(out.ensemble.members.iter().all(|m| &m.trunk == t0));
            }
            if cfg.trunk_frozen {
                let fresh = Ensemble::init(s.train.n_features(), s.train.n_nodes(), &quick(cfg.clone()));
                assert_eq!(fresh.members[0].trunk, out.ensemble.members[0].trunk);
            }
            assert_eq!(out.plan.is_some(), cfg.resample != ResampleMethod::None);
        }
    }

    #[test]
    fn loss_decreases_on_small_problem() {
        let s = tiny();
        let cfg = TrainConfig {
            epochs: 30,
            dropout: 0.0,
            ..quick(Default::default())
        };
        let out = train(&s.train, None, &cfg).unwrap();
        assert!(out.history.last().unwrap().train_loss < out.history[0].train_loss);
    }

    #[test]
    fn ensemble_prediction_respects_hierarchy() {
        let s = tiny();
        let out = train(&s.train, None, &quick(Default::default())).unwrap();
        let a = s.test.hierarchy.descendant_matrix();
        let p = out.ensemble.predict_constrained(s.test.features.view(), &a).unwrap();
        for &(parent, child) in s.test.hierarchy.edges() {
            for r in 0..p.nrows() {
                assert!(p[[r, parent]] >= p[[r, child]]);
            }
        }
    }

    #[test]
    fn rejects_mismatched_validation() {
        let s = tiny();
        let h = Arc::new(Hierarchy::build::<&str>(&["x"], &[]).unwrap());
        let labels = h.close_labels(Array2::zeros((1, 1)).view()).unwrap();
        let other = Dataset::new(Array2::zeros((1, 6)), labels, h, crate::data::SplitTag::Valid).unwrap();
        assert!(train(&s.train, Some(&other), &quick(Default::default())).is_err());
    }

    #[test]
    fn param_indexing_matches_flatten() {
        let mut m = Mlp::init(3, 4, 2, 0.0, &mut stream_rng(0, 0));
        let flat = flatten_params(&m);
        for k in [0, 5, 12, flat.len() - 1] {
            assert_eq!(*param_mut(&mut m, k), flat[k]);
        }
    }
}
