//! The combined objective: `mean(weights ⊙ focal ⊙ L_MC)`.

use ndarray::{Array2, ArrayView2, Zip};

use crate::constraint::{bce, bce_grad, mcm_forward};
use crate::error::{Error, Result};
use crate::hierarchy::{DescendantMatrix, LabelMatrix};

fn check(raw: ArrayView2<'_, f64>, weights: ArrayView2<'_, f64>, focal: ArrayView2<'_, f64>) -> Result<()> {
    if weights.dim() != raw.dim() {
        return Err(Error::shape(raw.shape(), weights.shape()));
    }
    if focal.dim() != raw.dim() {
        return Err(Error::shape(raw.shape(), focal.shape()));
    }
    Ok(())
}

/// Weighted max-constraint loss, averaged over every batch × node entry.
pub fn weighted_loss(
    raw: ArrayView2<'_, f64>,
    labels: &LabelMatrix,
    a: &DescendantMatrix,
    weights: ArrayView2<'_, f64>,
    focal: ArrayView2<'_, f64>,
) -> Result<f64> {
    loss_and_grad(raw, labels, a, weights, focal).map(|(l, _)| l)
}

/// Loss together with its gradient with respect to the raw probabilities.
/// `weights` and `focal` are constants.
pub fn loss_and_grad(
    raw: ArrayView2<'_, f64>,
    labels: &LabelMatrix,
    a: &DescendantMatrix,
    weights: ArrayView2<'_, f64>,
    focal: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>)> {
    check(raw, weights, focal)?;
    let out = mcm_forward(raw, labels, a)?;
    let scale = 1.0 / raw.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad_tilde = Array2::zeros(raw.dim());
    Zip::from(&mut grad_tilde)
        .and(&out.y_tilde)
        .and(&labels.view())
        .and(&weights)
        .and(&focal)
        .for_each(|g, &p, &y, &w, &f| {
            let y = f64::from(y);
            let c = w * f * scale;
            total += c * bce(p, y);
            *g = c * bce_grad(p, y);
        });
    Ok((total, out.backward(labels, grad_tilde.view())))
}

/// Chain rule through the output sigmoid: `d/dz = d/dp · p(1-p)`.
pub fn probs_to_logit_grad(probs: ArrayView2<'_, f64>, grad_probs: ArrayView2<'_, f64>) -> Array2<f64> {
    Zip::from(&probs).and(&grad_probs).map_collect(|&p, &g| g * p * (1.0 - p))
}
