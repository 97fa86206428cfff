//! Max-constraint output function and the max-constraint loss.
//!
//! `f_cm` replaces each node's probability with the maximum over its
//! descendant set. During training the prediction for positive nodes only
//! sees positive descendants (`y_b`), while negative nodes see everything
//! (`y_a`):
//!
//! ```text
//! y_a     = f_cm(p)
//! y_b     = f_cm(y ⊙ p)
//! y_tilde = (1 - y) ⊙ y_a + y_b
//! loss    = bce(y_tilde, y)          (unreduced)
//! ```

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::hierarchy::{DescendantMatrix, LabelMatrix};
use crate::par;

/// Probability clamp used by every cross-entropy in the crate.
pub const BCE_EPS: f64 = 1e-7;

fn check_width(rows: usize, cols: usize, a: &DescendantMatrix) -> Result<()> {
    if cols != a.len() {
        return Err(Error::shape(&[rows, a.len()], &[rows, cols]));
    }
    Ok(())
}

/// Row-wise max over descendant sets, also returning the winning column.
/// Ties go to the lowest index.
pub fn f_cm_with_argmax(probs: ArrayView2<'_, f64>, a: &DescendantMatrix) -> Result<(Array2<f64>, Array2<usize>)> {
    check_width(probs.nrows(), probs.ncols(), a)?;
    let (b, n) = probs.dim();
    let rows = par::map_range(b, |r| {
        let row = probs.row(r);
        let mut vals = Vec::with_capacity(n);
        let mut args = Vec::with_capacity(n);
        for i in 0..n {
            let mut best = i;
            let mut best_v = f64::NEG_INFINITY;
            for &j in a.row(i) {
                let v = row[j];
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            vals.push(best_v);
            args.push(best);
        }
        (vals, args)
    });
    let mut out = Array2::zeros((b, n));
    let mut arg = Array2::zeros((b, n));
    for (r, (vals, args)) in rows.into_iter().enumerate() {
        out.row_mut(r).assign(&ndarray::ArrayView1::from(&vals));
        arg.row_mut(r).assign(&ndarray::ArrayView1::from(&args));
    }
    Ok((out, arg))
}

/// Hierarchically constrained probabilities.
pub fn f_cm(probs: ArrayView2<'_, f64>, a: &DescendantMatrix) -> Result<Array2<f64>> {
    f_cm_with_argmax(probs, a).map(|(v, _)| v)
}

/// Outputs of the max-constraint forward pass.
#[derive(Debug, Clone)]
pub struct ConstrainedOutputs {
    /// Inference output, `f_cm(p)`.
    pub y_a: Array2<f64>,
    /// `f_cm(y ⊙ p)`.
    pub y_b: Array2<f64>,
    /// Training prediction fed to the cross-entropy.
    pub y_tilde: Array2<f64>,
    arg_a: Array2<usize>,
    arg_b: Array2<usize>,
}

pub fn mcm_forward(raw: ArrayView2<'_, f64>, labels: &LabelMatrix, a: &DescendantMatrix) -> Result<ConstrainedOutputs> {
    if labels.view().dim() != raw.dim() {
        return Err(Error::shape(raw.shape(), labels.view().shape()));
    }
    let y = labels.to_f64();
    let (y_a, arg_a) = f_cm_with_argmax(raw, a)?;
    let masked = &y * &raw;
    let (y_b, arg_b) = f_cm_with_argmax(masked.view(), a)?;
    let y_tilde = (1.0 - &y) * &y_a + &y_b;
    Ok(ConstrainedOutputs {
        y_a,
        y_b,
        y_tilde,
        arg_a,
        arg_b,
    })
}

impl ConstrainedOutputs {
    /// Routes `d loss / d y_tilde` back to the raw probabilities. Each
    /// constrained entry sends its gradient to the single argmax column.
    pub fn backward(&self, labels: &LabelMatrix, grad_y_tilde: ArrayView2<'_, f64>) -> Array2<f64> {
        let y = labels.view();
        let (b, n) = self.y_tilde.dim();
        let mut grad = Array2::zeros((b, n));
        for r in 0..b {
            for i in 0..n {
                let g = grad_y_tilde[[r, i]];
                if g == 0.0 {
                    continue;
                }
                if y[[r, i]] == 0 {
                    grad[[r, self.arg_a[[r, i]]]] += g;
                }
                let jb = self.arg_b[[r, i]];
                if y[[r, jb]] != 0 {
                    grad[[r, jb]] += g;
                }
            }
        }
        grad
    }
}

#[inline]
pub(crate) fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce`] with respect to `p`; zero where the clamp is active.
#[inline]
pub(crate) fn bce_grad(p: f64, y: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Unreduced binary cross-entropy of `y_tilde` against the labels.
pub fn mc_loss(y_tilde: ArrayView2<'_, f64>, labels: &LabelMatrix) -> Result<Array2<f64>> {
    if labels.view().dim() != y_tilde.dim() {
        return Err(Error::shape(y_tilde.shape(), labels.view().shape()));
    }
    Ok(Zip::from(&y_tilde)
        .and(&labels.view())
        .map_collect(|&p, &y| bce(p, f64::from(y))))
}

/// Binary predictions from `f_cm(raw)`; `>= threshold` counts as positive.
pub fn predict(raw: ArrayView2<'_, f64>, a: &DescendantMatrix, threshold: f64) -> Result<Array2<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(f_cm(raw, a)?.mapv(|v| u8::from(v >= threshold)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::tests::arb_dag;
    use crate::hierarchy::Hierarchy;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn chain() -> DescendantMatrix {
        Hierarchy::build(&["r", "a", "b"], &[("r", "a"), ("a", "b")])
            .unwrap()
            .descendant_matrix()
    }

    #[test]
    fn f_cm_examples() {
        let a = chain();
        assert_eq!(f_cm(array![[0.3, 0.7, 0.1]].view(), &a).unwrap(), array![[0.7, 0.7, 0.1]]);
        assert_eq!(f_cm(array![[0.9, 0.5, 0.2]].view(), &a).unwrap(), array![[0.9, 0.5, 0.2]]);
        assert_eq!(f_cm(array![[0.4, 0.4, 0.4]].view(), &a).unwrap(), array![[0.4, 0.4, 0.4]]);
        assert!(matches!(f_cm(array![[0.1, 0.2]].view(), &a), Err(Error::Shape { .. })));
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let (_, arg) = f_cm_with_argmax(array![[0.4, 0.4, 0.4]].view(), &chain()).unwrap();
        assert_eq!(arg, array![[0, 1, 2]]);
    }

    #[test]
    fn asymmetric_filtering() {
        let a = Hierarchy::build(&["P", "C"], &[("P", "C")]).unwrap().descendant_matrix();
        let labels = LabelMatrix::from_closed(array![[1u8, 0]]);
        let out = mcm_forward(array![[0.3, 0.7]].view(), &labels, &a).unwrap();
        assert_eq!(out.y_a, array![[0.7, 0.7]]);
        assert_eq!(out.y_b, array![[0.3, 0.0]]);
        assert_eq!(out.y_tilde, array![[0.3, 0.7]]);
    }

    #[test]
    fn all_ones_and_all_zeros_labels() {
        let a = chain();
        let raw = array![[0.3, 0.7, 0.1]];
        let ones = LabelMatrix::from_closed(Array2::ones((1, 3)));
        let out = mcm_forward(raw.view(), &ones, &a).unwrap();
        assert_eq!(out.y_tilde, f_cm(raw.view(), &a).unwrap());
        let zeros = LabelMatrix::from_closed(Array2::zeros((1, 3)));
        let out = mcm_forward(raw.view(), &zeros, &a).unwrap();
        assert_eq!(out.y_b, Array2::<f64>::zeros((1, 3)));
        assert_eq!(out.y_tilde, out.y_a);
    }

    #[test]
    fn mc_loss_examples() {
        let l1 = LabelMatrix::from_closed(array![[1u8, 1, 0]]);
        let loss = mc_loss(array![[0.5, 1.0 - BCE_EPS, 0.3]].view(), &l1).unwrap();
        assert_abs_diff_eq!(loss[[0, 0]], std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(loss[[0, 1]], 1e-7, epsilon = 1e-12);
        assert_abs_diff_eq!(loss[[0, 2]], 0.356675, epsilon = 1e-6);
        // clamped at the extremes, never infinite
        let l0 = LabelMatrix::from_closed(array![[1u8, 0]]);
        let loss = mc_loss(array![[0.0, 1.0]].view(), &l0).unwrap();
        assert!(loss.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_examples() {
        let a = chain();
        assert_eq!(predict(array![[0.3, 0.7, 0.1]].view(), &a, 0.5).unwrap(), array![[1u8, 1, 0]]);
        assert_eq!(predict(Array2::zeros((2, 3)).view(), &a, 0.5).unwrap(), Array2::<u8>::zeros((2, 3)));
        assert_eq!(predict(Array2::ones((2, 3)).view(), &a, 0.5).unwrap(), Array2::<u8>::ones((2, 3)));
        assert!(predict(Array2::ones((2, 3)).view(), &a, 1.0).is_err());
    }

    fn dag_and_probs() -> impl Strategy<Value = (Hierarchy, Array2<f64>, Array2<u8>)> {
        arb_dag(12).prop_flat_map(|h| {
            let n = h.len();
            (
                Just(h),
                proptest::collection::vec(0.01f64..0.99, 4 * n),
                proptest::collection::vec(0u8..2, 4 * n),
            )
                .prop_map(move |(h, p, y)| {
                    (
                        h,
                        Array2::from_shape_vec((4, n), p).unwrap(),
                        Array2::from_shape_vec((4, n), y).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn constraint_idempotent_monotone((h, p, _) in dag_and_probs()) {
            let a = h.descendant_matrix();
            let out = f_cm(p.view(), &a).unwrap();
            for r in 0..p.nrows() {
                for &(par, c) in h.edges() {
                    prop_assert!(out[[r, par]] >= out[[r, c]]);
                }
            }
            prop_assert_eq!(f_cm(out.view(), &a).unwrap(), out.clone());
            prop_assert!(out.iter().zip(p.iter()).all(|(o, q)| o >= q));
        }

        #[test]
        fn negative_child_never_moves_positive_parent((h, p, y) in dag_and_probs()) {
            let a = h.descendant_matrix();
            let labels = h.close_labels(y.view()).unwrap();
            let base = mcm_forward(p.view(), &labels, &a).unwrap();
            let lv = labels.view();
            for r in 0..p.nrows() {
                for &(par, c) in h.edges() {
                    if lv[[r, par]] == 1 && lv[[r, c]] == 0 {
                        let mut q = p.clone();
                        q[[r, c]] = 0.999;
                        let moved = mcm_forward(q.view(), &labels, &a).unwrap();
                        prop_assert_eq!(moved.y_tilde[[r, par]], base.y_tilde[[r, par]]);
                    }
                }
            }
        }

        #[test]
        fn backward_matches_finite_differences((h, p, y) in dag_and_probs()) {
            let a = h.descendant_matrix();
            let labels = h.close_labels(y.view()).unwrap();
            let total = |q: &Array2<f64>| {
                let out = mcm_forward(q.view(), &labels, &a).unwrap();
                mc_loss(out.y_tilde.view(), &labels).unwrap().sum()
            };
            let out = mcm_forward(p.view(), &labels, &a).unwrap();
            let g_tilde = Zip::from(&out.y_tilde).and(&labels.view()).map_collect(|&p, &y| bce_grad(p, f64::from(y)));
            let g = out.backward(&labels, g_tilde.view());
            let h_step = 1e-6;
            for idx in 0..p.len() {
                let (r, c) = (idx / p.ncols(), idx % p.ncols());
                let mut plus = p.clone();
                plus[[r, c]] += h_step;
                let mut minus = p.clone();
                minus[[r, c]] -= h_step;
                // skip points sitting on a max kink
                let (_, arg_p) = f_cm_with_argmax(plus.view(), &a).unwrap();
                let (_, arg_m) = f_cm_with_argmax(minus.view(), &a).unwrap();
                if arg_p != arg_m {
                    continue;
                }
                let fd = (total(&plus) - total(&minus)) / (2.0 * h_step);
                prop_assert!((fd - g[[r, c]]).abs() <= 1e-5 * (1.0 + fd.abs()), "fd {fd} vs {}", g[[r, c]]);
            }
        }
    }
}
