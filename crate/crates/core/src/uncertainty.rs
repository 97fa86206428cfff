//! Ensemble statistics and the uncertainty measures used as focal weights.
//!
//! All quantities here are plain arrays computed from member probabilities,
//! so they enter the loss as constants: no gradient flows through them.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::constraint::BCE_EPS;
use crate::error::{Error, Result};

pub const DEFAULT_U0: f64 = 0.25;
pub const DEFAULT_FOCAL_K: f64 = 1.0;

/// Standard deviations below this count as a unanimous ensemble.
const SIGMA_EPS: f64 = 1e-12;

/// Member probabilities (`M × B × N`) with their mean and population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub member_probs: Array3<f64>,
    pub mean: Array2<f64>,
    pub var: Array2<f64>,
}

impl EnsembleOutput {
    pub fn from_members(member_probs: Array3<f64>) -> Result<Self> {
        let m = member_probs.len_of(Axis(0));
        if m == 0 {
            return Err(Error::InsufficientEnsemble(0));
        }
        let mean = member_probs.mean_axis(Axis(0)).expect("nonempty axis");
        let mut var = Array2::<f64>::zeros(mean.raw_dim());
        for member in member_probs.axis_iter(Axis(0)) {
            Zip::from(&mut var).and(&member).and(&mean).for_each(|v, &p, &mu| {
                *v += (p - mu) * (p - mu);
            });
        }
        var.mapv_inplace(|v| v / m as f64);
        Ok(EnsembleOutput {
            member_probs,
            mean,
            var,
        })
    }

    pub fn n_members(&self) -> usize {
        self.member_probs.len_of(Axis(0))
    }
}

/// Which uncertainty feeds the focal term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FocalKind {
    #[default]
    None,
    Bbma,
    Gmu,
    EpKl,
    EpJs,
}

impl FocalKind {
    pub fn min_members(self) -> usize {
        match self {
            FocalKind::EpKl | FocalKind::EpJs => 2,
            _ => 1,
        }
    }
}

impl FromStr for FocalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "bbma" => Self::Bbma,
            "gmu" => Self::Gmu,
            "ep-kl" => Self::EpKl,
            "ep-js" => Self::EpJs,
            _ => return Err(Error::Config(format!("unknown focal kind `{s}`"))),
        })
    }
}

impl fmt::Display for FocalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Bbma => "bbma",
            Self::Gmu => "gmu",
            Self::EpKl => "ep-kl",
            Self::EpJs => "ep-js",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Kl,
    Js,
}

/// `1 - 2(max(μ, 1-μ) - 0.5)`, which equals `2 min(μ, 1-μ)`.
pub fn u_bbma(e: &EnsembleOutput) -> Array2<f64> {
    e.mean.mapv(|mu| 1.0 - 2.0 * (mu.max(1.0 - mu) - 0.5))
}

/// Gated margin uncertainty.
pub fn u_gmu(e: &EnsembleOutput) -> Array2<f64> {
    Zip::from(&e.mean).and(&e.var).map_collect(|&mu, &var| gmu_cell(mu, var.max(0.0).sqrt()))
}

pub(crate) fn gmu_cell(mu: f64, sigma: f64) -> f64 {
    let top = mu.max(1.0 - mu);
    let second = mu.min(1.0 - mu);
    let margin = top - second;
    let gate = 2.0 * (top - 0.5);
    let denom = 2.0 * sigma;
    let decay = if margin <= 0.0 {
        1.0
    } else if denom < SIGMA_EPS {
        0.0
    } else {
        (-margin / denom).exp()
    };
    1.0 - gate * (1.0 - decay)
}

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// KL divergence between two Bernoulli distributions, in nats.
#[inline]
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp(p), clamp(q));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Jensen-Shannon divergence between two Bernoulli distributions, in bits.
#[inline]
pub fn bernoulli_js(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp(p), clamp(q));
    let m = 0.5 * (p + q);
    let kl2 = |a: f64| a * (a / m).log2() + (1.0 - a) * ((1.0 - a) / (1.0 - m)).log2();
    (0.5 * kl2(p) + 0.5 * kl2(q)).max(0.0)
}

/// Mean divergence over ordered pairs of distinct members.
pub fn u_epistemic(member_probs: ArrayView3<'_, f64>, divergence: Divergence) -> Result<Array2<f64>> {
    let (m, b, n) = member_probs.dim();
    if m < 2 {
        return Err(Error::InsufficientEnsemble(m));
    }
    let norm = 1.0 / (m * (m - 1)) as f64;
    let mut out = Array2::zeros((b, n));
    match divergence {
        Divergence::Kl => {
            // Σ_{θ,θ'} KL(p_θ‖p_θ') = M Σ_θ [p ln p + (1-p) ln(1-p)]
            //                          - (Σ_θ p_θ)(Σ_θ' ln p_θ') - (Σ_θ (1-p_θ))(Σ_θ' ln(1-p_θ'))
            let mf = m as f64;
            for ((r, c), o) in out.indexed_iter_mut() {
                let (mut neg_ent, mut sp, mut sq, mut slp, mut slq) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for k in 0..m {
                    let p = clamp(member_probs[[k, r, c]]);
                    let (lp, lq) = (p.ln(), (1.0 - p).ln());
                    neg_ent += p * lp + (1.0 - p) * lq;
                    sp += p;
                    sq += 1.0 - p;
                    slp += lp;
                    slq += lq;
                }
                *o = ((mf * neg_ent - sp * slp - sq * slq) * norm).max(0.0);
            }
        }
        Divergence::Js => {
            for ((r, c), o) in out.indexed_iter_mut() {
                let mut total = 0.0;
                for i in 0..m {
                    for j in (i + 1)..m {
                        total += bernoulli_js(member_probs[[i, r, c]], member_probs[[j, r, c]]);
                    }
                }
                *o = 2.0 * total * norm;
            }
        }
    }
    Ok(out)
}

/// Per-entry uncertainty for the chosen focal kind. `None` yields zeros.
pub fn uncertainty(e: &EnsembleOutput, kind: FocalKind) -> Result<Array2<f64>> {
    match kind {
        FocalKind::None => Ok(Array2::zeros(e.mean.raw_dim())),
        FocalKind::Bbma => Ok(u_bbma(e)),
        FocalKind::Gmu => Ok(u_gmu(e)),
        FocalKind::EpKl => u_epistemic(e.member_probs.view(), Divergence::Kl),
        FocalKind::EpJs => u_epistemic(e.member_probs.view(), Divergence::Js),
    }
}

/// `u0 + u^k`, held as constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalWeights {
    pub u: Array2<f64>,
    pub u0: f64,
    pub k: f64,
    pub combined: Array2<f64>,
}

pub fn focal_weights(u: Array2<f64>, u0: f64, k: f64) -> Result<FocalWeights> {
    if k.is_nan() || k <= 0.0 {
        return Err(Error::Config(format!("focal exponent must be positive, got {k}")));
    }
    let combined = u.mapv(|v| u0 + v.max(0.0).powf(k));
    Ok(FocalWeights { u, u0, k, combined })
}
