//! Random oversampling baselines: label-powerset (LPROS) and hierarchical
//! partial-depth (HROS-PD). Both return a multiset of source-row indices;
//! cloned rows are copied verbatim.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LabelMatrix, NodeFrequencies};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMethod {
    Lpros,
    HrosPd,
}

/// Which mean imbalance ratio a rare node is cloned toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IrTarget {
    /// Mean IR of the input, fixed for the whole run.
    #[default]
    Initial,
    /// Mean IR recomputed after every clone.
    Running,
}

impl FromStr for PlanMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lpros" => Ok(PlanMethod::Lpros),
            "hros-pd" => Ok(PlanMethod::HrosPd),
            _ => Err(Error::Config(format!("unknown resample method `{s}`"))),
        }
    }
}

impl FromStr for IrTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(IrTarget::Initial),
            "running" => Ok(IrTarget::Running),
            _ => Err(Error::Config(format!("unknown IR target `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub method: PlanMethod,
    pub oversample_pct: Option<f64>,
    pub ir_target: Option<IrTarget>,
    pub index_multiset: Vec<usize>,
}

impl ResamplePlan {
    pub fn len(&self) -> usize {
        self.index_multiset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_multiset.is_empty()
    }

    /// Rows added on top of the source.
    pub fn n_added(&self, n_source: usize) -> usize {
        self.index_multiset.len().saturating_sub(n_source)
    }

    /// One index per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.index_multiset.len() * 6);
        for i in &self.index_multiset {
            let _ = writeln!(s, "{i}");
        }
        s
    }

    pub fn from_text(text: &str, method: PlanMethod, n_source: usize) -> Result<Self> {
        let mut index_multiset = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let i: usize = line
                .parse()
                .map_err(|_| Error::Format(format!("plan line {}: `{line}` is not a row index", k + 1)))?;
            if i >= n_source {
                return Err(Error::Format(format!("plan line {}: row {i} out of range", k + 1)));
            }
            index_multiset.push(i);
        }
        Ok(ResamplePlan {
            method,
            oversample_pct: None,
            ir_target: None,
            index_multiset,
        })
    }
}

/// Clones rows of below-mean labelsets, rarest first, until each reaches
/// `floor(mean)` labelset count or `ceil(pct * N)` rows have been added.
pub fn lpros(labels: &LabelMatrix, pct: f64, seed: u64) -> Result<ResamplePlan> {
    if !(pct > 0.0 && pct.is_finite()) {
        return Err(Error::Config(format!("oversampling percentage must be positive, got {pct}")));
    }
    let n = labels.nrows();
    let mut groups: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
    for (r, row) in labels.view().axis_iter(Axis(0)).enumerate() {
        groups.entry(row.to_vec()).or_default().push(r);
    }
    let mut index_multiset: Vec<usize> = (0..n).collect();
    let plan = |index_multiset| ResamplePlan {
        method: PlanMethod::Lpros,
        oversample_pct: Some(pct),
        ir_target: None,
        index_multiset,
    };
    if groups.is_empty() {
        return Ok(plan(index_multiset));
    }
    let mean = n as f64 / groups.len() as f64;
    let budget = (pct * n as f64).ceil() as usize;
    let mut rare: Vec<&Vec<usize>> = groups.values().filter(|g| (g.len() as f64) < mean).collect();
    rare.sort_by_key(|g| g.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut added = 0;
    'outer: for rows in rare {
        let mut count = rows.len();
        // never overshoot the mean, so no labelset crosses it
        while ((count + 1) as f64) <= mean {
            if added == budget {
                break 'outer;
            }
            index_multiset.push(rows[rng.random_range(0..rows.len())]);
            count += 1;
            added += 1;
        }
    }
    Ok(plan(index_multiset))
}

/// Imbalance ratio `n_max / n_i` for every node with `n_i > 0`.
pub fn imbalance_ratios(counts: &[usize]) -> Vec<Option<f64>> {
    let n_max = counts.iter().copied().max().unwrap_or(0) as f64;
    counts
        .iter()
        .map(|&c| (c > 0).then(|| n_max / c as f64))
        .collect()
}

fn mean_and_var(ir: &[Option<f64>]) -> (f64, f64) {
    let vals: Vec<f64> = ir.iter().flatten().copied().collect();
    if vals.is_empty() {
        return (0.0, 0.0);
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
    (mean, var)
}

/// Variance of the per-node imbalance ratios (nodes with no positives skipped).
pub fn ir_variance(counts: &[usize]) -> f64 {
    mean_and_var(&imbalance_ratios(counts)).1
}

/// Clones rows whose deepest positive node is rare, rarest node first.
///
/// A node is rare when its IR exceeds the target mean IR. Cloning for a node
/// stops once its IR is at or below the target, when it has no eligible rows,
/// or when the next clone would raise the IR variance. The total number of
/// clones is capped at `10 * N`.
pub fn hros_pd(labels: &LabelMatrix, h: &Hierarchy, target: IrTarget, seed: u64) -> Result<ResamplePlan> {
    if labels.ncols() != h.len() {
        return Err(Error::shape(&[labels.nrows(), h.len()], labels.view().shape()));
    }
    if !h.is_tree() {
        log::warn!("hros-pd was designed for trees; running on a DAG");
    }
    let n = labels.nrows();
    let lv = labels.view();
    let mut counts: Vec<usize> = NodeFrequencies::from_labels(labels).counts.to_vec();
    let empty = counts.iter().filter(|&&c| c == 0).count();
    if empty > 0 {
        log::warn!("{empty} node(s) have no positives and are skipped");
    }

    // rows where node i is positive and none of its descendants are
    let mut eligible: Vec<Vec<usize>> = vec![Vec::new(); h.len()];
    for r in 0..n {
        for i in 0..h.len() {
            if lv[[r, i]] == 1 && h.descendants(i).iter().all(|&j| j == i || lv[[r, j]] == 0) {
                eligible[i].push(r);
            }
        }
    }
    let positives: Vec<Vec<usize>> = (0..n)
        .map(|r| (0..h.len()).filter(|&i| lv[[r, i]] == 1).collect())
        .collect();

    let initial = imbalance_ratios(&counts);
    let (initial_mean, _) = mean_and_var(&initial);
    let mut rare: Vec<usize> = (0..h.len())
        .filter(|&i| initial[i].is_some_and(|ir| ir > initial_mean))
        .collect();
    rare.sort_by_key(|&i| (counts[i], i));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index_multiset: Vec<usize> = (0..n).collect();
    let cap = 10 * n;
    let mut clones = 0;
    'nodes: for node in rare {
        let rows = &eligible[node];
        if rows.is_empty() {
            continue;
        }
        loop {
            let ir = imbalance_ratios(&counts);
            let (mean, var) = mean_and_var(&ir);
            let goal = match target {
                IrTarget::Initial => initial_mean,
                IrTarget::Running => mean,
            };
            if ir[node].is_none_or(|v| v <= goal) {
                break;
            }
            if clones == cap {
                break 'nodes;
            }
            let r = rows[rng.random_range(0..rows.len())];
            for &i in &positives[r] {
                counts[i] += 1;
            }
            if ir_variance(&counts) > var {
                for &i in &positives[r] {
                    counts[i] -= 1;
                }
                break;
            }
            index_multiset.push(r);
            clones += 1;
        }
    }
    Ok(ResamplePlan {
        method: PlanMethod::HrosPd,
        oversample_pct: None,
        ir_target: Some(target),
        index_multiset,
    })
}

/// Node frequencies over the resampled multiset.
pub fn weights_after_resample(plan: &ResamplePlan, labels: &LabelMatrix) -> Result<NodeFrequencies> {
    if let Some(&bad) = plan.index_multiset.iter().find(|&&i| i >= labels.nrows()) {
        return Err(Error::DimensionMismatch(format!(
            "plan references row {bad} of {}",
            labels.nrows()
        )));
    }
    Ok(NodeFrequencies::from_labels(&labels.select_rows(&plan.index_multiset)))
}

/// Mean absolute deviation of labelset counts from their mean.
pub fn labelset_deviation(labels: &LabelMatrix) -> f64 {
    let mut groups: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
    for row in labels.view().axis_iter(Axis(0)) {
        *groups.entry(row.to_vec()).or_default() += 1;
    }
    if groups.is_empty() {
        return 0.0;
    }
    let k = groups.len() as f64;
    let mean = labels.nrows() as f64 / k;
    groups.values().map(|&c| (c as f64 - mean).abs()).sum::<f64>() / k
}
