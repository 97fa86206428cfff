//! Synthetic long-tailed hierarchical multi-label data.
//!
//! The hierarchy is a random tree (plus optional cross edges from shallower to
//! deeper nodes). Nodes are ranked by depth and each gets popularity
//! `(rank + 1)^-tail_exponent`. A row picks a target node by popularity and is
//! labelled with it and its ancestors; with `multi_label_prob` a sibling of the
//! target is added too. Features are the sum of the positive nodes' Gaussian
//! prototypes plus `noise_sigma` white noise.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, SplitTag, Splits};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_nodes: usize,
    /// Number of levels; roots are level 0.
    pub max_depth: usize,
    /// Number of roots and the maximum number of children per node.
    pub branching: usize,
    pub dag_extra_edges: usize,
    pub n_obs: usize,
    pub tail_exponent: f64,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub multi_label_prob: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_nodes: 200,
            max_depth: 5,
            branching: 3,
            dag_extra_edges: 0,
            n_obs: 2000,
            tail_exponent: 1.5,
            feature_dim: 64,
            noise_sigma: 0.5,
            multi_label_prob: 0.25,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_nodes == 0 || self.max_depth == 0 || self.branching == 0 || self.feature_dim == 0 {
            return bad("n_nodes, max_depth, branching and feature_dim must be positive".into());
        }
        let mut capacity = 0usize;
        let mut level = 1usize;
        for _ in 0..self.max_depth {
            level = level.saturating_mul(self.branching);
            capacity = capacity.saturating_add(level);
        }
        if capacity < self.n_nodes {
            return bad(format!(
                "{} nodes do not fit in {} levels with branching {}",
                self.n_nodes, self.max_depth, self.branching
            ));
        }
        if !(self.tail_exponent >= 0.0 && self.tail_exponent.is_finite()) {
            return bad(format!("tail_exponent must be non-negative, got {}", self.tail_exponent));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.multi_label_prob) {
            return bad(format!("multi_label_prob must lie in [0, 1], got {}", self.multi_label_prob));
        }
        Ok(())
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let spec: SynthSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

/// Full synthetic data set before splitting, with the target node of each row.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub targets: Vec<usize>,
}

struct Tree {
    depth: Vec<usize>,
    parent: Vec<Option<usize>>,
}

fn random_tree(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Tree {
    let n_roots = spec.branching.min(spec.n_nodes);
    let mut depth = vec![0; n_roots];
    let mut parent = vec![None; n_roots];
    let mut n_children = vec![0usize; n_roots];
    let mut open: Vec<usize> = if spec.max_depth > 1 { (0..n_roots).collect() } else { Vec::new() };
    while depth.len() < spec.n_nodes {
        let k = rng.random_range(0..open.len());
        let p = open[k];
        let id = depth.len();
        depth.push(depth[p] + 1);
        parent.push(Some(p));
        n_children.push(0);
        n_children[p] += 1;
        if n_children[p] == spec.branching {
            open.swap_remove(k);
        }
        if depth[id] + 1 < spec.max_depth {
            open.push(id);
        }
    }
    Tree { depth, parent }
}

/// Generates the full data set; see [`synth`] for the split version.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tree = random_tree(spec, &mut rng);
    let n = spec.n_nodes;

    // reindex so that index order is (depth, creation order)
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (tree.depth[i], i));
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let depth: Vec<usize> = order.iter().map(|&i| tree.depth[i]).collect();
    let parent: Vec<Option<usize>> = order.iter().map(|&i| tree.parent[i].map(|p| rank[p])).collect();

    let mut ids: Vec<String> = Vec::with_capacity(n);
    let mut child_no = vec![0usize; n];
    let mut root_no = 0;
    for i in 0..n {
        let id = match parent[i] {
            None => {
                root_no += 1;
                format!("r{}", root_no - 1)
            }
            Some(p) => {
                child_no[p] += 1;
                format!("{}/{}", ids[p], child_no[p] - 1)
            }
        };
        ids.push(id);
    }
    let mut edges: Vec<(usize, usize)> = (0..n).filter_map(|c| parent[c].map(|p| (p, c))).collect();
    let mut siblings: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..n {
        let group: Vec<usize> = (0..n).filter(|&s| s != c && parent[s] == parent[c]).collect();
        siblings[c] = group;
    }

    // cross edges always go to a strictly deeper node, so no cycle can form
    let deeper: Vec<usize> = (0..n).filter(|&i| depth[i] > 0).collect();
    let mut added = 0;
    let mut attempts = 0;
    while added < spec.dag_extra_edges && !deeper.is_empty() && attempts < 100 * spec.dag_extra_edges {
        attempts += 1;
        let c = deeper[rng.random_range(0..deeper.len())];
        let p = rng.random_range(0..n);
        if depth[p] < depth[c] && !edges.contains(&(p, c)) {
            edges.push((p, c));
            added += 1;
        }
    }
    if added < spec.dag_extra_edges {
        log::warn!("placed {added} of {} cross edges", spec.dag_extra_edges);
    }
    let h = Arc::new(Hierarchy::from_indices(ids, edges)?);

    let popularity: Vec<f64> = (0..n).map(|r| ((r + 1) as f64).powf(-spec.tail_exponent)).collect();
    let pick = WeightedIndex::new(&popularity).map_err(|e| Error::Config(e.to_string()))?;
    let prototypes = Array2::from_shape_simple_fn((n, spec.feature_dim), || rng.sample::<f64, _>(StandardNormal));

    let mut raw = Array2::<u8>::zeros((spec.n_obs, n));
    let mut targets = Vec::with_capacity(spec.n_obs);
    for r in 0..spec.n_obs {
        let t = pick.sample(&mut rng);
        targets.push(t);
        raw[[r, t]] = 1;
        if rng.random::<f64>() < spec.multi_label_prob {
            let sib = &siblings[t];
            let extra = if sib.is_empty() {
                pick.sample(&mut rng)
            } else {
                sib[rng.random_range(0..sib.len())]
            };
            raw[[r, extra]] = 1;
        }
    }
    let labels = h.close_labels(raw.view())?;
    let lv = labels.view();
    let mut features = Array2::zeros((spec.n_obs, spec.feature_dim));
    for r in 0..spec.n_obs {
        let mut row = features.row_mut(r);
        for i in 0..n {
            if lv[[r, i]] == 1 {
                row += &prototypes.row(i);
            }
        }
        for v in row.iter_mut() {
            *v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(SynthData {
        dataset: Dataset::new(features, labels, h, SplitTag::Train)?,
        targets,
    })
}

/// Generates and splits 70/15/15 by row order.
pub fn synth(spec: &SynthSpec) -> Result<Splits> {
    let full = generate(spec)?.dataset;
    let n = full.len();
    let n_train = n * 70 / 100;
    let n_valid = n * 15 / 100;
    let part = |range: std::ops::Range<usize>, split| {
        let rows: Vec<usize> = range.collect();
        Dataset {
            split,
            ..full.select_rows(&rows)
        }
    };
    Ok(Splits {
        train: part(0..n_train, SplitTag::Train),
        valid: part(n_train..n_train + n_valid, SplitTag::Valid),
        test: part(n_train + n_valid..n, SplitTag::Test),
    })
}

fn average_ranks(x: &[f64]) -> Array1<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = Array1::zeros(x.len());
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let (mx, my) = (rx.mean()?, ry.mean()?);
    let (dx, dy) = (rx - mx, ry - my);
    let den = (dx.dot(&dx) * dy.dot(&dy)).sqrt();
    (den > 0.0).then(|| dx.dot(&dy) / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_nodes: 40,
            max_depth: 4,
            n_obs: 300,
            feature_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn shape_and_closure() {
        let spec = SynthSpec {
            dag_extra_edges: 5,
            ..small()
        };
        let d = generate(&spec).unwrap().dataset;
        assert_eq!(d.n_nodes(), 40);
        assert!(d.hierarchy.max_depth() < 4 + 5);
        assert!(!d.hierarchy.is_tree());
        assert!(d.labels.is_closed_under(&d.hierarchy));
        assert!(d.features.iter().all(|v| v.is_finite()));
        let tree = generate(&small()).unwrap().dataset;
        assert!(tree.hierarchy.is_tree());
        assert!(tree.hierarchy.max_depth() < 4);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth(&small()).unwrap();
        let b = synth(&small()).unwrap();
        assert_eq!(a, b);
        let c = synth(&SynthSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train.features, c.train.features);
    }

    #[test]
    fn splits_are_70_15_15() {
        let s = synth(&SynthSpec { n_obs: 1000, ..small() }).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (700, 150, 150));
        assert_eq!(s.test.split, SplitTag::Test);
    }

    #[test]
    fn zero_tail_gives_uniform_targets() {
        let spec = SynthSpec {
            tail_exponent: 0.0,
            n_obs: 20_000,
            multi_label_prob: 0.0,
            ..small()
        };
        let data = generate(&spec).unwrap();
        let mut hits = vec![0usize; spec.n_nodes];
        for &t in &data.targets {
            hits[t] += 1;
        }
        let expect = spec.n_obs as f64 / spec.n_nodes as f64;
        // five standard deviations of a binomial count
        let tol = 5.0 * expect.sqrt();
        assert!(hits.iter().all(|&h| (h as f64 - expect).abs() < tol), "{hits:?}");
    }

    #[test]
    fn frequency_falls_with_depth() {
        for (tail, seed) in [(1.0, 0), (1.5, 1), (2.0, 2)] {
            let spec = SynthSpec {
                tail_exponent: tail,
                seed,
                ..Default::default()
            };
            let d = generate(&spec).unwrap().dataset;
            let freq = d.frequencies().freq.to_vec();
            let depth: Vec<f64> = d.hierarchy.depths().iter().map(|&x| x as f64).collect();
            let rho = spearman(&freq, &depth).unwrap();
            assert!(rho < -0.5, "tail {tail}: rho = {rho}");
        }
    }

    #[test]
    fn noiseless_top_level_is_linearly_separable() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            n_obs: 600,
            ..small()
        };
        let d = generate(&spec).unwrap().dataset;
        let roots: Vec<usize> = (0..d.n_nodes()).filter(|&i| d.hierarchy.parents(i).is_empty()).collect();
        let x = &d.features;
        let y = d.labels.to_f64();
        // one logistic unit per root, full-batch gradient descent
        let mut correct = 0usize;
        for &r in &roots {
            let t = y.column(r);
            let mut w = Array1::<f64>::zeros(x.ncols());
            let mut b = 0.0;
            for _ in 0..500 {
                let p = (x.dot(&w) + b).mapv(crate::nn::mlp::sigmoid);
                let g = &p - &t;
                w -= &(x.t().dot(&g) * (0.5 / x.nrows() as f64));
                b -= 0.5 * g.mean().unwrap();
            }
            let p = (x.dot(&w) + b).mapv(crate::nn::mlp::sigmoid);
            correct += p.iter().zip(t.iter()).filter(|(p, t)| (**p >= 0.5) == (**t == 1.0)).count();
        }
        let acc = correct as f64 / (roots.len() * d.len()) as f64;
        assert!(acc > 0.95, "top-level accuracy {acc}");
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SynthSpec { n_nodes: 100, max_depth: 2, branching: 3, ..small() }.validate().is_err());
        assert!(SynthSpec::from_toml("n_nodes = 0").is_err());
        assert!(SynthSpec::from_toml("bogus = 1").is_err());
        let s = SynthSpec::from_toml("n_nodes = 10\nseed = 4").unwrap();
        assert_eq!((s.n_nodes, s.seed, s.max_depth), (10, 4, 5));
    }
}
