//! Label hierarchies: DAG construction, descendant closure, ancestor-closed
//! annotations and node frequencies.

use std::collections::{HashMap, VecDeque};

use fixedbitset::FixedBitSet;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, ParseError, ParseErrorKind, Result};

/// Immutable DAG of label nodes.
///
/// Every node is a member of its own descendant set. Multiple parents and
/// multiple roots are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    descendants: Vec<Vec<usize>>,
    ancestors: Vec<Vec<usize>>,
    depth: Vec<usize>,
}

impl Hierarchy {
    /// Builds a hierarchy from node ids and `(parent, child)` id pairs.
    pub fn build<S: AsRef<str>>(nodes: &[S], edges: &[(S, S)]) -> Result<Self> {
        let node_ids: Vec<String> = nodes.iter().map(|s| s.as_ref().to_owned()).collect();
        let mut index = HashMap::with_capacity(node_ids.len());
        for (i, id) in node_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateNode(id.clone()));
            }
        }
        let lookup = |s: &str| index.get(s).copied().ok_or_else(|| Error::UnknownNode(s.to_owned()));
        let mut idx_edges = Vec::with_capacity(edges.len());
        for (p, c) in edges {
            idx_edges.push((lookup(p.as_ref())?, lookup(c.as_ref())?));
        }
        Self::from_indices(node_ids, idx_edges)
    }

    /// Builds a hierarchy from node ids and `(parent_index, child_index)` pairs.
    pub fn from_indices(node_ids: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = node_ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, id) in node_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateNode(id.clone()));
            }
        }
        let mut edges: Vec<(usize, usize)> = edges;
        for &(p, c) in &edges {
            if p >= n || c >= n {
                return Err(Error::UnknownNode(format!("#{}", p.max(c))));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edges {
            parents[c].push(p);
            children[p].push(c);
        }

        let order = topological_order(&children, &parents).map_err(|i| Error::CyclicHierarchy(node_ids[i].clone()))?;

        let mut depth = vec![0usize; n];
        for &v in &order {
            for &c in &children[v] {
                depth[c] = depth[c].max(depth[v] + 1);
            }
        }

        let mut desc_bits: Vec<FixedBitSet> = vec![FixedBitSet::with_capacity(n); n];
        for &v in order.iter().rev() {
            let mut set = FixedBitSet::with_capacity(n);
            set.insert(v);
            for &c in &children[v] {
                set.union_with(&desc_bits[c]);
            }
            desc_bits[v] = set;
        }
        let descendants: Vec<Vec<usize>> = desc_bits.iter().map(|s| s.ones().collect()).collect();
        let mut ancestors = vec![Vec::new(); n];
        for (i, ds) in descendants.iter().enumerate() {
            for &j in ds {
                if j != i {
                    ancestors[j].push(i);
                }
            }
        }

        Ok(Hierarchy {
            node_ids,
            index,
            edges,
            parents,
            children,
            descendants,
            ancestors,
            depth,
        })
    }

    /// Returns a new hierarchy with extra `(parent, child)` edges.
    pub fn with_edges(&self, extra: &[(usize, usize)]) -> Result<Self> {
        let mut edges = self.edges.clone();
        edges.extend_from_slice(extra);
        Self::from_indices(self.node_ids.clone(), edges)
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// `(parent, child)` index pairs, sorted and deduplicated.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Sorted descendant indices of `i`, including `i`.
    pub fn descendants(&self, i: usize) -> &[usize] {
        &self.descendants[i]
    }

    /// Sorted strict ancestors of `i`.
    pub fn ancestors(&self, i: usize) -> &[usize] {
        &self.ancestors[i]
    }

    /// Longest path length from any root.
    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_tree(&self) -> bool {
        self.parents.iter().all(|p| p.len() <= 1)
    }

    pub fn descendant_matrix(&self) -> DescendantMatrix {
        DescendantMatrix::new(self)
    }

    /// Closes every row of a raw binary matrix under ancestors.
    pub fn close_labels(&self, raw: ArrayView2<'_, u8>) -> Result<LabelMatrix> {
        if raw.ncols() != self.len() {
            return Err(Error::shape(&[raw.nrows(), self.len()], raw.shape()));
        }
        let mut out = raw.mapv(|v| u8::from(v != 0));
        for mut row in out.axis_iter_mut(Axis(0)) {
            for c in 0..self.len() {
                if row[c] == 1 {
                    for &a in &self.ancestors[c] {
                        row[a] = 1;
                    }
                }
            }
        }
        Ok(LabelMatrix(out))
    }

    /// Parses a DAG sidecar (`child<TAB>parent` per line, `#` comments) and
    /// returns a hierarchy with those edges added.
    pub fn with_sidecar(&self, text: &str) -> Result<Self> {
        let mut extra = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split('\t').map(str::trim).filter(|s| !s.is_empty());
            let (Some(child), Some(parent), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ParseError::new(
                    line_no,
                    ParseErrorKind::Header("expected `child<TAB>parent`".into()),
                )
                .into());
            };
            let lookup = |s: &str| {
                self.index_of(s)
                    .ok_or_else(|| ParseError::new(line_no, ParseErrorKind::UnknownNode(s.to_owned())))
            };
            extra.push((lookup(parent)?, lookup(child)?));
        }
        self.with_edges(&extra)
    }

    /// Serializes the edge list in sidecar format.
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        for &(p, c) in &self.edges {
            s.push_str(&self.node_ids[c]);
            s.push('\t');
            s.push_str(&self.node_ids[p]);
            s.push('\n');
        }
        s
    }
}

/// Kahn's algorithm. On a cycle returns the index of a node left unprocessed.
fn topological_order(children: &[Vec<usize>], parents: &[Vec<usize>]) -> std::result::Result<Vec<usize>, usize> {
    let n = children.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).find(|&i| indeg[i] > 0).unwrap_or(0))
    }
}

/// Reflexive-transitive closure of the child relation.
///
/// `A[i][j] = 1` iff `j` is a descendant of `i`. Rows are also kept as sorted
/// index lists so the row-wise max only touches nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DescendantMatrix {
    rows: Vec<Vec<usize>>,
}

impl DescendantMatrix {
    pub fn new(h: &Hierarchy) -> Self {
        DescendantMatrix {
            rows: h.descendants.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Nonzero column indices of row `i`, ascending.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i].binary_search(&j).is_ok()
    }

    pub fn to_dense(&self) -> Array2<u8> {
        let n = self.len();
        let mut a = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                a[[i, j]] = 1;
            }
        }
        a
    }
}

/// Batch × node binary annotations, closed under ancestors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix(Array2<u8>);

impl LabelMatrix {
    /// Wraps a matrix the caller guarantees is binary and ancestor-closed.
    pub fn from_closed(m: Array2<u8>) -> Self {
        LabelMatrix(m)
    }

    pub fn view(&self) -> ArrayView2<'_, u8> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<u8> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.0.mapv(f64::from)
    }

    pub fn select_rows(&self, rows: &[usize]) -> LabelMatrix {
        LabelMatrix(self.0.select(Axis(0), rows))
    }

    pub fn is_closed_under(&self, h: &Hierarchy) -> bool {
        self.0.axis_iter(Axis(0)).all(|row| {
            h.edges().iter().all(|&(p, c)| row[c] == 0 || row[p] == 1)
        })
    }
}

/// Per-node positive counts after closure.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFrequencies {
    pub counts: Array1<usize>,
    pub total_obs: usize,
    pub freq: Array1<f64>,
}

impl NodeFrequencies {
    pub fn from_labels(labels: &LabelMatrix) -> Self {
        let counts: Array1<usize> = labels
            .view()
            .axis_iter(Axis(1))
            .map(|col| col.iter().filter(|&&v| v != 0).count())
            .collect();
        Self::from_counts(counts, labels.nrows())
    }

    pub fn from_counts(counts: Array1<usize>, total_obs: usize) -> Self {
        let freq = if total_obs == 0 {
            Array1::zeros(counts.len())
        } else {
            counts.mapv(|c| c as f64 / total_obs as f64)
        };
        NodeFrequencies {
            counts,
            total_obs,
            freq,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn chain() -> Hierarchy {
        Hierarchy::build(&["r", "a", "b"], &[("r", "a"), ("a", "b")]).unwrap()
    }

    fn diamond() -> Hierarchy {
        Hierarchy::build(
            &["r", "a", "b", "c"],
            &[("r", "a"), ("r", "b"), ("a", "c"), ("b", "c")],
        )
        .unwrap()
    }

    #[test]
    fn single_node() {
        let h = Hierarchy::build::<&str>(&["r"], &[]).unwrap();
        assert_eq!(h.descendants(0), &[0]);
        assert_eq!(h.depth(0), 0);
        assert_eq!(h.descendant_matrix().to_dense(), array![[1u8]]);
    }

    #[test]
    fn chain_closure_and_matrix() {
        let h = chain();
        assert_eq!(h.descendants(0), &[0, 1, 2]);
        assert_eq!(h.descendants(1), &[1, 2]);
        assert_eq!(h.descendants(2), &[2]);
        assert_eq!(h.depths(), &[0, 1, 2]);
        assert_eq!(
            h.descendant_matrix().to_dense(),
            array![[1u8, 1, 1], [0, 1, 1], [0, 0, 1]]
        );
    }

    #[test]
    fn diamond_has_two_parents() {
        let h = diamond();
        assert_eq!(h.descendants(0), &[0, 1, 2, 3]);
        assert_eq!(h.parents(3), &[1, 2]);
        assert!(!h.is_tree());
        assert_eq!(h.depth(3), 2);
        assert_eq!(
            h.descendant_matrix().to_dense(),
            array![[1u8, 1, 1, 1], [0, 1, 0, 1], [0, 0, 1, 1], [0, 0, 0, 1]]
        );
    }

    #[test]
    fn errors() {
        let cyc = Hierarchy::build(&["a", "b"], &[("a", "b"), ("b", "a")]);
        assert!(matches!(cyc, Err(Error::CyclicHierarchy(_))));
        let self_loop = Hierarchy::build(&["a"], &[("a", "a")]);
        assert!(matches!(self_loop, Err(Error::CyclicHierarchy(_))));
        let unknown = Hierarchy::build(&["a"], &[("a", "z")]);
        assert!(matches!(unknown, Err(Error::UnknownNode(ref s)) if s == "z"));
        let dup = Hierarchy::build::<&str>(&["a", "a"], &[]);
        assert!(matches!(dup, Err(Error::DuplicateNode(_))));
    }

    #[test]
    fn close_labels_examples() {
        let h = chain();
        let closed = h.close_labels(array![[0u8, 0, 1], [1, 1, 0]].view()).unwrap();
        assert_eq!(closed.view(), array![[1u8, 1, 1], [1, 1, 0]]);
        let d = diamond();
        let closed = d.close_labels(array![[0u8, 0, 0, 1]].view()).unwrap();
        assert_eq!(closed.view(), array![[1u8, 1, 1, 1]]);
        assert!(h.close_labels(array![[0u8, 1]].view()).is_err());
    }

    #[test]
    fn frequency_examples() {
        let labels = LabelMatrix::from_closed(array![[1u8, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 0]]);
        let f = NodeFrequencies::from_labels(&labels);
        assert_eq!(f.counts.to_vec(), vec![4, 2, 1]);
        assert_eq!(f.freq.to_vec(), vec![1.0, 0.5, 0.25]);

        let zeros = LabelMatrix::from_closed(Array2::zeros((3, 3)));
        assert_eq!(NodeFrequencies::from_labels(&zeros).counts.to_vec(), vec![0, 0, 0]);
        let ones = LabelMatrix::from_closed(Array2::ones((1, 3)));
        assert_eq!(NodeFrequencies::from_labels(&ones).freq.to_vec(), vec![1.0; 3]);
    }

    #[test]
    fn sidecar_edges() {
        let h = Hierarchy::build(&["r", "a", "b", "c"], &[("r", "a"), ("r", "b"), ("a", "c")]).unwrap();
        assert_eq!(h.with_sidecar("# nothing\n\n").unwrap(), h);
        let dag = h.with_sidecar("c\tb\n").unwrap();
        assert_eq!(dag.parents(3).len(), 2);
        let err = h.with_sidecar("r\tc\n").unwrap_err();
        assert!(matches!(err, Error::CyclicHierarchy(_)));
        let err = h.with_sidecar("x\tc\n").unwrap_err();
        assert!(matches!(err, Error::Parse(ParseError { line: 1, kind: ParseErrorKind::UnknownNode(_) })));
        assert_eq!(dag.with_sidecar("").unwrap().to_sidecar(), dag.to_sidecar());
    }

    /// Random DAG: edges only from lower to higher index.
    pub(crate) fn arb_dag(max_nodes: usize) -> impl Strategy<Value = Hierarchy> {
        (1..=max_nodes)
            .prop_flat_map(|n| {
                let pairs = proptest::collection::vec((0..n, 0..n, 0.0f64..1.0), 0..(2 * n));
                (Just(n), pairs)
            })
            .prop_map(|(n, pairs)| {
                let edges = pairs
                    .into_iter()
                    .filter(|&(a, b, _)| a != b)
                    .map(|(a, b, _)| (a.min(b), a.max(b)))
                    .collect();
                Hierarchy::from_indices((0..n).map(|i| format!("n{i}")).collect(), edges).unwrap()
            })
    }

    fn dfs_reach(h: &Hierarchy, i: usize) -> Vec<bool> {
        let mut seen = vec![false; h.len()];
        let mut stack = vec![i];
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend_from_slice(h.children(v));
            }
        }
        seen
    }

    proptest! {
        #[test]
        fn matrix_matches_dfs_oracle(h in arb_dag(30)) {
            let a = h.descendant_matrix();
            for i in 0..h.len() {
                let reach = dfs_reach(&h, i);
                for j in 0..h.len() {
                    prop_assert_eq!(a.get(i, j), reach[j]);
                }
            }
        }

        #[test]
        fn closure_idempotent_and_monotone(
            (h, raw) in arb_dag(20).prop_flat_map(|h| {
                let n = h.len();
                (Just(h), proptest::collection::vec(0u8..2, n * 6))
            })
        ) {
            let n = h.len();
            let raw = Array2::from_shape_vec((6, n), raw).unwrap();
            let once = h.close_labels(raw.view()).unwrap();
            let twice = h.close_labels(once.view()).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.is_closed_under(&h));
            let f = NodeFrequencies::from_labels(&once);
            for &(p, c) in h.edges() {
                prop_assert!(f.counts[p] >= f.counts[c]);
            }
        }
    }
}
