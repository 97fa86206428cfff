//! Node-wise precision/recall/F1, average precision, and binarized AP.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::LabelMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }

    pub fn scores(&self) -> Scores {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Scores {
            precision,
            recall,
            f1,
        }
    }

    pub fn has_positives(&self) -> bool {
        self.tp + self.fn_ > 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Column-wise confusion counts.
pub fn confusion_counts(pred: ArrayView2<'_, u8>, labels: &LabelMatrix) -> Result<Vec<Confusion>> {
    let lv = labels.view();
    if pred.dim() != lv.dim() {
        return Err(Error::shape(lv.shape(), pred.shape()));
    }
    Ok(pred
        .axis_iter(Axis(1))
        .zip(lv.axis_iter(Axis(1)))
        .map(|(p, y)| {
            let mut c = Confusion::default();
            Zip::from(&p).and(&y).for_each(|&p, &y| match (p != 0, y != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            });
            c
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prf {
    pub per_node: Vec<Scores>,
    /// Mean over nodes with at least one positive annotation.
    pub macro_avg: Scores,
    /// Scores of the pooled counts.
    pub micro: Scores,
}

pub fn prf(counts: &[Confusion]) -> Prf {
    let per_node: Vec<Scores> = counts.iter().map(Confusion::scores).collect();
    let macro_avg = macro_over(counts, &per_node, |_| true).unwrap_or_default();
    Prf {
        per_node,
        macro_avg,
        micro: pooled(counts).scores(),
    }
}

fn pooled(counts: &[Confusion]) -> Confusion {
    counts.iter().copied().fold(Confusion::default(), Confusion::merge)
}

fn macro_over(counts: &[Confusion], scores: &[Scores], keep: impl Fn(usize) -> bool) -> Option<Scores> {
    let mut acc = Scores::default();
    let mut k = 0usize;
    for (i, (c, s)) in counts.iter().zip(scores).enumerate() {
        if c.has_positives() && keep(i) {
            acc.precision += s.precision;
            acc.recall += s.recall;
            acc.f1 += s.f1;
            k += 1;
        }
    }
    (k > 0).then(|| Scores {
        precision: acc.precision / k as f64,
        recall: acc.recall / k as f64,
        f1: acc.f1 / k as f64,
    })
}

/// Rectangular area under the precision-recall curve. Tied scores form one
/// threshold.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(&[labels.len()], &[scores.len()]));
    }
    let total_pos = labels.iter().filter(|&&y| y != 0).count();
    if total_pos == 0 {
        return Err(Error::NotDefined("average precision without positive labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]].total_cmp(&s).is_eq() {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Average precision of the `>= threshold` binarization.
pub fn binarized_ap(probs: ArrayView2<'_, f64>, labels: &LabelMatrix, threshold: f64) -> Result<f64> {
    if probs.dim() != labels.view().dim() {
        return Err(Error::shape(labels.view().shape(), probs.shape()));
    }
    let bin: Vec<f64> = probs.iter().map(|&p| if p >= threshold { 1.0 } else { 0.0 }).collect();
    average_precision(&bin, &labels.view().iter().copied().collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    #[serde(flatten)]
    pub counts: Confusion,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Full evaluation of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub node_ids: Vec<String>,
    pub per_node: Vec<NodeMetrics>,
    pub macro_avg: Scores,
    pub micro: Scores,
    pub bin_ap: Option<f64>,
    pub ap: Option<f64>,
}

impl MetricsReport {
    /// Evaluates constrained probabilities against labels at `threshold`.
    pub fn evaluate(node_ids: &[String], constrained: ArrayView2<'_, f64>, labels: &LabelMatrix, threshold: f64) -> Result<Self> {
        if node_ids.len() != constrained.ncols() {
            return Err(Error::shape(&[node_ids.len()], &[constrained.ncols()]));
        }
        let pred = constrained.mapv(|p| u8::from(p >= threshold));
        let counts = confusion_counts(pred.view(), labels)?;
        let scores = prf(&counts);
        let flat_labels: Vec<u8> = labels.view().iter().copied().collect();
        let flat_scores: Vec<f64> = constrained.iter().copied().collect();
        let ap = average_precision(&flat_scores, &flat_labels).ok();
        let bin_ap = binarized_ap(constrained, labels, threshold).ok();
        Ok(MetricsReport {
            node_ids: node_ids.to_vec(),
            per_node: counts
                .into_iter()
                .zip(scores.per_node)
                .map(|(counts, scores)| NodeMetrics { counts, scores })
                .collect(),
            macro_avg: scores.macro_avg,
            micro: scores.micro,
            bin_ap,
            ap,
        })
    }

    /// Macro scores restricted to `nodes` (only those with positives count).
    pub fn macro_over(&self, nodes: &[usize]) -> Option<Scores> {
        let counts: Vec<Confusion> = self.per_node.iter().map(|m| m.counts).collect();
        let scores: Vec<Scores> = self.per_node.iter().map(|m| m.scores).collect();
        macro_over(&counts, &scores, |i| nodes.contains(&i))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let per_node: BTreeMap<&str, &NodeMetrics> =
            self.node_ids.iter().map(String::as_str).zip(self.per_node.iter()).collect();
        serde_json::json!({
            "macro": self.macro_avg,
            "micro": self.micro,
            "bin_ap": self.bin_ap,
            "ap": self.ap,
            "per_node": per_node,
        })
    }

    pub const CSV_HEADER: &'static str = "node,tp,fp,fn,tn,precision,recall,f1";

    /// One row per node followed by `__macro__` and `__micro__` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (id, m) in self.node_ids.iter().zip(&self.per_node) {
            let c = m.counts;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                csv_field(id),
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                m.scores.precision,
                m.scores.recall,
                m.scores.f1
            );
        }
        for (name, sc) in [("__macro__", self.macro_avg), ("__micro__", self.micro)] {
            let _ = writeln!(s, "{name},,,,,{},{},{}", sc.precision, sc.recall, sc.f1);
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
