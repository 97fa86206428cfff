//! Reader for the ARFF subset used by hierarchical gene-product benchmarks.
//!
//! Supported header lines (keywords are case-insensitive):
//!
//! ```text
//! % comment
//! @RELATION <name>
//! @ATTRIBUTE <name> numeric|real|integer
//! @ATTRIBUTE <name> hierarchical <class>,<class>,...
//! @DATA
//! ```
//!
//! Classes are tree paths such as `01/02/03`; the parent of a path is the path
//! without its last component. A data row holds one comma-separated field per
//! attribute. The hierarchical field lists the row's classes joined by `@`
//! (empty or `?` for none). A numeric `?` is missing and is imputed with a
//! column mean.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use super::{Dataset, SplitTag};
use crate::error::{Error, ParseError, ParseErrorKind, Result};
use crate::hierarchy::Hierarchy;

/// A parsed file with the column means used (or available) for imputation.
#[derive(Debug, Clone)]
pub struct ArffData {
    pub dataset: Dataset,
    pub column_means: Vec<f64>,
}

enum Attr {
    Numeric,
    Class,
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError::new(line, kind)
}

/// Splits `@ATTRIBUTE` arguments into name and remainder, honouring quotes.
fn split_name(rest: &str) -> Option<(&str, &str)> {
    let rest = rest.trim_start();
    let quote = rest.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let end = rest[1..].find(quote)? + 1;
    Some((&rest[1..end], &rest[end + 1..]))
}

fn parse_attribute(line_no: usize, rest: &str) -> std::result::Result<(String, Attr, Option<&str>), ParseError> {
    let (name, tail) = match split_name(rest) {
        Some(v) => v,
        None => {
            let rest = rest.trim_start();
            let cut = rest.find(char::is_whitespace).unwrap_or(rest.len());
            (&rest[..cut], &rest[cut..])
        }
    };
    if name.is_empty() {
        return Err(err(line_no, ParseErrorKind::Header("attribute without a name".into())));
    }
    let tail = tail.trim();
    let cut = tail.find(char::is_whitespace).unwrap_or(tail.len());
    let (ty, spec) = (&tail[..cut], tail[cut..].trim());
    match ty.to_ascii_lowercase().as_str() {
        "numeric" | "real" | "integer" => Ok((name.to_owned(), Attr::Numeric, None)),
        "hierarchical" => {
            if spec.is_empty() {
                return Err(err(line_no, ParseErrorKind::Header("empty class list".into())));
            }
            Ok((name.to_owned(), Attr::Class, Some(spec)))
        }
        "" => Err(err(line_no, ParseErrorKind::Header(format!("attribute `{name}` has no type")))),
        other => Err(err(line_no, ParseErrorKind::UnsupportedType(other.to_owned()))),
    }
}

/// Builds the tree from declared class paths, adding undeclared prefixes.
fn build_class_tree(line_no: usize, spec: &str) -> std::result::Result<Hierarchy, ParseError> {
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut edges = Vec::new();
    for token in spec.split(',').map(str::trim) {
        if token.is_empty() || token.split('/').any(str::is_empty) || token.contains('@') {
            return Err(err(line_no, ParseErrorKind::Header(format!("invalid class `{token}`"))));
        }
        let mut parent: Option<usize> = None;
        let mut end = 0;
        for part in token.split('/') {
            end += part.len();
            let prefix = &token[..end];
            let idx = match index.get(prefix) {
                Some(&i) => i,
                None => {
                    let i = ids.len();
                    ids.push(prefix.to_owned());
                    index.insert(prefix.to_owned(), i);
                    if let Some(p) = parent {
                        edges.push((p, i));
                    }
                    i
                }
            };
            parent = Some(idx);
            end += 1;
        }
    }
    Hierarchy::from_indices(ids, edges).map_err(|e| err(line_no, ParseErrorKind::Hierarchy(e.to_string())))
}

/// Parses ARFF text. Missing values are imputed with `means` when given,
/// otherwise with this file's own column means.
pub fn parse_arff_str(text: &str, means: Option<&[f64]>, split: SplitTag) -> Result<ArffData> {
    let mut attrs: Vec<Attr> = Vec::new();
    let mut class_col: Option<usize> = None;
    let mut hierarchy: Option<Hierarchy> = None;
    let mut in_data = false;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut label_rows: Vec<Vec<usize>> = Vec::new();
    let mut last_line = 0;

    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data {
            if !line.starts_with('@') {
                return Err(err(line_no, ParseErrorKind::Header(format!("unexpected `{}`", truncate(line)))).into());
            }
            let cut = line.find(char::is_whitespace).unwrap_or(line.len());
            let (kw, rest) = (&line[..cut], &line[cut..]);
            match kw.to_ascii_lowercase().as_str() {
                "@relation" => {}
                "@attribute" => {
                    let (_, attr, spec) = parse_attribute(line_no, rest)?;
                    if let (Attr::Class, Some(spec)) = (&attr, spec) {
                        if class_col.is_some() {
                            return Err(err(line_no, ParseErrorKind::Header("second hierarchical attribute".into())).into());
                        }
                        class_col = Some(attrs.len());
                        hierarchy = Some(build_class_tree(line_no, spec)?);
                    }
                    attrs.push(attr);
                }
                "@data" => {
                    if class_col.is_none() {
                        return Err(err(line_no, ParseErrorKind::Missing("hierarchical class attribute")).into());
                    }
                    in_data = true;
                }
                other => {
                    return Err(err(line_no, ParseErrorKind::Header(format!("unknown keyword `{}`", truncate(other)))).into());
                }
            }
            continue;
        }

        let h = hierarchy.as_ref().expect("class attribute seen before @data");
        let class_col = class_col.expect("class attribute seen before @data");
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != attrs.len() {
            return Err(err(
                line_no,
                ParseErrorKind::FieldCount {
                    expected: attrs.len(),
                    found: fields.len(),
                },
            )
            .into());
        }
        let mut feats = Vec::with_capacity(attrs.len().saturating_sub(1));
        let mut labels = Vec::new();
        for (col, field) in fields.iter().enumerate() {
            if col == class_col {
                if field.is_empty() || *field == "?" {
                    continue;
                }
                for token in field.split('@').map(str::trim) {
                    let idx = h
                        .index_of(token)
                        .ok_or_else(|| err(line_no, ParseErrorKind::UnknownNode(truncate(token).to_owned())))?;
                    labels.push(idx);
                }
            } else if *field == "?" {
                feats.push(f64::NAN);
            } else {
                let v: f64 = field
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| err(line_no, ParseErrorKind::Number(truncate(field).to_owned())))?;
                feats.push(v);
            }
        }
        rows.push(feats);
        label_rows.push(labels);
    }

    if !in_data {
        return Err(err(last_line, ParseErrorKind::Missing("@data")).into());
    }
    let h = Arc::new(hierarchy.expect("checked at @data"));
    let n_feat = attrs.len() - 1;
    let n_rows = rows.len();

    let column_means: Vec<f64> = match means {
        Some(m) => {
            if m.len() != n_feat {
                return Err(Error::DimensionMismatch(format!(
                    "{} imputation means for {} numeric columns",
                    m.len(),
                    n_feat
                )));
            }
            m.to_vec()
        }
        None => (0..n_feat)
            .map(|c| {
                let (sum, k) = rows
                    .iter()
                    .map(|r| r[c])
                    .filter(|v| !v.is_nan())
                    .fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
                if k == 0 {
                    0.0
                } else {
                    sum / k as f64
                }
            })
            .collect(),
    };

    let mut features = Array2::zeros((n_rows, n_feat));
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            features[[r, c]] = if v.is_nan() { column_means[c] } else { v };
        }
    }
    let mut raw = Array2::<u8>::zeros((n_rows, h.len()));
    for (r, ls) in label_rows.iter().enumerate() {
        for &l in ls {
            raw[[r, l]] = 1;
        }
    }
    let labels = h.close_labels(raw.view())?;
    Ok(ArffData {
        dataset: Dataset::new(features, labels, h, split)?,
        column_means,
    })
}

/// Like [`parse_arff_str`] but accepts arbitrary bytes.
pub fn parse_arff_bytes(bytes: &[u8], means: Option<&[f64]>, split: SplitTag) -> Result<ArffData> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        err(line, ParseErrorKind::Encoding)
    })?;
    parse_arff_str(text, means, split)
}

pub fn parse_arff(path: &Path, means: Option<&[f64]>, split: SplitTag) -> Result<ArffData> {
    let bytes = std::fs::read(path)?;
    parse_arff_bytes(&bytes, means, split)
}

/// Writes a dataset in the same ARFF subset. Tree edges come from node-id
/// paths, so DAG cross edges need a sidecar.
pub fn to_arff_string(d: &Dataset, relation: &str) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "@RELATION {relation}");
    for c in 0..d.n_features() {
        let _ = writeln!(s, "@ATTRIBUTE f{c} numeric");
    }
    let _ = writeln!(s, "@ATTRIBUTE class hierarchical {}", d.hierarchy.node_ids().join(","));
    let _ = writeln!(s, "@DATA");
    let lv = d.labels.view();
    for r in 0..d.len() {
        for c in 0..d.n_features() {
            let _ = write!(s, "{},", d.features[[r, c]]);
        }
        // only the deepest positives are needed; closure restores the rest
        let leaves: Vec<&str> = (0..d.n_nodes())
            .filter(|&i| lv[[r, i]] == 1 && d.hierarchy.descendants(i).iter().all(|&j| j == i || lv[[r, j]] == 0))
            .map(|i| d.hierarchy.node_ids()[i].as_str())
            .collect();
        let _ = writeln!(s, "{}", leaves.join("@"));
    }
    s
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(64) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
