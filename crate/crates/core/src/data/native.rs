//! Native binary dataset format, version 1. All integers and floats are
//! little-endian.
//!
//! ```text
//! magic        8 bytes   "HMLDSET\0"
//! version      u32       1
//! split        u8        0 = train, 1 = valid, 2 = test
//! n_nodes      u32
//! node ids     n_nodes × (u32 byte length, UTF-8 bytes)
//! n_edges      u32
//! edges        n_edges × (u32 parent index, u32 child index)
//! n_rows       u64
//! n_features   u32
//! features     n_rows × n_features f64, row-major
//! labels       n_rows × n_nodes u8 (0/1), row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LabelMatrix};

pub const MAGIC: &[u8; 8] = b"HMLDSET\0";
pub const VERSION: u32 = 1;

const MAX_STRING: usize = 1 << 20;

pub fn write_dataset<W: Write>(mut w: W, d: &Dataset) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(match d.split {
        SplitTag::Train => 0,
        SplitTag::Valid => 1,
        SplitTag::Test => 2,
    })?;
    write_hierarchy(&mut w, &d.hierarchy)?;
    w.write_u64::<LittleEndian>(d.len() as u64)?;
    w.write_u32::<LittleEndian>(len_u32(d.n_features())?)?;
    for &v in d.features.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &v in d.labels.view().iter() {
        w.write_u8(v)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a native dataset file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let split = match r.read_u8()? {
        0 => SplitTag::Train,
        1 => SplitTag::Valid,
        2 => SplitTag::Test,
        t => return Err(Error::Format(format!("bad split tag {t}"))),
    };
    let hierarchy = Arc::new(read_hierarchy(&mut r)?);
    let n_rows = usize::try_from(r.read_u64::<LittleEndian>()?).map_err(|_| Error::Format("row count overflow".into()))?;
    let n_feat = r.read_u32::<LittleEndian>()? as usize;
    let n_nodes = hierarchy.len();
    if n_nodes == 0 {
        return Err(Error::Format("dataset declares no nodes".into()));
    }
    let mut feats = Vec::new();
    for _ in 0..n_rows.checked_mul(n_feat).ok_or_else(|| Error::Format("size overflow".into()))? {
        feats.push(r.read_f64::<LittleEndian>()?);
    }
    let n_labels = n_rows.checked_mul(n_nodes).ok_or_else(|| Error::Format("size overflow".into()))?;
    let mut labels = Vec::new();
    r.by_ref().take(n_labels as u64).read_to_end(&mut labels)?;
    if labels.len() != n_labels {
        return Err(Error::Format("truncated label block".into()));
    }
    if labels.iter().any(|&v| v > 1) {
        return Err(Error::Format("labels must be 0 or 1".into()));
    }
    let features = Array2::from_shape_vec((n_rows, n_feat), feats).map_err(|e| Error::Format(e.to_string()))?;
    let labels = Array2::from_shape_vec((n_rows, n_nodes), labels).map_err(|e| Error::Format(e.to_string()))?;
    let labels = LabelMatrix::from_closed(labels);
    if !labels.is_closed_under(&hierarchy) {
        return Err(Error::Format("labels are not closed under ancestors".into()));
    }
    Dataset::new(features, labels, hierarchy, split)
}

pub(crate) fn write_hierarchy<W: Write>(w: &mut W, h: &Hierarchy) -> Result<()> {
    w.write_u32::<LittleEndian>(len_u32(h.len())?)?;
    for id in h.node_ids() {
        write_str(w, id)?;
    }
    w.write_u32::<LittleEndian>(len_u32(h.edges().len())?)?;
    for &(p, c) in h.edges() {
        w.write_u32::<LittleEndian>(len_u32(p)?)?;
        w.write_u32::<LittleEndian>(len_u32(c)?)?;
    }
    Ok(())
}

pub(crate) fn read_hierarchy<R: Read>(r: &mut R) -> Result<Hierarchy> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut ids = Vec::new();
    for _ in 0..n {
        ids.push(read_str(r)?);
    }
    let n_edges = r.read_u32::<LittleEndian>()? as usize;
    let mut edges = Vec::new();
    for _ in 0..n_edges {
        let p = r.read_u32::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        edges.push((p, c));
    }
    Hierarchy::from_indices(ids, edges)
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(len_u32(s.len())?)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > MAX_STRING {
        return Err(Error::Format(format!("string of {len} bytes is too long")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

pub(crate) fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in u32")))
}

pub fn save(path: &Path, d: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, d)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    read_dataset(bytes.as_slice())
}
