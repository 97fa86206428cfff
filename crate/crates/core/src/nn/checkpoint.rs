//! Binary checkpoint, version 1, little-endian.
//!
//! ```text
//! magic         8 bytes  "HMLCKPT\0"
//! version       u32      1
//! config        u32 byte length + UTF-8 TOML of the training config
//! config hash   32 bytes SHA-256 of the config bytes
//! hierarchy     u32 n_nodes, node ids (u32 length + UTF-8),
//!               u32 n_edges, edges (u32 parent, u32 child)
//! means         u32 count + f64 per numeric column (0 when unused)
//! mode          u8       0 = independent, 1 = shared trunk
//! trunk_frozen  u8
//! dropout       f64
//! n_members     u32
//! n_in, hidden, n_out  u32 each
//! members       per member: input W (n_in × hidden), input b, hidden W
//!               (hidden × hidden), hidden b, head W (hidden × n_out), head b;
//!               f64, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::ensemble::Ensemble;
use super::mlp::{Dense, Mlp, Trunk};
use crate::config::{EnsembleMode, TrainConfig};
use crate::data::native::{len_u32, read_hierarchy, read_str, write_hierarchy, write_str};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

pub const MAGIC: &[u8; 8] = b"HMLCKPT\0";
pub const VERSION: u32 = 1;

const MAX_DIM: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub hierarchy: Hierarchy,
    /// Training-column means for imputing missing ARFF values.
    pub column_means: Vec<f64>,
    pub ensemble: Ensemble,
}

/// Hex SHA-256 of the config's TOML form.
pub fn config_hash(cfg: &TrainConfig) -> String {
    Sha256::digest(cfg.to_toml().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_dense<W: Write>(w: &mut W, d: &Dense) -> Result<()> {
    for &v in d.w.iter().chain(d.b.iter()) {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_dense<R: Read>(r: &mut R, n_in: usize, n_out: usize) -> Result<Dense> {
    let mut read = |n: usize| -> Result<Vec<f64>> {
        let mut v = Vec::new();
        for _ in 0..n {
            v.push(r.read_f64::<LittleEndian>()?);
        }
        Ok(v)
    };
    let w = Array2::from_shape_vec((n_in, n_out), read(n_in * n_out)?).map_err(|e| Error::Format(e.to_string()))?;
    let b = Array1::from(read(n_out)?);
    Ok(Dense { w, b })
}

pub fn write_checkpoint<W: Write>(mut w: W, c: &Checkpoint) -> Result<()> {
    let toml = c.config.to_toml();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_str(&mut w, &toml)?;
    w.write_all(&Sha256::digest(toml.as_bytes()))?;
    write_hierarchy(&mut w, &c.hierarchy)?;
    w.write_u32::<LittleEndian>(len_u32(c.column_means.len())?)?;
    for &m in &c.column_means {
        w.write_f64::<LittleEndian>(m)?;
    }
    let e = &c.ensemble;
    w.write_u8(match e.mode {
        EnsembleMode::Independent => 0,
        EnsembleMode::SharedTrunk => 1,
    })?;
    w.write_u8(u8::from(e.trunk_frozen))?;
    w.write_f64::<LittleEndian>(e.members[0].dropout)?;
    w.write_u32::<LittleEndian>(len_u32(e.n_members())?)?;
    let m0 = &e.members[0];
    for d in [m0.n_in(), m0.n_hidden(), m0.n_out()] {
        w.write_u32::<LittleEndian>(len_u32(d)?)?;
    }
    for m in &e.members {
        for d in m.layers() {
            write_dense(&mut w, d)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let toml = read_str(&mut r)?;
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if Sha256::digest(toml.as_bytes()).as_slice() != hash {
        return Err(Error::Format("config hash mismatch".into()));
    }
    let config = TrainConfig::from_toml(&toml)?;
    let hierarchy = read_hierarchy(&mut r)?;
    let n_means = r.read_u32::<LittleEndian>()? as usize;
    let mut column_means = Vec::new();
    for _ in 0..n_means {
        column_means.push(r.read_f64::<LittleEndian>()?);
    }
    let mode = match r.read_u8()? {
        0 => EnsembleMode::Independent,
        1 => EnsembleMode::SharedTrunk,
        t => return Err(Error::Format(format!("bad ensemble mode {t}"))),
    };
    let trunk_frozen = match r.read_u8()? {
        0 => false,
        1 => true,
        t => return Err(Error::Format(format!("bad flag {t}"))),
    };
    let dropout = r.read_f64::<LittleEndian>()?;
    let n_members = r.read_u32::<LittleEndian>()? as usize;
    let n_in = r.read_u32::<LittleEndian>()? as usize;
    let hidden = r.read_u32::<LittleEndian>()? as usize;
    let n_out = r.read_u32::<LittleEndian>()? as usize;
    if n_members == 0 || [n_in, hidden, n_out].iter().any(|&d| d == 0 || d > MAX_DIM) {
        return Err(Error::Format("bad model dimensions".into()));
    }
    if n_out != hierarchy.len() {
        return Err(Error::Format(format!(
            "model has {n_out} outputs for {} nodes",
            hierarchy.len()
        )));
    }
    let mut members = Vec::new();
    for _ in 0..n_members {
        let input = read_dense(&mut r, n_in, hidden)?;
        let hidden_layer = read_dense(&mut r, hidden, hidden)?;
        let head = read_dense(&mut r, hidden, n_out)?;
        members.push(Mlp {
            trunk: Trunk {
                input,
                hidden: hidden_layer,
            },
            head,
            dropout,
        });
    }
    Ok(Checkpoint {
        config,
        hierarchy,
        column_means,
        ensemble: Ensemble {
            mode,
            trunk_frozen,
            members,
        },
    })
}

pub fn save(path: &Path, c: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, c)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(std::fs::read(path)?.as_slice())
}
