//! Versioned binary checkpoint.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header,
//! then raw little-endian `f64` tensors (embeddings, then `w1, w2, w3` of each
//! module in header order). Floats are stored as raw bits so a round trip is
//! exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Hyperparams, ReasonerModel, RelationModule};
use crate::error::{Error, Result};
use crate::graph::RelationId;
use crate::miner::Pattern;

const MAGIC: &[u8; 8] = b"PATHREC\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    num_entities: usize,
    hyper: Hyperparams,
    patterns: Vec<Pattern>,
    modules: Vec<RelationId>,
    meta: BTreeMap<String, String>,
}

fn push_tensor(buf: &mut Vec<u8>, a: &Array2<f64>) {
    for v in a.iter() {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let raw = self.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), data).expect("sized above"))
    }
}

/// Writes `model` with free-form `meta` (fingerprints, config hash).
pub fn save_checkpoint(path: &Path, model: &ReasonerModel, meta: &BTreeMap<String, String>) -> Result<()> {
    let header = Header {
        num_entities: model.num_entities(),
        hyper: model.hyper.clone(),
        patterns: model.patterns.clone(),
        modules: model.modules.keys().copied().collect(),
        meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    push_tensor(&mut buf, &model.embeddings.as_standard_layout().to_owned());
    for m in model.modules.values() {
        push_tensor(&mut buf, &m.w1);
        push_tensor(&mut buf, &m.w2);
        push_tensor(&mut buf, &m.w3);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ReasonerModel, BTreeMap<String, String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let d = header.hyper.dim;
    let h = header.hyper.hidden;
    let embeddings = r.tensor(header.num_entities, d)?;
    let mut modules = BTreeMap::new();
    for rel in &header.modules {
        let m = RelationModule {
            w1: r.tensor(2 * d, h)?,
            w2: r.tensor(h, h)?,
            w3: r.tensor(h, d)?,
        };
        modules.insert(*rel, m);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((
        ReasonerModel {
            hyper: header.hyper,
            embeddings,
            modules,
            patterns: header.patterns,
        },
        header.meta,
    ))
}
