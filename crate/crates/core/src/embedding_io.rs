//! Embedding files: magic `OREOEMB1`, u32 LE count, u32 LE dim, then
//! `count × dim` LE f32 values; plus a sidecar CSV
//! `index,identity,set_id,occluded`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{OreoError, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"OREOEMB1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarRow {
    pub index: usize,
    pub identity: u32,
    pub set_id: String,
    pub occluded: u8,
}

pub fn encode_embeddings(rows: &[Vec<f32>]) -> Result<Vec<u8>> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(OreoError::Shape("embeddings differ in dimension".into()));
    }
    let mut buf = Vec::with_capacity(16 + rows.len() * dim * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in rows.iter().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<Vec<Vec<f32>>> {
    let bad = |reason: &str| OreoError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(bad("missing OREOEMB1 header"));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + count * dim * 4 {
        return Err(bad("payload length does not match count × dim"));
    }
    if dim == 0 {
        return Ok(vec![Vec::new(); count]);
    }
    Ok(bytes[16..]
        .chunks_exact(dim * 4)
        .map(|row| row.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        .collect())
}

/// Sidecar path for an embedding file: same stem, `.csv` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

pub fn write_embeddings(path: &Path, rows: &[Vec<f32>], ds: &Dataset) -> Result<()> {
    if rows.len() != ds.len() {
        return Err(OreoError::Shape(format!("{} embeddings for {} samples", rows.len(), ds.len())));
    }
    crate::image_io::write_all(path, &encode_embeddings(rows)?)?;
    let side = sidecar_path(path);
    let mut w = csv::Writer::from_path(&side)?;
    for (i, s) in ds.samples.iter().enumerate() {
        w.serialize(SidecarRow {
            index: i,
            identity: s.identity,
            set_id: s.set_id.clone().unwrap_or_default(),
            occluded: s.occluded as u8,
        })?;
    }
    w.flush().map_err(|e| OreoError::io(&side, e))?;
    Ok(())
}

/// Reads an embedding file and its sidecar; the two must agree on count.
pub fn read_embeddings(path: &Path) -> Result<(Vec<Vec<f32>>, Vec<SidecarRow>)> {
    let bytes = fs::read(path).map_err(|e| OreoError::io(path, e))?;
    let rows = decode_embeddings(&bytes, path)?;
    let side = sidecar_path(path);
    let mut rdr = csv::Reader::from_path(&side)?;
    let meta: Vec<SidecarRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if meta.len() != rows.len() {
        return Err(OreoError::Format {
            path: side,
            reason: format!("{} sidecar rows for {} embeddings", meta.len(), rows.len()),
        });
    }
    if let Some((k, r)) = meta.iter().enumerate().find(|(k, r)| r.index != *k) {
        return Err(OreoError::Format {
            path: side,
            reason: format!("row {k} has index {}", r.index),
        });
    }
    Ok((rows, meta))
}
