//! Parameter blobs: one raw little-endian `f32` file plus a JSON index of
//! `(name, shape, offset)` entries, offsets in bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::layers::Param;
use crate::real::Real;
use crate::{Error, Result};

pub const BLOB_FILE: &str = "params.f32";
pub const INDEX_FILE: &str = "params.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_params<T: Real>(dir: &Path, params: &[&Param<T>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut blob = Vec::new();
    let mut index = Vec::with_capacity(params.len());
    for p in params {
        index.push(IndexEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: blob.len(),
        });
        for v in p.value.data() {
            blob.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, blob).map_err(|e| io_err(&blob_path, e))?;
    let index_path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Format {
        path: index_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&index_path, json).map_err(|e| io_err(&index_path, e))
}

/// Load values into `params`, matching entries by name and checking shapes.
pub fn load_params<T: Real>(dir: &Path, params: Vec<&mut Param<T>>) -> Result<()> {
    let index_path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&index_path).map_err(|e| io_err(&index_path, e))?;
    let index: Vec<IndexEntry> = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: index_path.clone(),
        message: e.to_string(),
    })?;
    let blob_path: PathBuf = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| io_err(&blob_path, e))?;
    for p in params {
        let entry = index
            .iter()
            .find(|e| e.name == p.name)
            .ok_or_else(|| Error::Format {
                path: index_path.clone(),
                message: format!("missing parameter `{}`", p.name),
            })?;
        if entry.shape != p.value.shape() {
            return Err(Error::Format {
                path: index_path.clone(),
                message: format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    entry.shape,
                    p.value.shape()
                ),
            });
        }
        let end = entry.offset + 4 * p.value.len();
        let bytes = blob.get(entry.offset..end).ok_or_else(|| Error::Format {
            path: blob_path.clone(),
            message: format!("blob too short for `{}`", p.name),
        })?;
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = T::of(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64);
        }
    }
    Ok(())
}
