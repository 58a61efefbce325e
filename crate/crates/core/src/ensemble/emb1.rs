//! `EMB1` embedding interchange files.
//!
//! ```text
//! magic    4 bytes  "EMB1"
//! version  u8       1
//! count    u32 LE   number of records
//! dim      u32 LE   floats per record
//! per record:
//!   id_len u32 LE, id (UTF-8), dim x f32 LE
//! ```
//!
//! A JSON sidecar `<file>.json` carries `backbone`, `feature_width`,
//! `preprocessing`, `checksum` (lowercase hex SHA-256 of the whole binary
//! file) and optionally `weights`. Unknown sidecar keys are ignored.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u8 = 1;

/// Precomputed per-sample feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Table of zero vectors for `ids`.
    pub fn zeros<S: AsRef<str>>(dim: usize, ids: &[S]) -> Result<Self> {
        let mut t = Self::new(dim);
        for id in ids {
            t.insert(id.as_ref(), &vec![0.0; dim])?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, id: &str, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                "embedding table",
                format!("`{id}` has {} values, table width is {}", vector.len(), self.dim),
            ));
        }
        if self.index.contains_key(id) {
            return Err(Error::param(format!("duplicate embedding id `{id}`")));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.data.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(EMB1_MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (i, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<(usize, &[u8])> {
            if buf.len() - pos < n {
                return Err(corrupt(pos, format!("truncated: needed {n} more bytes")));
            }
            let at = pos;
            pos += n;
            Ok((at, &buf[at..at + n]))
        };
        let (_, magic) = take(4)?;
        if magic != EMB1_MAGIC {
            return Err(corrupt(0, "bad magic".into()));
        }
        let (at, v) = take(1)?;
        if v[0] != VERSION {
            return Err(corrupt(at, format!("unsupported version {}", v[0])));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        let count = u32_at(take(4)?.1);
        let dim = u32_at(take(4)?.1);
        let mut table = Self::new(dim);
        for _ in 0..count {
            let len = u32_at(take(4)?.1);
            let (at, raw) = take(len)?;
            let id = std::str::from_utf8(raw).map_err(|e| corrupt(at, e.to_string()))?;
            let (at, raw) = take(dim * 4)?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            table
                .insert(id, &vector)
                .map_err(|e| corrupt(at, e.to_string()))?;
        }
        if pos != buf.len() {
            return Err(corrupt(pos, "trailing bytes".into()));
        }
        Ok(table)
    }
}

fn corrupt(offset: usize, msg: String) -> Error {
    Error::Format {
        kind: "EMB1",
        offset,
        msg,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub backbone: String,
    pub feature_width: usize,
    pub preprocessing: String,
    /// Lowercase hex SHA-256 of the binary file.
    pub checksum: String,
    /// Exact pretrained weight identifier, when the exporter knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `<path>` and its sidecar.
pub fn write_emb1(table: &EmbeddingTable, path: &Path, backbone: &str, preprocessing: &str) -> Result<EmbeddingSidecar> {
    let bytes = table.to_bytes();
    let mut f = std::fs::File::create(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&bytes)?;
    let sidecar = EmbeddingSidecar {
        backbone: backbone.to_string(),
        feature_width: table.dim(),
        preprocessing: preprocessing.to_string(),
        checksum: sha256_hex(&bytes),
        weights: None,
    };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(sidecar)
}

/// Reads an `EMB1` file. When a sidecar exists, its checksum and width must match.
pub fn load_emb1(path: &Path) -> Result<(EmbeddingTable, Option<EmbeddingSidecar>)> {
    let bytes = read_file(path)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        let s: EmbeddingSidecar = serde_json::from_slice(&read_file(&side)?)?;
        let actual = sha256_hex(&bytes);
        if s.checksum != actual {
            return Err(corrupt(0, format!("checksum mismatch: sidecar {}, file {actual}", s.checksum)));
        }
        Some(s)
    } else {
        None
    };
    let table = EmbeddingTable::from_bytes(&bytes)?;
    if let Some(s) = &sidecar {
        if s.feature_width != table.dim() {
            return Err(corrupt(9, format!("sidecar width {} but file width {}", s.feature_width, table.dim())));
        }
    }
    Ok((table, sidecar))
}
