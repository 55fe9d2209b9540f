//! Dense tile embedding matrix and its binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PRLE" | version: u16 | N: u64 | D: u32 | N*D f32 row-major | N x (len: u32, utf-8 tile_id)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PrlError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PRLE";
pub const EMBEDDING_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    tile_ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
}

impl EmbeddingMatrix {
    pub fn new(tile_ids: Vec<String>, data: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(PrlError::Dimension("embedding dimension must be positive".into()));
        }
        if data.len() != tile_ids.len() * dim {
            return Err(PrlError::Dimension(format!(
                "{} tile ids x {dim} dims does not match {} values",
                tile_ids.len(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(PrlError::Validation(format!(
                "non-finite embedding value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingMatrix { tile_ids, data, dim })
    }

    pub fn len(&self) -> usize {
        self.tile_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tile_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tile_ids(&self) -> &[String] {
        &self.tile_ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            ids.push(self.tile_ids[r].clone());
        }
        EmbeddingMatrix {
            tile_ids: ids,
            data,
            dim: self.dim,
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        for id in &self.tile_ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let trunc = |what: &str| PrlError::Validation(format!("truncated embedding payload while reading {what}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| trunc("magic"))?;
        if &magic != EMBEDDING_MAGIC {
            return Err(PrlError::Validation("not an embedding file (bad magic)".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(|_| trunc("version"))?;
        let version = u16::from_le_bytes(b2);
        if version != EMBEDDING_VERSION {
            return Err(PrlError::Validation(format!("unsupported embedding version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| trunc("row count"))?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| trunc("dimension"))?;
        let d = u32::from_le_bytes(b4) as usize;
        let total = n
            .checked_mul(d)
            .and_then(|x| x.checked_mul(4))
            .ok_or_else(|| PrlError::Validation("embedding header overflows".into()))?;
        let mut raw = vec![0u8; total];
        r.read_exact(&mut raw).map_err(|_| trunc("values"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b4).map_err(|_| trunc("tile id length"))?;
            let len = u32::from_le_bytes(b4) as usize;
            let mut s = vec![0u8; len];
            r.read_exact(&mut s).map_err(|_| trunc("tile id"))?;
            ids.push(String::from_utf8(s).map_err(|_| PrlError::Validation("tile id is not utf-8".into()))?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| PrlError::io("<embedding>", e))? != 0 {
            return Err(PrlError::Validation("trailing bytes after embedding payload".into()));
        }
        EmbeddingMatrix::new(ids, data, d)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let f = std::fs::File::open(path).map_err(|e| PrlError::io(path, e))?;
    EmbeddingMatrix::read_from(&mut BufReader::new(f)).map_err(|e| e.with_context(path.display().to_string()))
}

pub fn write_embeddings(e: &EmbeddingMatrix, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|err| PrlError::io(parent, err))?;
    }
    let f = std::fs::File::create(path).map_err(|err| PrlError::io(path, err))?;
    let mut w = BufWriter::new(f);
    e.write_to(&mut w).and_then(|_| w.flush()).map_err(|err| PrlError::io(path, err))
}
