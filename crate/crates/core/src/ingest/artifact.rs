//! Checksummed persistence for intermediate pipeline products.
//!
//! Envelope: `"PRLA" | version u16 | kind_len u16 | kind | payload_len u64 |
//! payload (canonical JSON) | sha256(payload)`. Struct fields serialize in
//! declaration order and maps are ordered, so identical content yields
//! identical bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{PrlError, Result};

const MAGIC: &[u8; 4] = b"PRLA";
const VERSION: u16 = 1;

/// A pipeline product that can be written to the artifact store.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_artifact<A: Artifact>(artifact: &A) -> Result<(Vec<u8>, String)> {
    let payload = serde_json::to_vec(artifact)?;
    let digest = Sha256::digest(&payload);
    let mut out = Vec::with_capacity(payload.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(A::KIND.len() as u16).to_le_bytes());
    out.extend_from_slice(A::KIND.as_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&digest);
    Ok((out, hex::encode(digest)))
}

/// Writes the artifact and returns the hex SHA-256 of its payload.
pub fn persist_artifact<A: Artifact>(artifact: &A, path: &Path) -> Result<String> {
    let (bytes, checksum) = encode_artifact(artifact)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PrlError::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| PrlError::io(path, e))?;
    Ok(checksum)
}

pub fn decode_artifact<A: Artifact>(bytes: &[u8], path: &Path) -> Result<A> {
    let bad = |msg: &str| PrlError::Validation(format!("{}: {msg}", path.display()));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not an artifact file"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported artifact version {version}")));
    }
    let klen = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let kind_end = 8 + klen;
    let kind = bytes.get(8..kind_end).ok_or_else(|| bad("truncated kind"))?;
    if kind != A::KIND.as_bytes() {
        return Err(bad(&format!(
            "artifact kind '{}' where '{}' expected",
            String::from_utf8_lossy(kind),
            A::KIND
        )));
    }
    let len_bytes = bytes.get(kind_end..kind_end + 8).ok_or_else(|| bad("truncated length"))?;
    let plen = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let pstart = kind_end + 8;
    let payload = bytes.get(pstart..pstart + plen).ok_or_else(|| bad("truncated payload"))?;
    let stored = bytes
        .get(pstart + plen..pstart + plen + 32)
        .ok_or_else(|| bad("truncated checksum"))?;
    let found = Sha256::digest(payload);
    if found.as_slice() != stored {
        return Err(PrlError::Checksum {
            path: path.to_path_buf(),
            expected: hex::encode(stored),
            found: hex::encode(found),
        });
    }
    Ok(serde_json::from_slice(payload)?)
}

pub fn load_artifact<A: Artifact>(path: &Path) -> Result<A> {
    let bytes = std::fs::read(path).map_err(|e| PrlError::io(path, e))?;
    decode_artifact(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Toy {
        xs: Vec<f64>,
        name: String,
    }
    impl Artifact for Toy {
        const KIND: &'static str = "toy";
    }

    #[test]
    fn stable_checksum_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let t = Toy {
            xs: vec![0.1, 1.0 / 3.0, -2.5e-300],
            name: "x".into(),
        };
        let p = dir.path().join("a.prla");
        let c1 = persist_artifact(&t, &p).unwrap();
        let c2 = persist_artifact(&t, &dir.path().join("b.prla")).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(load_artifact::<Toy>(&p).unwrap(), t);

        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_artifact::<Toy>(&p), Err(PrlError::Checksum { .. })));
    }
}
