//! Model checkpoints: a JSON manifest next to a raw little-endian f64 blob.
//!
//! The manifest records parameter names, shapes, element offsets into the
//! blob, the training seed, arbitrary hyperparameter JSON, and an FNV-1a
//! hash of the blob bytes so silent corruption is caught at load time.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";

/// FNV-1a over raw bytes. Used both for checkpoint integrity and for
/// deriving per-role seed streams from string tags.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    Json(serde_json::Error),
    /// Manifest and blob disagree (bad hash, bad offsets, short blob).
    Corrupt(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "checkpoint io error: {e}"),
            CheckpointError::Json(e) => write!(f, "checkpoint manifest error: {e}"),
            CheckpointError::Corrupt(msg) => write!(f, "checkpoint corrupt: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

impl From<serde_json::Error> for CheckpointError {
    fn from(e: serde_json::Error) -> Self {
        CheckpointError::Json(e)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the blob, counted in f64 elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    /// FNV-1a of the blob bytes, hex with 0x prefix.
    content_hash: String,
    hyperparameters: serde_json::Value,
    params: Vec<ParamEntry>,
}

/// A checkpoint read back from disk, parameters in manifest order.
#[derive(Debug)]
pub struct LoadedParams {
    pub params: Vec<(String, Matrix)>,
    pub seed: u64,
    pub hyperparameters: serde_json::Value,
    /// Hash of the blob as verified at load time.
    pub content_hash: u64,
}

impl LoadedParams {
    pub fn take(&mut self, name: &str) -> Option<Matrix> {
        let idx = self.params.iter().position(|(n, _)| n == name)?;
        Some(self.params.remove(idx).1)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write `params` into `dir` (created if missing) and return the blob hash.
pub fn save_params(
    dir: &Path,
    params: &[(&str, &Matrix)],
    seed: u64,
    hyperparameters: &serde_json::Value,
) -> Result<u64, CheckpointError> {
    fs::create_dir_all(dir)?;

    let total: usize = params.iter().map(|(_, m)| m.data.len()).sum();
    let mut blob = Vec::with_capacity(total * 8);
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0usize;
    for (name, m) in params {
        entries.push(ParamEntry {
            name: (*name).to_string(),
            rows: m.rows,
            cols: m.cols,
            offset,
        });
        for v in &m.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += m.data.len();
    }

    let hash = fnv1a64(&blob);
    let manifest = Manifest {
        format_version: 1,
        seed,
        content_hash: format!("{hash:#018x}"),
        hyperparameters: hyperparameters.clone(),
        params: entries,
    };

    write_atomic(&dir.join(BLOB_FILE), &blob)?;
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(hash)
}

/// Read a checkpoint back, verifying the blob hash and every shape/offset.
pub fn load_params(dir: &Path) -> Result<LoadedParams, CheckpointError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let blob = fs::read(dir.join(BLOB_FILE))?;

    let hash = fnv1a64(&blob);
    let want = manifest
        .content_hash
        .trim_start_matches("0x")
        .trim_start_matches("0X");
    let want = u64::from_str_radix(want, 16)
        .map_err(|e| CheckpointError::Corrupt(format!("bad content_hash field: {e}")))?;
    if hash != want {
        return Err(CheckpointError::Corrupt(format!(
            "blob hash {hash:#018x} does not match manifest {:#018x}",
            want
        )));
    }
    if blob.len() % 8 != 0 {
        return Err(CheckpointError::Corrupt(format!(
            "blob length {} is not a multiple of 8",
            blob.len()
        )));
    }
    let n_elems = blob.len() / 8;

    let mut params = Vec::with_capacity(manifest.params.len());
    for e in &manifest.params {
        let len = e.rows * e.cols;
        let end = e.offset.checked_add(len).filter(|&end| end <= n_elems);
        let end = end.ok_or_else(|| {
            CheckpointError::Corrupt(format!(
                "param {} [{}x{} at {}] overruns blob of {} elements",
                e.name, e.rows, e.cols, e.offset, n_elems
            ))
        })?;
        let mut data = Vec::with_capacity(len);
        for i in e.offset..end {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&blob[i * 8..i * 8 + 8]);
            data.push(f64::from_le_bytes(buf));
        }
        params.push((e.name.clone(), Matrix::from_vec(e.rows, e.cols, data)));
    }

    Ok(LoadedParams {
        params,
        seed: manifest.seed,
        hyperparameters: manifest.hyperparameters,
        content_hash: hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn fnv1a64_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn roundtrip_preserves_bits_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let w = Matrix::from_vec(2, 3, vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE, 1e300, -0.5]);
        let b = Matrix::from_vec(1, 2, vec![0.125, 7.0]);
        let hp = json!({"hidden": 8, "lr": 1e-3});
        let hash = save_params(dir.path(), &[("w", &w), ("b", &b)], 42, &hp).unwrap();

        let loaded = load_params(dir.path()).unwrap();
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.content_hash, hash);
        assert_eq!(loaded.hyperparameters, hp);
        assert_eq!(loaded.params.len(), 2);
        assert_eq!(loaded.params[0].0, "w");
        assert_eq!(loaded.params[0].1.shape(), (2, 3));
        // Bit-exact, not approximately equal.
        for (a, b) in loaded.params[0].1.data.iter().zip(&w.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in loaded.params[1].1.data.iter().zip(&b.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn flipped_blob_byte_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = Matrix::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        save_params(dir.path(), &[("w", &w)], 0, &json!({})).unwrap();

        let blob_path = dir.path().join(BLOB_FILE);
        let mut blob = std::fs::read(&blob_path).unwrap();
        blob[3] ^= 0x01;
        std::fs::write(&blob_path, &blob).unwrap();

        match load_params(dir.path()) {
            Err(CheckpointError::Corrupt(msg)) => assert!(msg.contains("hash")),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn overrunning_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = Matrix::from_vec(1, 2, vec![1.0, 2.0]);
        save_params(dir.path(), &[("w", &w)], 0, &json!({})).unwrap();

        // Rewrite the manifest to claim a larger shape than the blob holds,
        // keeping the hash valid so the shape check is what fires.
        let man_path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&man_path).unwrap();
        let text = text.replace("\"cols\": 2", "\"cols\": 9");
        std::fs::write(&man_path, text).unwrap();

        match load_params(dir.path()) {
            Err(CheckpointError::Corrupt(msg)) => assert!(msg.contains("overruns")),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        match load_params(dir.path()) {
            Err(CheckpointError::Io(_)) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn take_pulls_named_param() {
        let dir = tempfile::tempdir().unwrap();
        let w = Matrix::from_vec(1, 1, vec![5.0]);
        save_params(dir.path(), &[("w", &w)], 0, &json!({})).unwrap();
        let mut loaded = load_params(dir.path()).unwrap();
        assert_eq!(loaded.take("w").unwrap().data, vec![5.0]);
        assert!(loaded.take("w").is_none());
    }
}
