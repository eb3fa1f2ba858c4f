//! On-disk layout: `index.json` plus one `videos/<id>.bin` per video holding a
//! little-endian `u64` header `(N, T_f, D)` followed by `N*T_f*D` `f64`s.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Annotation, Dataset, DatasetConfig, VideoSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.json";

#[derive(Serialize, Deserialize)]
struct Entry {
    video_id: String,
    file: String,
    sha256: String,
    annotations: Vec<Annotation>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    config: DatasetConfig,
    train: Vec<Entry>,
    val: Vec<Entry>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * t.numel());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Result<Tensor> {
    let bad = || Error::InvalidArgument("truncated video file".into());
    let header = bytes.get(..24).ok_or_else(bad)?;
    let shape: Vec<usize> = header
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let body = &bytes[24..];
    let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(bad)?;
    if body.len() != 8 * numel {
        return Err(bad());
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(shape, data)
}

/// Writes the dataset under `dir`. An existing index is an error unless `force`.
pub fn save_dataset(ds: &Dataset, dir: &Path, force: bool) -> Result<()> {
    let index_path = dir.join(INDEX_FILE);
    if index_path.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; pass --force to overwrite",
            index_path.display()
        )));
    }
    fs::create_dir_all(dir.join("videos"))?;
    let write_split = |videos: &[VideoSample]| -> Result<Vec<Entry>> {
        videos
            .iter()
            .map(|v| {
                let bytes = encode(&v.snippets);
                let file = format!("videos/{}.bin", v.video_id);
                fs::write(dir.join(&file), &bytes)?;
                Ok(Entry {
                    video_id: v.video_id.clone(),
                    file,
                    sha256: hex_digest(&bytes),
                    annotations: v.annotations.clone(),
                })
            })
            .collect()
    };
    let train = write_split(&ds.train)?;
    let val = write_split(&ds.val)?;
    let index = Index { config: ds.config.clone(), train, val };
    fs::write(index_path, serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

/// Reads a dataset and verifies every video checksum.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let index: Index = serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
    let read_split = |entries: Vec<Entry>| -> Result<Vec<VideoSample>> {
        entries
            .into_iter()
            .map(|e| {
                let bytes = fs::read(dir.join(&e.file))?;
                if hex_digest(&bytes) != e.sha256 {
                    return Err(Error::InvalidArgument(format!("checksum mismatch for {}", e.file)));
                }
                let v = VideoSample { video_id: e.video_id, snippets: decode(&bytes)?, annotations: e.annotations };
                v.validate()?;
                Ok(v)
            })
            .collect()
    };
    Ok(Dataset { config: index.config, train: read_split(index.train)?, val: read_split(index.val)? })
}

/// SHA-256 of the index file.
pub fn index_checksum(dir: &Path) -> Result<String> {
    Ok(hex_digest(&fs::read(dir.join(INDEX_FILE))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let t = Tensor::new(vec![2, 1, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, 1e300]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 48);
        assert_eq!(decode(&bytes).unwrap(), t);
        assert!(decode(&bytes[..30]).is_err());
    }
}
