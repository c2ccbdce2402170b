//! Binary dataset container plus its JSON metadata sidecar.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::DatasetMeta;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"RMXD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Labels, C×H×W u8 images (sample-major) and per-sample metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    /// `[c, h, w]` of every image.
    pub dims: [usize; 3],
    pub labels: Vec<u8>,
    pub images: Vec<u8>,
    pub meta: DatasetMeta,
}

/// `train.rmxd` → `train.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// SHA-256 of the encoded container, hex-encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

impl DatasetFile {
    pub fn new(dims: [usize; 3], labels: Vec<u8>, images: Vec<u8>, meta: DatasetMeta) -> Result<Self> {
        let per = dims.iter().product::<usize>();
        if images.len() != labels.len() * per {
            return Err(Error::shape(
                "dataset",
                format!("{} labels need {} image bytes, got {}", labels.len(), labels.len() * per, images.len()),
            ));
        }
        if meta.samples.len() != labels.len() {
            return Err(Error::Generation(format!(
                "{} labels but {} metadata records",
                labels.len(),
                meta.samples.len()
            )));
        }
        Ok(DatasetFile { dims, labels, images, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// A new dataset holding the listed samples in order.
    pub fn subset(&self, indices: &[usize]) -> Result<DatasetFile> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid("subset", format!("index {bad} out of range for {} samples", self.len())));
        }
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        let mut meta = self.meta.clone();
        meta.samples = indices.iter().map(|&i| self.meta.samples[i].clone()).collect();
        DatasetFile::new(self.dims, indices.iter().map(|&i| self.labels[i]).collect(), images, meta)
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> DatasetFile {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx).expect("prefix indices are in range")
    }

    /// Binary container bytes (without the sidecar).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.labels.len() + self.images.len());
        out.extend_from_slice(&DATASET_MAGIC);
        for v in [DATASET_VERSION as usize, self.len(), self.dims[0], self.dims[1], self.dims[2]] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.labels);
        out.extend_from_slice(&self.images);
        out
    }

    /// Parses container bytes into `(dims, labels, images)`.
    pub fn decode(bytes: &[u8]) -> Result<([usize; 3], Vec<u8>, Vec<u8>)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                what: "dataset header".into(),
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if bytes[..4] != DATASET_MAGIC {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(DATASET_MAGIC),
                found: u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")),
            });
        }
        let version = le_u32(bytes, 4);
        if version != DATASET_VERSION {
            return Err(Error::UnsupportedVersion { what: "dataset", found: version, supported: DATASET_VERSION });
        }
        let n = le_u32(bytes, 8) as usize;
        let dims = [le_u32(bytes, 12) as usize, le_u32(bytes, 16) as usize, le_u32(bytes, 20) as usize];
        let expected = HEADER_LEN + n + n * dims.iter().product::<usize>();
        if bytes.len() != expected {
            return Err(Error::Truncated {
                what: if bytes.len() < expected { "dataset" } else { "dataset (trailing bytes)" }.into(),
                expected: expected as u64,
                actual: bytes.len() as u64,
            });
        }
        let labels = bytes[HEADER_LEN..HEADER_LEN + n].to_vec();
        let images = bytes[HEADER_LEN + n..].to_vec();
        Ok((dims, labels, images))
    }

    /// Writes the container and its sidecar; returns the content hash.
    pub fn write(&self, path: &Path) -> Result<String> {
        let bytes = self.encode();
        std::fs::write(path, &bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_vec(&self.meta)?;
        std::fs::write(&side, json).map_err(|e| Error::io(format!("writing {}", side.display()), e))?;
        Ok(content_hash(&bytes))
    }

    /// Reads a container and its (required) sidecar.
    pub fn read(path: &Path) -> Result<DatasetFile> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let (dims, labels, images) = Self::decode(&bytes)?;
        let side = sidecar_path(path);
        let json =
            std::fs::read(&side).map_err(|e| Error::io(format!("reading metadata sidecar {}", side.display()), e))?;
        let meta: DatasetMeta = serde_json::from_slice(&json)?;
        DatasetFile::new(dims, labels, images, meta)
    }
}
