//! MNIST IDX files (raw or gzip-compressed).

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Number of images taken from the end of the official training file to form
/// the validation pool.
pub const MNIST_VAL_POOL: usize = 10_000;

pub const MNIST_SIDE: usize = 28;

/// Which official file a digit was read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MnistFile {
    Train,
    Test,
}

/// One pool of 28×28 digits with labels, tagged with its split and its
/// position in the official file.
#[derive(Clone, Debug)]
pub struct MnistSource {
    pub split: Split,
    pub file: MnistFile,
    /// Index of `images[0]` in the official file.
    pub file_offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistSource {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[i * n..(i + 1) * n]
    }

    /// Indices of every digit of each class 0–9.
    pub fn by_class(&self) -> [Vec<usize>; 10] {
        let mut out: [Vec<usize>; 10] = Default::default();
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize % 10].push(i);
        }
        out
    }
}

/// The three disjoint digit pools: first 50,000 official training digits,
/// the last 10,000 official training digits, and the official test set.
#[derive(Clone, Debug)]
pub struct MnistPools {
    pub train: MnistSource,
    pub val: MnistSource,
    pub test: MnistSource,
}

impl MnistPools {
    pub fn pool(&self, split: Split) -> &MnistSource {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Parsed IDX images: `count` images of `rows × cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| Error::Truncated {
        what: what.to_string(),
        expected: (at + 4) as u64,
        actual: bytes.len() as u64,
    })
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let need = header + len;
    if bytes.len() < need {
        return Err(Error::Truncated { what: what.to_string(), expected: need as u64, actual: bytes.len() as u64 });
    }
    Ok(&bytes[header..need])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, "idx images")?;
    let count = be_u32(bytes, 4, "idx images")? as usize;
    let rows = be_u32(bytes, 8, "idx images")? as usize;
    let cols = be_u32(bytes, 12, "idx images")? as usize;
    let pixels = payload(bytes, 16, count * rows * cols, "idx images")?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, "idx labels")?;
    let count = be_u32(bytes, 4, "idx labels")? as usize;
    Ok(payload(bytes, 8, count, "idx labels")?.to_vec())
}

/// Parses an image file and its label file together.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<(IdxImages, Vec<u8>)> {
    let images = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch { images: images.count, labels: labels.len() });
    }
    Ok((images, labels))
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(format!("inflating {}", path.display()), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn find_file(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for candidate in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(candidate);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        format!("looking for {stem}[.gz] in {}", dir.display()),
        std::io::Error::from(std::io::ErrorKind::NotFound),
    ))
}

fn slice_source(
    images: &IdxImages,
    labels: &[u8],
    split: Split,
    file: MnistFile,
    range: std::ops::Range<usize>,
) -> MnistSource {
    let n = images.rows * images.cols;
    MnistSource {
        split,
        file,
        file_offset: range.start,
        rows: images.rows,
        cols: images.cols,
        images: images.pixels[range.start * n..range.end * n].to_vec(),
        labels: labels[range].to_vec(),
    }
}

/// Builds the train/val/test pools from the official files (already parsed).
pub fn split_pools(train: (IdxImages, Vec<u8>), test: (IdxImages, Vec<u8>)) -> Result<MnistPools> {
    let (ti, tl) = train;
    if ti.count <= MNIST_VAL_POOL {
        return Err(Error::Generation(format!(
            "training file has {} digits; need more than {MNIST_VAL_POOL} to carve a validation pool",
            ti.count
        )));
    }
    let cut = ti.count - MNIST_VAL_POOL;
    let (si, sl) = test;
    Ok(MnistPools {
        train: slice_source(&ti, &tl, Split::Train, MnistFile::Train, 0..cut),
        val: slice_source(&ti, &tl, Split::Val, MnistFile::Train, cut..ti.count),
        test: slice_source(&si, &sl, Split::Test, MnistFile::Test, 0..si.count),
    })
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<MnistPools> {
    let load = |prefix: &str| -> Result<(IdxImages, Vec<u8>)> {
        let images = read_maybe_gz(&find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
        let labels = read_maybe_gz(&find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
        parse_idx(&images, &labels)
    };
    split_pools(load("train")?, load("t10k")?)
}

/// Serializes images to the IDX format (used for fixtures).
pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
