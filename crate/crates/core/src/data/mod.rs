//! Synthetic relational-reasoning datasets: MNIST Parity and colorized
//! Pentomino, their label oracles, and the on-disk container.

mod container;
mod export;
mod idx;
mod mnist_parity;
mod palette;
mod pentomino;
mod sprites;
mod transform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[cfg(test)]
pub(crate) use mnist_parity::tests as mnist_parity_tests;

pub use container::{content_hash, sidecar_path, DatasetFile, DATASET_MAGIC, DATASET_VERSION};
pub use export::{export_png, meta_summary};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_mnist_dir, parse_idx, parse_idx_images, parse_idx_labels, read_maybe_gz,
    split_pools, IdxImages, MnistFile, MnistPools, MnistSource, MNIST_SIDE, MNIST_VAL_POOL,
};
pub use mnist_parity::{generate_mnist_parity, parity_class_pairs, MnistParityConfig};
pub use palette::PALETTE;
pub use pentomino::{generate_pentomino, PentominoConfig};
pub use sprites::{pentomino_mask, pentomino_names, Mask, PENTOMINO_TABLE};
pub use transform::{colorize, colorize_value, resize_bilinear, rotate_about_center};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    MnistParity,
    Pentomino,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::MnistParity => "mnist-parity",
            DatasetKind::Pentomino => "pentomino",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-parity" => Ok(DatasetKind::MnistParity),
            "pentomino" => Ok(DatasetKind::Pentomino),
            _ => Err(Error::Config(format!("unknown dataset {s:?} (expected mnist-parity or pentomino)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn set(&mut self, split: Split, n: usize) {
        match split {
            Split::Train => self.train = n,
            Split::Val => self.val = n,
            Split::Test => self.test = n,
        }
    }
}

/// Where an MNIST digit came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub pool: Split,
    pub pool_index: usize,
    pub file: MnistFile,
    pub file_index: usize,
}

/// One placed object. `offset` is `[y, x]` inside the block, `size` is the
/// `[h, w]` footprint in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    /// Digit value, or index into the sprite list of the config.
    pub identity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceRef>,
    pub block: usize,
    pub offset: [usize; 2],
    pub size: [usize; 2],
    pub scale: usize,
    pub rotation: u32,
    pub color: usize,
}

impl ObjectMeta {
    /// Top-left pixel `[y, x]` in the full image.
    pub fn origin(&self, grid: usize, block_size: usize) -> [usize; 2] {
        [(self.block / grid) * block_size + self.offset[0], (self.block % grid) * block_size + self.offset[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub label: u8,
    pub objects: Vec<ObjectMeta>,
}

/// Generator configuration echoed into every sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dataset", rename_all = "kebab-case")]
pub enum GenConfig {
    MnistParity(MnistParityConfig),
    Pentomino(PentominoConfig),
}

impl GenConfig {
    pub fn kind(&self) -> DatasetKind {
        match self {
            GenConfig::MnistParity(_) => DatasetKind::MnistParity,
            GenConfig::Pentomino(_) => DatasetKind::Pentomino,
        }
    }

    pub fn master_seed(&self) -> u64 {
        match self {
            GenConfig::MnistParity(c) => c.master_seed,
            GenConfig::Pentomino(c) => c.master_seed,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        match self {
            GenConfig::MnistParity(c) => c.counts,
            GenConfig::Pentomino(c) => c.counts,
        }
    }

    pub fn counts_mut(&mut self) -> &mut SplitCounts {
        match self {
            GenConfig::MnistParity(c) => &mut c.counts,
            GenConfig::Pentomino(c) => &mut c.counts,
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            GenConfig::MnistParity(c) => c.image_size,
            GenConfig::Pentomino(c) => c.image_size,
        }
    }

    /// `(grid, block_size)`.
    pub fn layout(&self) -> (usize, usize) {
        match self {
            GenConfig::MnistParity(c) => (c.grid, c.image_size / c.grid),
            GenConfig::Pentomino(c) => (c.grid, c.image_size / c.grid),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GenConfig::MnistParity(c) => c.validate(),
            GenConfig::Pentomino(c) => c.validate(),
        }
    }
}

/// Sidecar contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub split: Split,
    pub master_seed: u64,
    pub config: GenConfig,
    pub samples: Vec<SampleMeta>,
}

/// 1 iff both digits share parity.
pub fn mnist_parity_label(a: u8, b: u8) -> u8 {
    (a % 2 == b % 2) as u8
}

/// 0 iff every sprite has the same type.
pub fn pentomino_label(types: &[u8]) -> u8 {
    match types.split_first() {
        Some((first, rest)) => rest.iter().any(|t| t != first) as u8,
        None => 0,
    }
}

/// Recomputes a label from object identities alone.
pub fn oracle_label(kind: DatasetKind, objects: &[ObjectMeta]) -> Result<u8> {
    let ids: Vec<u8> = objects.iter().map(|o| o.identity).collect();
    match kind {
        DatasetKind::MnistParity => match ids.as_slice() {
            [a, b] => Ok(mnist_parity_label(*a, *b)),
            _ => Err(Error::Generation(format!("parity sample has {} digits", ids.len()))),
        },
        DatasetKind::Pentomino => Ok(pentomino_label(&ids)),
    }
}

/// Exactly balanced label vector of length `n` (zeros first), shuffled by
/// the split's label stream.
pub(crate) fn balanced_labels(master_seed: u64, split: Split, n: usize) -> Vec<u8> {
    use rand::seq::SliceRandom;
    let mut labels: Vec<u8> = (0..n).map(|i| (i >= n / 2) as u8).collect();
    let mut rng = crate::rng::stream(master_seed, &format!("labels/{split}"), 0);
    labels.shuffle(&mut rng);
    labels
}

pub(crate) fn sample_rng(master_seed: u64, split: Split, index: usize) -> crate::rng::StreamRng {
    crate::rng::stream(master_seed, &format!("sample/{split}"), index as u64)
}
