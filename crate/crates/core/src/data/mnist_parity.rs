use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::idx::{MnistPools, MnistSource};
use super::palette::PALETTE;
use super::transform::{colorize_value, resize_bilinear, rotate_about_center};
use super::{
    balanced_labels, sample_rng, DatasetFile, DatasetMeta, GenConfig, ObjectMeta, SampleMeta, SourceRef, Split,
    SplitCounts,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistParityConfig {
    pub counts: SplitCounts,
    pub image_size: usize,
    /// Blocks per side.
    pub grid: usize,
    pub scales: Vec<usize>,
    pub rotations: Vec<u32>,
    pub master_seed: u64,
}

impl Default for MnistParityConfig {
    fn default() -> Self {
        MnistParityConfig {
            counts: SplitCounts { train: 30_000, val: 5_000, test: 5_000 },
            image_size: 64,
            grid: 2,
            scales: vec![20, 22, 24, 26, 28],
            rotations: vec![0, 5, 10, 15, 20, 25, 30],
            master_seed: 0,
        }
    }
}

impl MnistParityConfig {
    pub fn block_size(&self) -> usize {
        self.image_size / self.grid.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("mnist-parity: {m}")));
        if self.grid < 2 || !self.image_size.is_multiple_of(self.grid) {
            return bad(format!(
                "image_size {} must split into a {}x{} grid with at least 2 blocks",
                self.image_size, self.grid, self.grid
            ));
        }
        if self.scales.is_empty() || self.rotations.is_empty() {
            return bad("scales and rotations must be non-empty".into());
        }
        if let Some(s) = self.scales.iter().find(|&&s| s == 0 || s > self.block_size()) {
            return bad(format!("scale {s} does not fit a {} px block", self.block_size()));
        }
        for sp in Split::ALL {
            if self.counts.get(sp) == 0 {
                return bad(format!("{sp} count must be positive"));
            }
        }
        Ok(())
    }
}

/// Ordered digit-class pairs whose parity relation yields `label`.
pub fn parity_class_pairs(label: u8) -> Vec<(u8, u8)> {
    let mut out = Vec::with_capacity(50);
    for a in 0..10u8 {
        for b in 0..10u8 {
            if super::mnist_parity_label(a, b) == label {
                out.push((a, b));
            }
        }
    }
    out
}

struct Rendered {
    image: Vec<u8>,
    meta: SampleMeta,
}

fn render_sample(
    cfg: &MnistParityConfig,
    pool: &MnistSource,
    by_class: &[Vec<usize>; 10],
    pairs: &[Vec<(u8, u8)>; 2],
    split: Split,
    index: usize,
    label: u8,
) -> Result<Rendered> {
    let mut rng = sample_rng(cfg.master_seed, split, index);
    let (a, b) = pairs[label as usize][rng.random_range(0..pairs[label as usize].len())];

    let class_a = &by_class[a as usize];
    let class_b = &by_class[b as usize];
    let ia = class_a[rng.random_range(0..class_a.len())];
    let ib = if a == b {
        // Distinct exemplar of the same class.
        let j = rng.random_range(0..class_b.len() - 1);
        let k = class_b.iter().position(|&i| i == ia).expect("exemplar from its own class");
        class_b[if j >= k { j + 1 } else { j }]
    } else {
        class_b[rng.random_range(0..class_b.len())]
    };

    let mut looks = [(0usize, 0usize, 0u32); 2];
    for look in &mut looks {
        let color = rng.random_range(0..PALETTE.len());
        let scale = cfg.scales[rng.random_range(0..cfg.scales.len())];
        let rotation = cfg.rotations[rng.random_range(0..cfg.rotations.len())];
        *look = (color, scale, rotation);
    }
    let blocks = sample_indices(&mut rng, cfg.grid * cfg.grid, 2).into_vec();

    let side = cfg.image_size;
    let bs = cfg.block_size();
    let mut image = vec![0u8; 3 * side * side];
    let mut objects = Vec::with_capacity(2);
    for (slot, (digit, pool_index)) in [(a, ia), (b, ib)].into_iter().enumerate() {
        let (color, s, rotation) = looks[slot];
        let oy = rng.random_range(0..=bs - s);
        let ox = rng.random_range(0..=bs - s);
        let rotated = rotate_about_center(pool.image(pool_index), pool.rows, pool.cols, rotation as f64);
        let gray = resize_bilinear(&rotated, pool.rows, pool.cols, s, s);
        let obj = ObjectMeta {
            identity: digit,
            source: Some(SourceRef {
                pool: split,
                pool_index,
                file: pool.file,
                file_index: pool.file_offset + pool_index,
            }),
            block: blocks[slot],
            offset: [oy, ox],
            size: [s, s],
            scale: s,
            rotation,
            color,
        };
        let [y0, x0] = obj.origin(cfg.grid, bs);
        for (c, &channel) in PALETTE[color].iter().enumerate() {
            let plane = &mut image[c * side * side..(c + 1) * side * side];
            for y in 0..s {
                for x in 0..s {
                    plane[(y0 + y) * side + x0 + x] = colorize_value(gray[y * s + x], channel);
                }
            }
        }
        objects.push(obj);
    }
    Ok(Rendered { image, meta: SampleMeta { label, objects } })
}

/// Generates one split from its own digit pool.
pub fn generate_mnist_parity(cfg: &MnistParityConfig, pools: &MnistPools, split: Split) -> Result<DatasetFile> {
    cfg.validate()?;
    let pool = pools.pool(split);
    if pool.split != split {
        return Err(Error::Generation(format!("digit pool is tagged {} but split {split} was requested", pool.split)));
    }
    let by_class = pool.by_class();
    for (d, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Generation(format!(
                "{split} pool has {} exemplars of digit {d}; need at least 2",
                members.len()
            )));
        }
    }
    let pairs = [parity_class_pairs(0), parity_class_pairs(1)];
    let n = cfg.counts.get(split);
    let labels = balanced_labels(cfg.master_seed, split, n);
    let rendered: Vec<Rendered> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| render_sample(cfg, pool, &by_class, &pairs, split, i, label))
        .collect::<Result<_>>()?;

    let side = cfg.image_size;
    let mut images = Vec::with_capacity(n * 3 * side * side);
    let mut samples = Vec::with_capacity(n);
    for r in rendered {
        images.extend_from_slice(&r.image);
        samples.push(r.meta);
    }
    DatasetFile::new(
        [3, side, side],
        labels,
        images,
        DatasetMeta { split, master_seed: cfg.master_seed, config: GenConfig::MnistParity(cfg.clone()), samples },
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::super::idx::MnistFile;
    use super::*;

    /// Small synthetic digit pools: digit `d` is a filled square whose side
    /// grows with `d`, so every exemplar is non-empty and distinguishable.
    pub(crate) fn toy_pools(per_class: usize) -> MnistPools {
        let make = |split: Split, file: MnistFile, salt: u8| {
            let mut images = Vec::new();
            let mut labels = Vec::new();
            for k in 0..per_class {
                for d in 0..10u8 {
                    let mut img = vec![0u8; 28 * 28];
                    let r = 3 + d as usize;
                    for y in 14 - r..14 + r {
                        for x in 14 - r / 2..14 + r / 2 {
                            img[y * 28 + x] = 255 - (k as u8 * 7 + salt) % 60;
                        }
                    }
                    images.extend(img);
                    labels.push(d);
                }
            }
            MnistSource {
                split,
                file,
                file_offset: if split == Split::Val { 1000 } else { 0 },
                rows: 28,
                cols: 28,
                images,
                labels,
            }
        };
        MnistPools {
            train: make(Split::Train, MnistFile::Train, 1),
            val: make(Split::Val, MnistFile::Train, 2),
            test: make(Split::Test, MnistFile::Test, 3),
        }
    }

    fn small_cfg(n: usize) -> MnistParityConfig {
        MnistParityConfig { counts: SplitCounts { train: n, val: n, test: n }, master_seed: 11, ..Default::default() }
    }

    #[test]
    fn class_pairs_are_fifty_each() {
        for label in [0, 1] {
            let p = parity_class_pairs(label);
            assert_eq!(p.len(), 50);
            assert!(p.iter().all(|&(a, b)| super::super::mnist_parity_label(a, b) == label));
        }
    }

    #[test]
    fn samples_follow_oracle_and_ranges() {
        let pools = toy_pools(4);
        let cfg = small_cfg(40);
        for split in Split::ALL {
            let ds = generate_mnist_parity(&cfg, &pools, split).unwrap();
            assert_eq!(ds.len(), 40);
            assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 20);
            for (i, s) in ds.meta.samples.iter().enumerate() {
                assert_eq!(s.label, ds.labels[i]);
                let ids: Vec<u8> = s.objects.iter().map(|o| o.identity).collect();
                assert_eq!(super::super::mnist_parity_label(ids[0], ids[1]), s.label);
                assert_ne!(s.objects[0].block, s.objects[1].block);
                for o in &s.objects {
                    assert!(cfg.scales.contains(&o.scale));
                    assert!(cfg.rotations.contains(&o.rotation));
                    assert!(o.offset[0] + o.scale <= 32 && o.offset[1] + o.scale <= 32);
                    let src = o.source.unwrap();
                    assert_eq!(src.pool, split);
                    assert_eq!(pools.pool(split).labels[src.pool_index], o.identity);
                }
                let (a, b) = (s.objects[0].source.unwrap(), s.objects[1].source.unwrap());
                assert_ne!(a.pool_index, b.pool_index);
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let pools = toy_pools(3);
        let cfg = small_cfg(24);
        let a = generate_mnist_parity(&cfg, &pools, Split::Val).unwrap();
        let b = generate_mnist_parity(&cfg, &pools, Split::Val).unwrap();
        assert_eq!(a.encode(), b.encode());
        assert_eq!(a.meta, b.meta);
        let other = MnistParityConfig { master_seed: 12, ..cfg };
        assert_ne!(generate_mnist_parity(&other, &pools, Split::Val).unwrap().encode(), a.encode());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let pools = toy_pools(3);
        let cfg = small_cfg(30);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let multi = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| generate_mnist_parity(&cfg, &pools, Split::Train).unwrap());
        let b = multi.install(|| generate_mnist_parity(&cfg, &pools, Split::Train).unwrap());
        assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn rejects_bad_config_and_thin_pools() {
        let mut cfg = small_cfg(4);
        cfg.scales = vec![40];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut pools = toy_pools(1);
        let cfg = small_cfg(4);
        assert!(matches!(generate_mnist_parity(&cfg, &pools, Split::Test), Err(Error::Generation(_))));
        pools.test.split = Split::Train;
        assert!(generate_mnist_parity(&cfg, &pools, Split::Test).is_err());
    }
}
