use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::palette::PALETTE;
use super::sprites::{pentomino_mask, pentomino_names, Mask};
use super::{
    balanced_labels, sample_rng, DatasetFile, DatasetMeta, GenConfig, ObjectMeta, SampleMeta, Split, SplitCounts,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PentominoConfig {
    pub counts: SplitCounts,
    pub image_size: usize,
    pub grid: usize,
    pub num_sprites: usize,
    /// Sprite names from the pentomino table; identities index this list.
    pub sprites: Vec<String>,
    pub rotations: Vec<u32>,
    pub scales: Vec<usize>,
    pub master_seed: u64,
}

impl Default for PentominoConfig {
    fn default() -> Self {
        PentominoConfig {
            counts: SplitCounts { train: 20_000, val: 5_000, test: 5_000 },
            image_size: 64,
            grid: 8,
            num_sprites: 3,
            sprites: pentomino_names(),
            rotations: vec![0, 90, 180, 270],
            scales: vec![1, 2],
            master_seed: 0,
        }
    }
}

impl PentominoConfig {
    pub fn block_size(&self) -> usize {
        self.image_size / self.grid.max(1)
    }

    pub fn masks(&self) -> Result<Vec<Mask>> {
        self.sprites
            .iter()
            .map(|n| pentomino_mask(n).ok_or_else(|| Error::Config(format!("pentomino: unknown sprite {n:?}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("pentomino: {m}")));
        if self.grid == 0 || !self.image_size.is_multiple_of(self.grid) {
            return bad(format!("image_size {} is not divisible into {} blocks per side", self.image_size, self.grid));
        }
        if self.num_sprites < 2 || self.num_sprites > self.grid * self.grid {
            return bad(format!("num_sprites {} must be in 2..={}", self.num_sprites, self.grid * self.grid));
        }
        if self.sprites.len() < 2 || self.sprites.len() > u8::MAX as usize {
            return bad("need at least 2 sprite types".into());
        }
        if self.rotations.is_empty() || self.scales.is_empty() {
            return bad("rotations and scales must be non-empty".into());
        }
        if let Some(r) = self.rotations.iter().find(|&&r| r % 90 != 0) {
            return bad(format!("rotation {r} is not a multiple of 90"));
        }
        if self.scales.contains(&0) {
            return bad("scale 0".into());
        }
        let bs = self.block_size();
        for (name, m) in self.sprites.iter().zip(self.masks()?) {
            for &r in &self.rotations {
                for &k in &self.scales {
                    let (h, w) = m.transformed_dims(r, k);
                    if h > bs || w > bs {
                        return bad(format!(
                            "sprite {name} at rotation {r} scale {k} is {h}x{w}, larger than a {bs} px block"
                        ));
                    }
                }
            }
        }
        for sp in Split::ALL {
            if self.counts.get(sp) == 0 {
                return bad(format!("{sp} count must be positive"));
            }
        }
        Ok(())
    }
}

/// Draws sprite types for a label: all equal for 0; otherwise a repeated
/// type everywhere except one uniformly placed odd slot.
fn draw_types(rng: &mut impl Rng, label: u8, num_types: usize, num_sprites: usize) -> Vec<u8> {
    let pair = rng.random_range(0..num_types);
    if label == 0 {
        return vec![pair as u8; num_sprites];
    }
    let mut odd = rng.random_range(0..num_types - 1);
    if odd >= pair {
        odd += 1;
    }
    let slot = rng.random_range(0..num_sprites);
    (0..num_sprites).map(|i| if i == slot { odd } else { pair } as u8).collect()
}

fn render_sample(
    cfg: &PentominoConfig,
    masks: &[Mask],
    split: Split,
    index: usize,
    label: u8,
) -> (Vec<u8>, SampleMeta) {
    let mut rng = sample_rng(cfg.master_seed, split, index);
    let types = draw_types(&mut rng, label, masks.len(), cfg.num_sprites);
    let blocks = sample_indices(&mut rng, cfg.grid * cfg.grid, cfg.num_sprites).into_vec();
    let side = cfg.image_size;
    let bs = cfg.block_size();
    let mut image = vec![0u8; 3 * side * side];
    let mut objects = Vec::with_capacity(cfg.num_sprites);
    for (slot, &t) in types.iter().enumerate() {
        let rotation = cfg.rotations[rng.random_range(0..cfg.rotations.len())];
        let scale = cfg.scales[rng.random_range(0..cfg.scales.len())];
        let color = rng.random_range(0..PALETTE.len());
        let m = masks[t as usize].rotate(rotation).scale(scale);
        let oy = rng.random_range(0..=bs - m.h);
        let ox = rng.random_range(0..=bs - m.w);
        let obj = ObjectMeta {
            identity: t,
            source: None,
            block: blocks[slot],
            offset: [oy, ox],
            size: [m.h, m.w],
            scale,
            rotation,
            color,
        };
        let [y0, x0] = obj.origin(cfg.grid, bs);
        for (c, &channel) in PALETTE[color].iter().enumerate() {
            let plane = &mut image[c * side * side..(c + 1) * side * side];
            for y in 0..m.h {
                for x in 0..m.w {
                    if m.get(y, x) {
                        plane[(y0 + y) * side + x0 + x] = channel;
                    }
                }
            }
        }
        objects.push(obj);
    }
    (image, SampleMeta { label, objects })
}

pub fn generate_pentomino(cfg: &PentominoConfig, split: Split) -> Result<DatasetFile> {
    cfg.validate()?;
    let masks = cfg.masks()?;
    let n = cfg.counts.get(split);
    let labels = balanced_labels(cfg.master_seed, split, n);
    let rendered: Vec<(Vec<u8>, SampleMeta)> =
        labels.par_iter().enumerate().map(|(i, &label)| render_sample(cfg, &masks, split, i, label)).collect();
    let side = cfg.image_size;
    let mut images = Vec::with_capacity(n * 3 * side * side);
    let mut samples = Vec::with_capacity(n);
    for (img, meta) in rendered {
        images.extend_from_slice(&img);
        samples.push(meta);
    }
    DatasetFile::new(
        [3, side, side],
        labels,
        images,
        DatasetMeta { split, master_seed: cfg.master_seed, config: GenConfig::Pentomino(cfg.clone()), samples },
    )
}
