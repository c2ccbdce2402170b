//! Structural audit of a generated dataset against its metadata.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{
    colorize_value, oracle_label, sidecar_path, DatasetFile, DatasetKind, GenConfig, MnistFile, MnistPools, Split,
    PALETTE,
};
use crate::error::{Error, Result};

const MAX_PROBLEMS: usize = 20;

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub path: Option<PathBuf>,
    pub dataset: DatasetKind,
    pub split: Split,
    pub samples: usize,
    /// Fraction of samples whose stored label equals the oracle label.
    pub agreement: f64,
    pub label_mismatches: usize,
    /// Count of label 0 and label 1.
    pub balance: [usize; 2],
    pub balanced: bool,
    pub provenance_violations: usize,
    pub geometry_violations: usize,
    pub overlap_violations: usize,
    pub background_violations: usize,
    pub palette_violations: usize,
    /// SHA-256 over container bytes followed by the sidecar bytes.
    pub hash: String,
    pub problems: Vec<String>,
    pub passed: bool,
}

impl AuditReport {
    pub fn summary(&self) -> String {
        format!(
            "{} {} n={} agreement={:.6} balance={}/{} provenance={} geometry={} overlap={} background={} palette={}",
            self.dataset.name(),
            self.split,
            self.samples,
            self.agreement,
            self.balance[0],
            self.balance[1],
            self.provenance_violations,
            self.geometry_violations,
            self.overlap_violations,
            self.background_violations,
            self.palette_violations
        )
    }
}

struct Tally {
    counts: [usize; 6],
    problems: Vec<String>,
}

const LABEL: usize = 0;
const PROVENANCE: usize = 1;
const GEOMETRY: usize = 2;
const OVERLAP: usize = 3;
const BACKGROUND: usize = 4;
const PALETTE_IDX: usize = 5;

impl Tally {
    fn flag(&mut self, kind: usize, msg: impl FnOnce() -> String) {
        self.counts[kind] += 1;
        if self.problems.len() < MAX_PROBLEMS {
            self.problems.push(msg());
        }
    }
}

/// Reads `path` and its sidecar (both required) and audits them.
pub fn audit_dataset(path: &Path) -> Result<AuditReport> {
    audit_dataset_with(path, None)
}

/// As [`audit_dataset`], additionally checking MNIST digit identities against
/// the source pools.
pub fn audit_dataset_with(path: &Path, pools: Option<&MnistPools>) -> Result<AuditReport> {
    let side = sidecar_path(path);
    if !side.is_file() {
        return Err(Error::AuditFailed {
            path: path.to_path_buf(),
            summary: format!("metadata sidecar {} is missing; labels cannot be audited", side.display()),
        });
    }
    let ds = DatasetFile::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?);
    hasher.update(std::fs::read(&side).map_err(|e| Error::io(format!("reading {}", side.display()), e))?);
    let mut report = audit_loaded(&ds, pools);
    report.path = Some(path.to_path_buf());
    report.hash = hex::encode(hasher.finalize());
    Ok(report)
}

/// Audits an in-memory dataset; `hash` covers the encoded container and the
/// serialized metadata.
pub fn audit_loaded(ds: &DatasetFile, pools: Option<&MnistPools>) -> AuditReport {
    let meta = &ds.meta;
    let kind = meta.config.kind();
    let mut t = Tally { counts: [0; 6], problems: Vec::new() };
    let n = ds.len();

    let (grid, bs) = meta.config.layout();
    let side = meta.config.image_size();
    let expected_dims = [3, side, side];
    if ds.dims != expected_dims {
        t.flag(GEOMETRY, || format!("image dims {:?} differ from configured {:?}", ds.dims, expected_dims));
    }
    let palette_sets: Vec<HashSet<[u8; 3]>> = PALETTE
        .iter()
        .map(|c| {
            (0..=255u8).map(|g| [colorize_value(g, c[0]), colorize_value(g, c[1]), colorize_value(g, c[2])]).collect()
        })
        .collect();
    let masks = match &meta.config {
        GenConfig::Pentomino(c) => c.masks().ok(),
        GenConfig::MnistParity(_) => None,
    };
    if meta.master_seed != meta.config.master_seed() {
        t.flag(PROVENANCE, || "sidecar master_seed differs from the config echo".into());
    }

    let mut balance = [0usize; 2];
    for (i, sample) in meta.samples.iter().enumerate() {
        let label = ds.labels[i];
        if label <= 1 {
            balance[label as usize] += 1;
        }
        match oracle_label(kind, &sample.objects) {
            Ok(l) if l == label && sample.label == label => {}
            Ok(l) => t.flag(LABEL, || format!("sample {i}: stored label {label}, meta {} , oracle {l}", sample.label)),
            Err(e) => t.flag(LABEL, || format!("sample {i}: {e}")),
        }

        // Provenance and per-object ranges.
        match &meta.config {
            GenConfig::MnistParity(c) => {
                if sample.objects.len() != 2 {
                    t.flag(GEOMETRY, || format!("sample {i}: {} digits", sample.objects.len()));
                }
                for o in &sample.objects {
                    if !c.scales.contains(&o.scale)
                        || o.size != [o.scale, o.scale]
                        || !c.rotations.contains(&o.rotation)
                    {
                        t.flag(GEOMETRY, || format!("sample {i}: scale/rotation/size out of config: {o:?}"));
                    }
                    match o.source {
                        None => t.flag(PROVENANCE, || format!("sample {i}: digit without source")),
                        Some(src) => {
                            let file_ok = match meta.split {
                                Split::Test => src.file == MnistFile::Test,
                                Split::Train | Split::Val => src.file == MnistFile::Train,
                            };
                            if src.pool != meta.split || !file_ok {
                                t.flag(PROVENANCE, || {
                                    format!(
                                        "sample {i}: digit from {:?} pool / {:?} file in a {} split",
                                        src.pool, src.file, meta.split
                                    )
                                });
                            }
                            if let Some(p) = pools {
                                let pool = p.pool(meta.split);
                                let ok = src.pool_index < pool.len()
                                    && pool.labels[src.pool_index] == o.identity
                                    && pool.file_offset + src.pool_index == src.file_index
                                    && pool.file == src.file;
                                if !ok {
                                    t.flag(PROVENANCE, || {
                                        format!("sample {i}: source {src:?} does not match the pool")
                                    });
                                }
                            }
                        }
                    }
                }
                if let [a, b] = sample.objects.as_slice() {
                    if a.source.is_some() && a.source == b.source {
                        t.flag(PROVENANCE, || format!("sample {i}: the same exemplar is used twice"));
                    }
                }
            }
            GenConfig::Pentomino(c) => {
                if sample.objects.len() != c.num_sprites {
                    t.flag(GEOMETRY, || format!("sample {i}: {} sprites", sample.objects.len()));
                }
                for o in &sample.objects {
                    if o.source.is_some() {
                        t.flag(PROVENANCE, || format!("sample {i}: sprite carries an MNIST source"));
                    }
                    let dims = masks
                        .as_ref()
                        .and_then(|m| m.get(o.identity as usize))
                        .map(|m| m.transformed_dims(o.rotation, o.scale));
                    if dims != Some((o.size[0], o.size[1]))
                        || !c.scales.contains(&o.scale)
                        || !c.rotations.contains(&o.rotation)
                    {
                        t.flag(GEOMETRY, || format!("sample {i}: sprite geometry out of config: {o:?}"));
                    }
                }
            }
        }

        // Blocks, footprints and pixels.
        let img = ds.image(i);
        let plane = side * side;
        let mut owner: Vec<Option<usize>> = vec![None; plane];
        let mut blocks = HashSet::new();
        for (k, o) in sample.objects.iter().enumerate() {
            if o.color >= PALETTE.len() {
                t.flag(PALETTE_IDX, || format!("sample {i}: color index {}", o.color));
            }
            let inside = o.block < grid * grid && o.offset[0] + o.size[0] <= bs && o.offset[1] + o.size[1] <= bs;
            if !inside {
                t.flag(GEOMETRY, || format!("sample {i}: object {k} leaves its block: {o:?}"));
                continue;
            }
            if !blocks.insert(o.block) {
                t.flag(OVERLAP, || format!("sample {i}: block {} used twice", o.block));
            }
            let [y0, x0] = o.origin(grid, bs);
            for y in y0..y0 + o.size[0] {
                for x in x0..x0 + o.size[1] {
                    let p = y * side + x;
                    if let Some(prev) = owner[p].replace(k) {
                        t.flag(OVERLAP, || format!("sample {i}: objects {prev} and {k} share pixel ({y},{x})"));
                    }
                }
            }
        }
        if ds.dims != expected_dims {
            continue;
        }
        for p in 0..plane {
            let px = [img[p], img[plane + p], img[2 * plane + p]];
            match owner[p] {
                None => {
                    if px != [0, 0, 0] {
                        t.flag(BACKGROUND, || format!("sample {i}: non-black pixel {px:?} outside objects at {p}"));
                    }
                }
                Some(k) => {
                    let o = &sample.objects[k];
                    let Some(colors) = palette_sets.get(o.color) else { continue };
                    let ok = match &masks {
                        Some(m) => {
                            let [y0, x0] = o.origin(grid, bs);
                            let (y, x) = (p / side - y0, p % side - x0);
                            let mask = m[o.identity as usize].rotate(o.rotation).scale(o.scale);
                            let want = if mask.get(y, x) { PALETTE[o.color] } else { [0, 0, 0] };
                            px == want
                        }
                        None => colors.contains(&px),
                    };
                    if !ok {
                        t.flag(PALETTE_IDX, || {
                            format!("sample {i}: pixel {px:?} at {p} is not palette color {}", o.color)
                        });
                    }
                }
            }
        }
    }

    let label_mismatches = t.counts[LABEL];
    let balanced = balance[0] == n / 2 && balance[1] == n - n / 2;
    let mut hasher = Sha256::new();
    hasher.update(ds.encode());
    hasher.update(serde_json::to_vec(&ds.meta).unwrap_or_default());
    let mut report = AuditReport {
        path: None,
        dataset: kind,
        split: meta.split,
        samples: n,
        agreement: if n == 0 { 1.0 } else { (n - label_mismatches.min(n)) as f64 / n as f64 },
        label_mismatches,
        balance,
        balanced,
        provenance_violations: t.counts[PROVENANCE],
        geometry_violations: t.counts[GEOMETRY],
        overlap_violations: t.counts[OVERLAP],
        background_violations: t.counts[BACKGROUND],
        palette_violations: t.counts[PALETTE_IDX],
        hash: hex::encode(hasher.finalize()),
        problems: t.problems,
        passed: false,
    };
    report.passed = report.label_mismatches == 0 && report.balanced && t.counts[1..].iter().all(|&c| c == 0);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_mnist_parity, generate_pentomino, MnistParityConfig, PentominoConfig, SplitCounts};

    fn counts(n: usize) -> SplitCounts {
        SplitCounts { train: n, val: n, test: n }
    }

    fn pento(n: usize) -> DatasetFile {
        generate_pentomino(&PentominoConfig { counts: counts(n), ..Default::default() }, Split::Val).unwrap()
    }

    fn parity(n: usize) -> (DatasetFile, MnistPools) {
        let pools = crate::data::mnist_parity_tests::toy_pools(3);
        let cfg = MnistParityConfig { counts: counts(n), ..Default::default() };
        (generate_mnist_parity(&cfg, &pools, Split::Test).unwrap(), pools)
    }

    #[test]
    fn clean_datasets_pass() {
        let r = audit_loaded(&pento(40), None);
        assert!(r.passed, "{:?}", r.problems);
        assert_eq!(r.balance, [20, 20]);
        let (ds, pools) = parity(40);
        let r = audit_loaded(&ds, Some(&pools));
        assert!(r.passed, "{:?}", r.problems);
        assert_eq!(r.agreement, 1.0);
    }

    #[test]
    fn flipped_label_is_caught() {
        let mut ds = pento(40);
        ds.labels[7] ^= 1;
        let r = audit_loaded(&ds, None);
        assert!(!r.passed);
        assert_eq!(r.label_mismatches, 1);
        assert_eq!(r.agreement, 1.0 - 1.0 / 40.0);
        assert!(!r.balanced);
    }

    #[test]
    fn stray_pixel_and_wrong_color_are_caught() {
        let mut ds = pento(10);
        let o = ds.meta.samples[0].objects[0].clone();
        let blocks: Vec<usize> = ds.meta.samples[0].objects.iter().map(|o| o.block).collect();
        let free = (0..64).find(|b| !blocks.contains(b)).unwrap();
        let p = (free / 8) * 8 * 64 + (free % 8) * 8;
        ds.images[p] = 9;
        let r = audit_loaded(&ds, None);
        assert_eq!(r.background_violations, 1);
        let mut ds = pento(10);
        ds.meta.samples[0].objects[0].color = (o.color + 1) % 10;
        assert!(audit_loaded(&ds, None).palette_violations > 0);
    }

    #[test]
    fn parity_pixels_must_be_palette_multiples() {
        let (mut ds, _) = parity(10);
        let o = ds.meta.samples[2].objects[1].clone();
        let [y, x] = o.origin(2, 32);
        // A red-only pixel cannot be a gray multiple of any palette entry
        // with non-zero green.
        let plane = 64 * 64;
        let p = 2 * 3 * plane + (y + o.size[0] / 2) * 64 + x + o.size[1] / 2;
        ds.images[p] = 200;
        ds.images[p + plane] = 0;
        ds.images[p + 2 * plane] = 0;
        assert_eq!(audit_loaded(&ds, None).palette_violations, 1);
    }

    #[test]
    fn provenance_and_overlap_are_caught() {
        let (mut ds, pools) = parity(10);
        ds.meta.samples[1].objects[0].source.as_mut().unwrap().pool = Split::Train;
        assert!(audit_loaded(&ds, None).provenance_violations >= 1);
        let (mut ds, _) = parity(10);
        let b = ds.meta.samples[3].objects[0].block;
        ds.meta.samples[3].objects[1].block = b;
        assert!(audit_loaded(&ds, Some(&pools)).overlap_violations >= 1);
        let (mut ds, _) = parity(10);
        ds.meta.samples[4].objects[0].source.as_mut().unwrap().pool_index += 1;
        assert!(audit_loaded(&ds, Some(&pools)).provenance_violations >= 1);
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.rmxd");
        let ds = pento(4);
        ds.write(&p).unwrap();
        let r = audit_dataset(&p).unwrap();
        assert!(r.passed);
        std::fs::remove_file(sidecar_path(&p)).unwrap();
        assert!(matches!(audit_dataset(&p), Err(Error::AuditFailed { .. })));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = audit_loaded(&pento(6), None).hash;
        assert_eq!(a, audit_loaded(&pento(6), None).hash);
        let mut ds = pento(6);
        ds.images[100] ^= 1;
        assert_ne!(a, audit_loaded(&ds, None).hash);
    }
}
