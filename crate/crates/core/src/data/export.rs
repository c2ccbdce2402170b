use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};

use super::{DatasetFile, GenConfig, SampleMeta};
use crate::error::{Error, Result};

/// Compact human-readable description of a sample's objects, e.g.
/// `3@b0+(4,2) s24 r15 c7; 8@b2+(0,6) s20 r0 c1`.
pub fn meta_summary(config: &GenConfig, sample: &SampleMeta) -> String {
    let mut out = String::new();
    for (i, o) in sample.objects.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let id = match config {
            GenConfig::MnistParity(_) => o.identity.to_string(),
            GenConfig::Pentomino(c) => {
                c.sprites.get(o.identity as usize).cloned().unwrap_or_else(|| o.identity.to_string())
            }
        };
        let _ = write!(
            out,
            "{id}@b{}+({},{}) s{} r{} c{}",
            o.block, o.offset[0], o.offset[1], o.scale, o.rotation, o.color
        );
    }
    out
}

fn encode_png(chw: &[u8], [c, h, w]: [usize; 3]) -> Result<Vec<u8>> {
    if c != 3 {
        return Err(Error::invalid("export_png", format!("expected 3 channels, got {c}")));
    }
    let mut hwc = vec![0u8; h * w * 3];
    for ch in 0..3 {
        for p in 0..h * w {
            hwc[p * 3 + ch] = chw[ch * h * w + p];
        }
    }
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Adaptive).write_image(
        &hwc,
        w as u32,
        h as u32,
        ExtendedColorType::Rgb8,
    )?;
    Ok(buf)
}

/// Writes `<index>.png` per requested sample and `index.csv` listing
/// `index,label,objects`. Returns the PNG paths.
pub fn export_png(ds: &DatasetFile, indices: &[usize], dir: &Path) -> Result<Vec<PathBuf>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::invalid("export_png", format!("index {bad} out of range for {} samples", ds.len())));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut csv = String::from("index,label,objects\n");
    let mut paths = Vec::with_capacity(indices.len());
    for &i in indices {
        let path = dir.join(format!("{i:06}.png"));
        let png = encode_png(ds.image(i), ds.dims)?;
        std::fs::write(&path, png).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let _ = writeln!(csv, "{i},{},\"{}\"", ds.labels[i], meta_summary(&ds.meta.config, &ds.meta.samples[i]));
        paths.push(path);
    }
    let csv_path = dir.join("index.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(format!("writing {}", csv_path.display()), e))?;
    Ok(paths)
}
