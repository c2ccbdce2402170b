//! Binary training snapshot: `"RMXC"`, a `u32` version, a `u64` header
//! length, a JSON header, then every tensor listed in the header's manifest
//! as little-endian `f32` in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::EpochMetrics;
use super::trainer::{BestState, Trainer};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RMXC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Value,
    Momentum,
    Buffer,
    BestValue,
    BestBuffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestMeta {
    pub epoch: usize,
    pub val_error: f64,
    pub val_loss: f64,
}

/// Data-order RNG state. Each epoch's shuffle stream is derived from
/// `(seed, epoch)`, so the next epoch index fully determines it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub algorithm: String,
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: TrainConfig,
    pub next_epoch: usize,
    pub rng: RngState,
    pub history: Vec<EpochMetrics>,
    pub best: Option<BestMeta>,
    pub tensors: Vec<TensorEntry>,
}

fn manifest(trainer: &Trainer) -> Vec<(TensorEntry, &Tensor<f32>)> {
    let mut out = Vec::new();
    let entry =
        |name: &str, role, t: &Tensor<f32>| TensorEntry { name: name.to_string(), role, shape: t.shape().to_vec() };
    let ps = &trainer.model.params;
    for p in ps.params() {
        out.push((entry(&p.name, TensorRole::Value, &p.value), &p.value));
        out.push((entry(&p.name, TensorRole::Momentum, &p.momentum_buf), &p.momentum_buf));
    }
    for b in ps.buffers() {
        out.push((entry(&b.name, TensorRole::Buffer, &b.value), &b.value));
    }
    if let Some(best) = &trainer.best {
        for p in best.params.params() {
            out.push((entry(&p.name, TensorRole::BestValue, &p.value), &p.value));
        }
        for b in best.params.buffers() {
            out.push((entry(&b.name, TensorRole::BestBuffer, &b.value), &b.value));
        }
    }
    out
}

pub fn encode_checkpoint(trainer: &Trainer) -> Result<Vec<u8>> {
    let tensors = manifest(trainer);
    let header = CheckpointHeader {
        config: trainer.cfg.clone(),
        next_epoch: trainer.next_epoch,
        rng: RngState { algorithm: "chacha8/shuffle".into(), seed: trainer.cfg.seed, next_epoch: trainer.next_epoch },
        history: trainer.history.clone(),
        best: trainer.best.as_ref().map(|b| BestMeta { epoch: b.epoch, val_error: b.val_error, val_loss: b.val_loss }),
        tensors: tensors.iter().map(|(e, _)| e.clone()).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(Error::Truncated { what: what.into(), expected: n as u64, actual: rest as u64 });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn fill(dst: &mut Tensor<f32>, entry: &TensorEntry, r: &mut Reader<'_>) -> Result<()> {
    if dst.shape() != entry.shape.as_slice() {
        return Err(Error::Checkpoint(format!(
            "{} {:?}: shape {:?} does not match the model's {:?}",
            entry.name,
            entry.role,
            entry.shape,
            dst.shape()
        )));
    }
    let raw = r.take(dst.numel() * 4, "checkpoint tensor data")?;
    for (v, b) in dst.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
        *v = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
    }
    Ok(())
}

fn target<'a>(ps: &'a mut ParamSet<f32>, e: &TensorEntry) -> Result<&'a mut Tensor<f32>> {
    let missing = || Error::Checkpoint(format!("model has no tensor {} for role {:?}", e.name, e.role));
    match e.role {
        TensorRole::Value | TensorRole::BestValue => {
            let id = ps.find(&e.name).ok_or_else(missing)?;
            Ok(&mut ps.get_mut(id).value)
        }
        TensorRole::Momentum => {
            let id = ps.find(&e.name).ok_or_else(missing)?;
            Ok(&mut ps.get_mut(id).momentum_buf)
        }
        TensorRole::Buffer | TensorRole::BestBuffer => {
            ps.buffers_mut().iter_mut().find(|b| b.name == e.name).map(|b| &mut b.value).ok_or_else(missing)
        }
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "checkpoint magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(CHECKPOINT_MAGIC),
            found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
        });
    }
    let version = u32::from_le_bytes(r.take(4, "checkpoint version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { what: "checkpoint", found: version, supported: CHECKPOINT_VERSION });
    }
    let len = u64::from_le_bytes(r.take(8, "checkpoint header length")?.try_into().unwrap());
    let header: CheckpointHeader = serde_json::from_slice(r.take(len as usize, "checkpoint header")?)?;
    if header.rng.seed != header.config.seed || header.rng.next_epoch != header.next_epoch {
        return Err(Error::Checkpoint("rng state disagrees with config seed or epoch".into()));
    }
    let mut trainer = Trainer::new(header.config.clone())?;
    trainer.next_epoch = header.next_epoch;
    trainer.history = header.history;
    let mut best_params = header.best.as_ref().map(|_| trainer.model.params.clone());
    let mut seen = std::collections::HashSet::new();
    for e in &header.tensors {
        if !seen.insert((e.name.clone(), e.role)) {
            return Err(Error::Checkpoint(format!("duplicate entry {} {:?}", e.name, e.role)));
        }
        let ps = match e.role {
            TensorRole::BestValue | TensorRole::BestBuffer => best_params
                .as_mut()
                .ok_or_else(|| Error::Checkpoint("best tensors present without best metadata".into()))?,
            _ => &mut trainer.model.params,
        };
        fill(target(ps, e)?, e, &mut r)?;
    }
    let expected = manifest_len(&trainer.model.params, header.best.is_some());
    if seen.len() != expected {
        return Err(Error::Checkpoint(format!("manifest lists {} tensors, model needs {expected}", seen.len())));
    }
    if r.pos != bytes.len() {
        return Err(Error::Truncated {
            what: "checkpoint (trailing bytes)".into(),
            expected: r.pos as u64,
            actual: bytes.len() as u64,
        });
    }
    trainer.best = match (header.best, best_params) {
        (Some(m), Some(params)) => {
            Some(BestState { epoch: m.epoch, val_error: m.val_error, val_loss: m.val_loss, params })
        }
        _ => None,
    };
    Ok(trainer)
}

fn manifest_len(ps: &ParamSet<f32>, best: bool) -> usize {
    let live = 2 * ps.len() + ps.buffers().len();
    live + if best { ps.len() + ps.buffers().len() } else { 0 }
}

/// Writes atomically via a sibling temporary file.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(trainer)?;
    let tmp = path.with_extension("tmp");
    let ctx = |p: &Path| p.display().to_string();
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(ctx(&tmp), e))?;
    f.write_all(&bytes).map_err(|e| Error::io(ctx(&tmp), e))?;
    f.sync_all().map_err(|e| Error::io(ctx(&tmp), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(ctx(path), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes)
}

/// Best-validation model of a checkpoint (the live model if none was kept).
pub fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint(path)?.best_model())
}

#[cfg(test)]
mod tests {
    use super::super::metrics::metrics_csv;
    use super::super::trainer::tests::{tiny_cfg, tiny_data};
    use super::*;

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = tiny_data(20);
        let mut full = Trainer::new(tiny_cfg()).unwrap();
        full.fit(&data, |_| Ok(())).unwrap();

        let mut part = Trainer::new(tiny_cfg()).unwrap();
        part.run_epoch(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        save_checkpoint(&part, &path).unwrap();
        drop(part);
        let mut resumed = load_checkpoint(&path).unwrap();
        assert_eq!(resumed.next_epoch, 1);
        resumed.fit(&data, |_| Ok(())).unwrap();

        assert_eq!(metrics_csv(&full.history), metrics_csv(&resumed.history));
        for (a, b) in full.model.params.params().iter().zip(resumed.model.params.params()) {
            assert_eq!(a.value, b.value, "{}", a.name);
            assert_eq!(a.momentum_buf, b.momentum_buf, "{}", a.name);
        }
        let (fa, fb) = (full.best.unwrap(), resumed.best.unwrap());
        assert_eq!((fa.epoch, fa.val_error, fa.val_loss), (fb.epoch, fb.val_error, fb.val_loss));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let data = tiny_data(12);
        let mut t = Trainer::new(tiny_cfg()).unwrap();
        t.run_epoch(&data).unwrap();
        let bytes = encode_checkpoint(&t).unwrap();
        assert_eq!(&bytes[..4], b"RMXC");
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let t = Trainer::new(tiny_cfg()).unwrap();
        let bytes = encode_checkpoint(&t).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::UnsupportedVersion { .. })));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Truncated { .. })));
    }
}
