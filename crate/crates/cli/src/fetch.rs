//! Checksum-verified downloads. A file is accepted only after its SHA-256
//! matches; a mismatch deletes it.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::fail::Fail;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FetchEntry {
    pub url: String,
    pub sha256: String,
    /// File name under the destination; defaults to the URL's last segment.
    #[serde(default)]
    pub name: Option<String>,
}

impl FetchEntry {
    pub fn file_name(&self) -> Result<String, Fail> {
        if let Some(n) = &self.name {
            return Ok(n.clone());
        }
        let tail = self.url.trim_end_matches('/').rsplit('/').next().unwrap_or("");
        if tail.is_empty() || tail.contains(':') {
            return Err(Fail::usage(format!("cannot derive a file name from {}; give one", self.url)));
        }
        Ok(tail.to_string())
    }
}

#[derive(Debug, PartialEq)]
pub enum Outcome {
    AlreadyVerified(PathBuf),
    Downloaded(PathBuf),
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn open_source(url: &str) -> Result<Box<dyn Read>, Fail> {
    if let Some(path) = url.strip_prefix("file://") {
        let p = Path::new(path);
        return Ok(Box::new(File::open(p).map_err(Fail::io(p))?));
    }
    if !(url.starts_with("http://") || url.starts_with("https://")) {
        return Err(Fail::usage(format!("unsupported URL scheme in {url}")));
    }
    let resp = ureq::get(url).call().map_err(|e| Fail::Runtime(anyhow::anyhow!("GET {url}: {e}")))?;
    Ok(Box::new(resp.into_body().into_reader()))
}

/// Downloads `entry` into `dest` unless a verified copy is already there.
pub fn fetch_one(entry: &FetchEntry, dest: &Path) -> Result<Outcome, Fail> {
    let want = entry.sha256.to_ascii_lowercase();
    if want.len() != 64 || !want.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(Fail::usage(format!("{:?} is not a SHA-256 hex digest", entry.sha256)));
    }
    let target = dest.join(entry.file_name()?);
    if target.exists() && sha256_file(&target).map_err(Fail::io(&target))? == want {
        return Ok(Outcome::AlreadyVerified(target));
    }
    std::fs::create_dir_all(dest).map_err(Fail::io(dest))?;
    let part = target.with_extension("part");
    let copied = (|| -> Result<String, Fail> {
        let mut src = open_source(&entry.url)?;
        let mut out = File::create(&part).map_err(Fail::io(&part))?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = src.read(&mut buf).map_err(|e| Fail::Runtime(anyhow::anyhow!("reading {}: {e}", entry.url)))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
            out.write_all(&buf[..n]).map_err(Fail::io(&part))?;
        }
        out.sync_all().map_err(Fail::io(&part))?;
        Ok(hex::encode(h.finalize()))
    })();
    let got = match copied {
        Ok(g) => g,
        Err(e) => {
            let _ = std::fs::remove_file(&part);
            return Err(e);
        }
    };
    if got != want {
        let _ = std::fs::remove_file(&part);
        let _ = std::fs::remove_file(&target);
        return Err(Fail::invalid(format!(
            "SHA-256 mismatch for {}: expected {want}, got {got}; file removed",
            entry.url
        )));
    }
    std::fs::rename(&part, &target).map_err(Fail::io(&target))?;
    Ok(Outcome::Downloaded(target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_url_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.bin");
        std::fs::write(&src, b"abc").unwrap();
        // sha256("abc")
        let sha = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
        let e = FetchEntry { url: format!("file://{}", src.display()), sha256: sha.into(), name: Some("x.bin".into()) };
        let dest = dir.path().join("d");
        assert!(matches!(fetch_one(&e, &dest).unwrap(), Outcome::Downloaded(_)));
        assert!(matches!(fetch_one(&e, &dest).unwrap(), Outcome::AlreadyVerified(_)));
        let bad = FetchEntry { sha256: "0".repeat(64), name: Some("y.bin".into()), ..e };
        assert!(matches!(fetch_one(&bad, &dest), Err(Fail::Invalid(_))));
        assert!(!dest.join("y.bin").exists() && !dest.join("y.part").exists());
    }

    #[test]
    fn names_from_urls() {
        let e = FetchEntry { url: "https://h/a/train-images-idx3-ubyte.gz".into(), sha256: String::new(), name: None };
        assert_eq!(e.file_name().unwrap(), "train-images-idx3-ubyte.gz");
    }
}
