use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::fail::Fail;

/// Creates a fresh run directory. An explicit `out` must be absent or empty;
/// otherwise `<root>/<command>-<timestamp>` gets a numeric suffix on collision.
pub fn create(root: &Path, command: &str, out: Option<&Path>) -> Result<PathBuf, Fail> {
    if let Some(dir) = out {
        if dir.exists() && std::fs::read_dir(dir).map_err(Fail::io(dir))?.next().is_some() {
            return Err(Fail::Invalid(anyhow::anyhow!("refusing to overwrite non-empty directory {}", dir.display())));
        }
        std::fs::create_dir_all(dir).map_err(Fail::io(dir))?;
        return Ok(dir.to_path_buf());
    }
    std::fs::create_dir_all(root).map_err(Fail::io(root))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    for n in 1.. {
        let name = if n == 1 { format!("{command}-{stamp}") } else { format!("{command}-{stamp}-{n}") };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Fail::io(&dir)(e)),
        }
    }
    unreachable!()
}

#[derive(Serialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub split: String,
    pub sha256: String,
}

#[derive(Serialize)]
struct Resolved<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: Vec<String>,
    config: &'a Value,
    datasets: &'a [DatasetRef],
}

/// Writes `config.resolved.json`: the effective configuration plus what is
/// needed to reproduce the run.
pub fn write_resolved(dir: &Path, command: &str, config: &Value, datasets: &[DatasetRef]) -> Result<(), Fail> {
    let r = Resolved {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        args: std::env::args().collect(),
        config,
        datasets,
    };
    write_json(&dir.join("config.resolved.json"), &r)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), Fail> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Fail::Runtime(e.into()))?;
    std::fs::write(path, text + "\n").map_err(Fail::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_reuses_a_directory() {
        let root = tempfile::tempdir().unwrap();
        let a = create(root.path(), "train", None).unwrap();
        let b = create(root.path(), "train", None).unwrap();
        assert_ne!(a, b);
        std::fs::write(a.join("x"), "1").unwrap();
        assert!(matches!(create(root.path(), "train", Some(&a)), Err(Fail::Invalid(_))));
        assert_eq!(create(root.path(), "train", Some(&b)).unwrap(), b);
    }
}
