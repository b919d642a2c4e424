//! Atomic artifact writes and the content-hash manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "MANIFEST.sha256";

/// An output file, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(path: impl Into<String>, text: String) -> Self {
        Self { path: path.into(), bytes: text.into_bytes() }
    }

    /// Same artifact under `dir/`.
    pub fn nested(self, dir: &str) -> Self {
        Self { path: format!("{dir}/{}", self.path), bytes: self.bytes }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every artifact and then the manifest, sorted by path.
pub fn write_artifacts(out: &Path, artifacts: &[Artifact]) -> Result<PathBuf, CliError> {
    let mut lines: Vec<(String, String)> = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        if a.path == MANIFEST || a.path.split('/').any(|c| c == ".." || c.is_empty()) {
            return Err(CliError::Usage(format!("refusing artifact path `{}`", a.path)));
        }
        if lines.iter().any(|(p, _)| *p == a.path) {
            return Err(CliError::Usage(format!("duplicate artifact `{}`", a.path)));
        }
        write_atomic(&out.join(&a.path), &a.bytes)?;
        lines.push((a.path.clone(), sha256_hex(&a.bytes)));
    }
    lines.sort();
    let manifest: String = lines.iter().map(|(p, h)| format!("{h}  {p}\n")).collect();
    let path = out.join(MANIFEST);
    write_atomic(&path, manifest.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_sorted_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let arts = vec![Artifact::new("b.csv", "2\n".into()), Artifact::new("a/x.csv", "1\n".into())];
        let m = write_artifacts(dir.path(), &arts).unwrap();
        let text = fs::read_to_string(m).unwrap();
        let paths: Vec<&str> = text.lines().map(|l| l.split("  ").nth(1).unwrap()).collect();
        assert_eq!(paths, vec!["a/x.csv", "b.csv"]);
        assert!(text.starts_with(&sha256_hex(b"1\n")));
        assert_eq!(fs::read_to_string(dir.path().join("a/x.csv")).unwrap(), "1\n");
        assert!(write_artifacts(dir.path(), &[Artifact::new("../evil", String::new())]).is_err());
        let leftovers = fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains(".tmp")).count();
        assert_eq!(leftovers, 0);
    }
}
