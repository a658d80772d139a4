//! Tab-separated dataset manifests: `path  label  subject  scenario`.
//! Lines starting with `#` and blank lines are ignored; paths are relative
//! to the manifest's directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal::Rhythm;

pub const HEADER: &str = "path\tlabel\tsubject\tscenario";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Rhythm,
    pub subject: String,
    pub scenario: String,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') || (out.is_empty() && line == HEADER) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            return Err(Error::Parse {
                line: k + 1,
                message: format!("expected at least 3 tab-separated fields, found {}", f.len()),
            });
        }
        let label = f[1].parse().map_err(|e: Error| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(ManifestEntry {
            path: base.join(f[0]),
            label,
            subject: f[2].to_string(),
            scenario: f.get(3).copied().unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

/// Writes entries with paths relative to `base` when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut s = String::from(HEADER);
    s.push('\n');
    for e in entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        s.push_str(&format!("{}\t{}\t{}\t{}\n", rel.display(), e.label, e.subject, e.scenario));
    }
    std::fs::write(path, s)?;
    Ok(())
}
