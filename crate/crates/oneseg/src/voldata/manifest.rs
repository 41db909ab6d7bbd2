//! Dataset manifests: plain-text lists of volume (and optional mask) paths.
//!
//! Format, one entry per line:
//!
//! ```text
//! # comment
//! relative/or/absolute/volume.oseg
//! relative/volume.oseg,relative/mask.oseg
//! ```
//!
//! Relative paths are resolved against the manifest's directory, so a
//! manifest can be shipped together with its data directory.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Whether a manifest describes annotated training volumes or test volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestRole {
    /// Every entry must carry a mask path.
    Train,
    /// Mask paths are optional and used only for evaluation.
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub volume: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub role: ManifestRole,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses a manifest file, resolving relative paths against its parent
    /// directory. Referenced files are not opened here; I/O errors surface
    /// when the entries are loaded.
    pub fn load(path: &Path, role: ManifestRole) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(2, ',');
            let vol = parts.next().unwrap().trim();
            let mask = parts.next().map(str::trim);
            if vol.is_empty() {
                return Err(Error::validation(format!(
                    "{}:{}: empty volume path",
                    path.display(),
                    lineno + 1
                )));
            }
            if role == ManifestRole::Train && mask.is_none() {
                return Err(Error::validation(format!(
                    "{}:{}: train manifest entries need `volume,mask`",
                    path.display(),
                    lineno + 1
                )));
            }
            if let Some(m) = mask {
                if m.is_empty() {
                    return Err(Error::validation(format!(
                        "{}:{}: empty mask path after comma",
                        path.display(),
                        lineno + 1
                    )));
                }
            }
            entries.push(ManifestEntry {
                volume: resolve(base, vol),
                mask: mask.map(|m| resolve(base, m)),
            });
        }
        if entries.is_empty() {
            return Err(Error::validation(format!(
                "{}: manifest has no entries",
                path.display()
            )));
        }
        Ok(DatasetManifest { role, entries })
    }

    /// Writes a manifest with paths relative to `base` where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&display_relative(&e.volume, base));
            if let Some(m) = &e.mask {
                out.push(',');
                out.push_str(&display_relative(m, base));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn display_relative(p: &Path, base: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blank_lines_and_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        std::fs::write(
            &path,
            "# header comment\n\nvols/a.oseg,masks/a.oseg\nvols/b.oseg, masks/b.oseg\n",
        )
        .unwrap();
        let m = DatasetManifest::load(&path, ManifestRole::Train).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].volume, dir.path().join("vols/a.oseg"));
        assert_eq!(
            m.entries[1].mask.as_deref(),
            Some(dir.path().join("masks/b.oseg").as_path())
        );
    }

    #[test]
    fn train_role_requires_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.txt");
        std::fs::write(&path, "vols/a.oseg\n").unwrap();
        assert!(DatasetManifest::load(&path, ManifestRole::Train).is_err());
        assert!(DatasetManifest::load(&path, ManifestRole::Test).is_ok());
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, "# only comments\n\n").unwrap();
        assert!(DatasetManifest::load(&path, ManifestRole::Test).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let m = DatasetManifest {
            role: ManifestRole::Test,
            entries: vec![
                ManifestEntry {
                    volume: dir.path().join("v1.oseg"),
                    mask: None,
                },
                ManifestEntry {
                    volume: dir.path().join("v2.oseg"),
                    mask: Some(dir.path().join("m2.oseg")),
                },
            ],
        };
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path, ManifestRole::Test).unwrap();
        assert_eq!(back.entries, m.entries);
    }
}
