//! Seeded per-extension sampling of files from a local directory tree.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

pub const DEFAULT_EXTENSIONS: [&str; 10] = ["py", "xml", "java", "html", "c", "js", "sql", "asm", "sh", "cpp"];
pub const DEFAULT_PER_EXTENSION: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Opaque identifier shown to reviewers instead of the file name.
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutcome {
    pub entries: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

fn extension_of(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Samples up to `per_extension` files for each extension without replacement.
/// Symbolic links are not followed. Extensions with too few files are taken
/// whole and reported in `warnings`.
pub fn sample_files(
    root: &Path,
    extensions: &[String],
    per_extension: usize,
    seed: u64,
) -> std::io::Result<SampleOutcome> {
    let wanted: Vec<String> = extensions
        .iter()
        .map(|e| e.trim_start_matches('.').to_ascii_lowercase())
        .collect();
    let mut by_ext: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in WalkDir::new(root).follow_links(false).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        if let Some(ext) = extension_of(entry.path()) {
            if wanted.contains(&ext) {
                by_ext.entry(ext).or_default().push(entry.into_path());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SampleOutcome::default();
    for ext in &wanted {
        let files = by_ext.remove(ext).unwrap_or_default();
        let chosen: Vec<&PathBuf> = if files.len() <= per_extension {
            if files.len() < per_extension {
                out.warnings.push(format!(
                    "only {} .{ext} files (wanted {per_extension}); taking all",
                    files.len()
                ));
            }
            files.iter().collect()
        } else {
            let mut idx = rand::seq::index::sample(&mut rng, files.len(), per_extension).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| &files[i]).collect()
        };
        for path in chosen {
            out.entries.push(ManifestEntry {
                id: format!("doc{:04}", out.entries.len()),
                path: path.clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(counts: &[(&str, usize)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (ext, n) in counts {
            let sub = dir.path().join(ext);
            std::fs::create_dir_all(&sub).unwrap();
            for i in 0..*n {
                std::fs::write(sub.join(format!("f{i}.{ext}")), format!("{ext} {i}")).unwrap();
            }
        }
        dir
    }

    fn defaults() -> Vec<String> {
        DEFAULT_EXTENSIONS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_give_two_hundred() {
        let counts: Vec<(&str, usize)> = DEFAULT_EXTENSIONS.iter().map(|e| (*e, 25)).collect();
        let dir = tree(&counts);
        let s = sample_files(dir.path(), &defaults(), DEFAULT_PER_EXTENSION, 1).unwrap();
        assert_eq!(s.entries.len(), 200);
        assert!(s.warnings.is_empty());
        let again = sample_files(dir.path(), &defaults(), DEFAULT_PER_EXTENSION, 1).unwrap();
        assert_eq!(s, again);
        let other = sample_files(dir.path(), &defaults(), DEFAULT_PER_EXTENSION, 2).unwrap();
        assert_ne!(s.entries, other.entries);
    }

    #[test]
    fn short_extension_takes_all_and_warns() {
        let dir = tree(&[("py", 1), ("c", 3)]);
        let s = sample_files(dir.path(), &["py".into(), "c".into()], 1, 0).unwrap();
        assert_eq!(s.entries.len(), 2);
        assert!(s.entries[0].path.ends_with("py/f0.py"));
        let s = sample_files(dir.path(), &["py".into(), "c".into()], 5, 0).unwrap();
        assert_eq!(s.entries.len(), 4);
        assert_eq!(s.warnings.len(), 2);
    }

    #[cfg(unix)]
    #[test]
    fn symlinks_are_not_followed() {
        let dir = tree(&[("py", 2)]);
        std::os::unix::fs::symlink(dir.path(), dir.path().join("py/loop")).unwrap();
        let s = sample_files(dir.path(), &["py".into()], 10, 0).unwrap();
        assert_eq!(s.entries.len(), 2);
    }
}
