use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{read_mask, ImageTensor, LabelMask};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "split must be train, validation or test, got `{s}`"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    pub image: PathBuf,
    /// `None` marks a negative sample (all background).
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Entries must be unique by image path.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.image) {
                return Err(Error::InvalidInput(format!(
                    "image {} listed twice",
                    e.image.display()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_paths(&self) -> Result<()> {
        for e in &self.entries {
            for p in std::iter::once(&e.image).chain(e.mask.as_ref()) {
                if !p.is_file() {
                    return Err(Error::InvalidInput(format!(
                        "manifest file {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parse `split<TAB>image<TAB>mask-or-dash` lines. Relative paths are
    /// taken relative to `base`. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidInput(format!(
                    "manifest line {}: expected 3 tab-separated fields, got {}",
                    no + 1,
                    fields.len()
                )));
            }
            let split = fields[0]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("manifest line {}: {e}", no + 1)))?;
            let resolve = |p: &str| {
                let p = PathBuf::from(p);
                if p.is_relative() {
                    base.join(p)
                } else {
                    p
                }
            };
            entries.push(ManifestEntry {
                split,
                image: resolve(fields[1]),
                mask: (fields[2] != "-").then(|| resolve(fields[2])),
            });
        }
        Self::new(entries)
    }

    /// Read a manifest file and check every referenced file exists.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::parse(&text, path.parent().unwrap_or(Path::new(".")))?;
        m.check_paths()?;
        Ok(m)
    }

    /// Paths under `base` are written relative to it.
    pub fn to_tsv(&self, base: &Path) -> String {
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(e.split.as_str());
            s.push('\t');
            s.push_str(&rel(&e.image));
            s.push('\t');
            match &e.mask {
                Some(m) => s.push_str(&rel(m)),
                None => s.push('-'),
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        std::fs::write(path, self.to_tsv(base)).map_err(|e| Error::io(path, e))
    }
}

/// Image and mask of one entry; a missing mask decodes as all background.
pub fn load_sample(entry: &ManifestEntry) -> Result<(ImageTensor, LabelMask)> {
    let image = ImageTensor::read(&entry.image)?;
    let mask = match &entry.mask {
        Some(p) => {
            let m = read_mask(p)?;
            if !m.same_dims(image.height(), image.width()) {
                return Err(Error::InvalidInput(format!(
                    "mask {} is {}x{}, image is {}x{}",
                    p.display(),
                    m.height(),
                    m.width(),
                    image.height(),
                    image.width()
                )));
            }
            m
        }
        None => LabelMask::filled(image.height(), image.width(), 2, 0)?,
    };
    Ok((image, mask))
}

/// How `build_manifest` assigns discovered images to splits.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitAssignment {
    /// Every image goes to one split.
    All(Split),
    /// `root/{train,validation,test}/{images,masks}` directories.
    Subdirectories,
    /// Seeded shuffle, then the first `train` fraction to train, the next
    /// `validation` fraction to validation, the rest to test.
    Fractions { train: f64, validation: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitRules {
    pub assignment: SplitAssignment,
    /// Every image is declared positive: a missing mask is an error instead
    /// of a negative sample.
    pub require_masks: bool,
}

impl SplitRules {
    pub fn all(split: Split) -> Self {
        Self {
            assignment: SplitAssignment::All(split),
            require_masks: false,
        }
    }
}

fn files_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !ok || !path.is_file() {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(prev) = out.insert(stem, path.clone()) {
            return Err(Error::InvalidInput(format!(
                "{} and {} share a file stem",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn pair_dir(dir: &Path, split: Split, require_masks: bool) -> Result<Vec<ManifestEntry>> {
    let images = files_by_stem(&dir.join("images"))?;
    let masks = files_by_stem(&dir.join("masks"))?;
    images
        .into_iter()
        .map(|(stem, image)| {
            let mask = masks.get(&stem).cloned();
            if mask.is_none() && require_masks {
                return Err(Error::InvalidInput(format!(
                    "no mask for positive image {}",
                    image.display()
                )));
            }
            Ok(ManifestEntry { split, image, mask })
        })
        .collect()
}

/// Scan `root` for `images/` and `masks/` (paired by file stem) and assign
/// splits. Deterministic for a given directory content and rules.
pub fn build_manifest(root: impl AsRef<Path>, rules: &SplitRules) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::InvalidInput(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let entries = match &rules.assignment {
        SplitAssignment::All(split) => pair_dir(root, *split, rules.require_masks)?,
        SplitAssignment::Subdirectories => {
            let mut all = Vec::new();
            for split in Split::ALL {
                all.extend(pair_dir(&root.join(split.as_str()), split, rules.require_masks)?);
            }
            all
        }
        SplitAssignment::Fractions {
            train,
            validation,
            seed,
        } => {
            if !(*train >= 0.0 && *validation >= 0.0 && train + validation <= 1.0) {
                return Err(Error::Config(format!(
                    "split fractions {train} + {validation} must be non-negative and sum to at most 1"
                )));
            }
            let mut all = pair_dir(root, Split::Train, rules.require_masks)?;
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let n = all.len() as f64;
            let n_train = (n * train).round() as usize;
            let n_val = ((n * validation).round() as usize).min(all.len() - n_train);
            for (i, e) in all.iter_mut().enumerate() {
                e.split = if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Validation
                } else {
                    Split::Test
                };
            }
            all.sort_by(|a, b| (a.split, &a.image).cmp(&(b.split, &b.image)));
            all
        }
    };
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no images found under {}",
            root.display()
        )));
    }
    DatasetManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::write_mask;

    fn write_pair(dir: &Path, stem: &str, with_mask: bool) {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        std::fs::create_dir_all(dir.join("masks")).unwrap();
        ImageTensor::filled(4, 4, 3, 0.5)
            .unwrap()
            .write_png(dir.join("images").join(format!("{stem}.png")))
            .unwrap();
        if with_mask {
            let m = LabelMask::new(4, 4, 2, (0..16).map(|i| (i % 2) as u8).collect()).unwrap();
            write_mask(&m, dir.join("masks").join(format!("{stem}.png"))).unwrap();
        }
    }

    #[test]
    fn all_to_train() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["a", "b", "c"] {
            write_pair(dir.path(), s, true);
        }
        let m = build_manifest(dir.path(), &SplitRules::all(Split::Train)).unwrap();
        assert_eq!(m.count(Split::Train), 3);
        assert_eq!(m.entries().len(), 3);
    }

    #[test]
    fn missing_mask_is_negative_unless_required() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", true);
        write_pair(dir.path(), "b", false);
        let m = build_manifest(dir.path(), &SplitRules::all(Split::Train)).unwrap();
        let neg = &m.entries()[1];
        assert!(neg.mask.is_none());
        let (_, mask) = load_sample(neg).unwrap();
        assert_eq!(mask.count(1), 0);
        let strict = SplitRules {
            require_masks: true,
            ..SplitRules::all(Split::Train)
        };
        let err = build_manifest(dir.path(), &strict).unwrap_err();
        assert!(err.to_string().contains("b.png"), "{err}");
    }

    #[test]
    fn empty_root_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(build_manifest(dir.path(), &SplitRules::all(Split::Train)).is_err());
        assert!(build_manifest(dir.path().join("nope"), &SplitRules::all(Split::Train)).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for s in ["a", "b"] {
            write_pair(dir.path(), s, s == "a");
        }
        let m = build_manifest(dir.path(), &SplitRules::all(Split::Validation)).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("validation\timages/b.png\t-"), "{text}");
        assert_eq!(DatasetManifest::read(&path).unwrap(), m);
    }

    #[test]
    fn parse_errors() {
        let base = Path::new("/");
        assert!(DatasetManifest::parse("train\ta.png", base).is_err());
        assert!(DatasetManifest::parse("dev\ta.png\t-", base).is_err());
        assert!(DatasetManifest::parse("train\ta.png\t-\ntest\ta.png\t-", base).is_err());
    }

    #[test]
    fn fractions_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10 {
            write_pair(dir.path(), &format!("{i:02}"), true);
        }
        let rules = SplitRules {
            assignment: SplitAssignment::Fractions {
                train: 0.6,
                validation: 0.2,
                seed: 3,
            },
            require_masks: false,
        };
        let a = build_manifest(dir.path(), &rules).unwrap();
        let b = build_manifest(dir.path(), &rules).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            [a.count(Split::Train), a.count(Split::Validation), a.count(Split::Test)],
            [6, 2, 2]
        );
    }
}
