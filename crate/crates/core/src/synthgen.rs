//! Synthetic polyp-like images with exact masks.
//!
//! Each image is a smooth colour gradient with Gaussian texture noise and,
//! unless it is a negative, one or more bright, reddish, irregular
//! ellipses. The mask is rasterised from the same geometry as the blobs,
//! so it matches the rendered support exactly.
//!
//! Output layout under the target directory:
//!
//! ```text
//! manifest.tsv
//! {train,validation,test}/images/NNNN.png
//! {train,validation,test}/masks/NNNN.png
//! ```
//!
//! Negatives also get an (all background) mask file.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::pipeline::{DatasetManifest, ManifestEntry, Split, MANIFEST_FILE};
use crate::raster::{write_mask, ImageTensor, LabelMask};
use crate::{Error, Result};

/// Largest relative radius change of the wavy blob outline.
pub const OUTLINE_WOBBLE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Positive images carry `1..=max_blobs` blobs.
    pub max_blobs: usize,
    /// Blob radius range as a fraction of the image size.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Fraction of images without blobs.
    pub negative_fraction: f64,
    /// Standard deviation of the texture noise.
    pub noise: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 100,
            image_size: 64,
            seed: 0,
            max_blobs: 2,
            radius_min: 0.08,
            radius_max: 0.2,
            negative_fraction: 0.2,
            noise: 0.04,
            validation_fraction: 0.2,
            test_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        if self.image_size < 8 {
            return bad(format!("image_size must be at least 8, got {}", self.image_size));
        }
        if self.max_blobs == 0 {
            return bad("max_blobs must be at least 1".into());
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max < 0.5) {
            return bad(format!(
                "radius range [{}, {}] must satisfy 0 < min <= max < 0.5",
                self.radius_min, self.radius_max
            ));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return bad(format!(
                "negative_fraction {} outside [0, 1]",
                self.negative_fraction
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        let (v, t) = (self.validation_fraction, self.test_fraction);
        if !(v >= 0.0 && t >= 0.0 && v + t <= 1.0) {
            return bad(format!(
                "validation_fraction {v} + test_fraction {t} must be non-negative and at most 1"
            ));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn negative_count(&self) -> usize {
        (self.count as f64 * self.negative_fraction).round() as usize
    }

    /// Image counts of train, validation and test.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.count as f64;
        let val = (n * self.validation_fraction).round() as usize;
        let test = ((n * self.test_fraction).round() as usize).min(self.count - val.min(self.count));
        let val = val.min(self.count);
        [self.count - val - test, val, test]
    }

    pub fn split_of(&self, index: usize) -> Split {
        let [train, val, _] = self.split_counts();
        if index < train {
            Split::Train
        } else if index < train + val {
            Split::Validation
        } else {
            Split::Test
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Blob {
    cx: f64,
    cy: f64,
    ra: f64,
    rb: f64,
    angle: f64,
    lobes: u32,
    phase: f64,
    wobble: f64,
}

impl Blob {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let theta = v.atan2(u);
        let scale = 1.0 + self.wobble * (self.lobes as f64 * theta + self.phase).sin();
        (u / self.ra).powi(2) + (v / self.rb).powi(2) <= scale * scale
    }
}

/// One rendered sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: ImageTensor,
    pub mask: LabelMask,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(index as u64).to_le_bytes());
    key[16..].copy_from_slice(b"synthgen\0\0\0\0\0\0\0\0");
    ChaCha8Rng::from_seed(key)
}

/// Indices of negative images: a seeded choice of exactly
/// `round(count * negative_fraction)` of them.
pub fn negative_indices(cfg: &SynthConfig) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..cfg.count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e65_6761_7469_7665));
    let mut neg = vec![false; cfg.count];
    for &i in &idx[..cfg.negative_count()] {
        neg[i] = true;
    }
    neg
}

/// Render sample `index`.
pub fn render(cfg: &SynthConfig, index: usize, negative: bool) -> Result<SynthSample> {
    let s = cfg.image_size;
    let sf = s as f64;
    let mut rng = sample_rng(cfg.seed, index);

    // background: pinkish gradient in a random direction
    let base = [
        rng.random_range(0.45..0.6),
        rng.random_range(0.22..0.32),
        rng.random_range(0.18..0.28),
    ];
    let dir = rng.random_range(0.0..2.0 * PI);
    let strength = rng.random_range(0.05..0.15);
    let (ds, dc) = dir.sin_cos();

    let blobs: Vec<Blob> = if negative {
        Vec::new()
    } else {
        let n = rng.random_range(1..=cfg.max_blobs);
        (0..n)
            .map(|_| {
                let ra = rng.random_range(cfg.radius_min..=cfg.radius_max) * sf;
                let rb = rng.random_range(cfg.radius_min..=cfg.radius_max) * sf;
                let reach = ra.max(rb) * (1.0 + OUTLINE_WOBBLE);
                let lo = reach.min(sf / 2.0);
                let hi = (sf - reach).max(lo);
                Blob {
                    cx: if hi > lo { rng.random_range(lo..hi) } else { lo },
                    cy: if hi > lo { rng.random_range(lo..hi) } else { lo },
                    ra,
                    rb,
                    angle: rng.random_range(0.0..PI),
                    lobes: rng.random_range(2..=5),
                    phase: rng.random_range(0.0..2.0 * PI),
                    wobble: rng.random_range(0.0..OUTLINE_WOBBLE),
                }
            })
            .collect()
    };
    // polyps: brighter and shifted towards red/yellow
    let tint = [
        rng.random_range(0.22..0.32),
        rng.random_range(0.12..0.2),
        rng.random_range(0.02..0.08),
    ];

    let mut mask = vec![0u8; s * s];
    let mut data = vec![0.0; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let g = ((px / sf - 0.5) * dc + (py / sf - 0.5) * ds) * 2.0 * strength;
            let inside = blobs.iter().any(|b| b.contains(px, py));
            mask[y * s + x] = u8::from(inside);
            for c in 0..3 {
                let mut v = base[c] + g;
                if inside {
                    v += tint[c];
                }
                data[c * s * s + y * s + x] = v;
            }
        }
    }
    if cfg.noise > 0.0 {
        let n = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut data {
            *v += n.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(SynthSample {
        image: ImageTensor::new(s, s, 3, data)?,
        mask: LabelMask::new(s, s, 2, mask)?,
    })
}

/// Write the dataset under `out` and return its manifest (also written as
/// `manifest.tsv`). Byte-identical output for equal configurations.
pub fn generate(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out = out.as_ref();
    let negatives = negative_indices(cfg);
    let mut entries = Vec::with_capacity(cfg.count);
    for split in Split::ALL {
        for sub in ["images", "masks"] {
            let d = out.join(split.as_str()).join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    for (i, &negative) in negatives.iter().enumerate() {
        let split = cfg.split_of(i);
        let sample = render(cfg, i, negative)?;
        let name = format!("{i:04}.png");
        let dir = out.join(split.as_str());
        let image = dir.join("images").join(&name);
        let mask = dir.join("masks").join(&name);
        sample.image.write_png(&image)?;
        write_mask(&sample.mask, &mask)?;
        entries.push(ManifestEntry {
            split,
            image,
            mask: Some(mask),
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    manifest.write(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
