//! Paired image/mask augmentation.
//!
//! Each op is written `name p=<probability> key=value ...`, for example
//! `shift_scale_rotate p=0.5 shift=0.0625 scale=0.1 rotate=30`. Geometric
//! ops move image and mask with the same transform; the mask is sampled
//! nearest-neighbour so its class alphabet never changes. Photometric ops
//! touch the image only and clamp it to [0, 1].
//!
//! | op                   | parameters (defaults)                  |
//! |----------------------|----------------------------------------|
//! | `horizontal_flip`    |                                        |
//! | `shift_scale_rotate` | `shift=0.0625 scale=0.1 rotate=45`     |
//! | `brightness_contrast`| `brightness=0.2 contrast=0.2`          |
//! | `gaussian_noise`     | `std=0.03`                             |
//! | `blur`               | `max_kernel=7`                         |
//! | `brightness`         | `limit=0.2`                            |
//! | `contrast`           | `limit=0.2`                            |
//! | `gamma`              | `low=0.8 high=1.2`                     |
//! | `sharpen`            | `low=0.2 high=0.5`                     |
//! | `motion_blur`        | `max_kernel=7`                         |
//! | `resize`             | none; the fixed working-size resize    |
//! | `clahe`, `perspective`, `hue_saturation` | plugin only        |

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::{ImageTensor, LabelMask};
use crate::{Error, Result};

/// Ops implemented here.
pub const NATIVE_OPS: [&str; 11] = [
    "horizontal_flip",
    "shift_scale_rotate",
    "brightness_contrast",
    "gaussian_noise",
    "blur",
    "brightness",
    "contrast",
    "gamma",
    "sharpen",
    "motion_blur",
    "resize",
];

/// Recognised names that need a registered plugin.
pub const PLUGIN_OPS: [&str; 3] = ["clahe", "perspective", "hue_saturation"];

fn known_params(op: &str) -> &'static [(&'static str, f64)] {
    match op {
        "shift_scale_rotate" => &[("shift", 0.0625), ("scale", 0.1), ("rotate", 45.0)],
        "brightness_contrast" => &[("brightness", 0.2), ("contrast", 0.2)],
        "gaussian_noise" => &[("std", 0.03)],
        "blur" | "motion_blur" => &[("max_kernel", 7.0)],
        "brightness" | "contrast" => &[("limit", 0.2)],
        "gamma" => &[("low", 0.8), ("high", 1.2)],
        "sharpen" => &[("low", 0.2), ("high", 0.5)],
        _ => &[],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentOp {
    pub name: String,
    pub probability: f64,
    pub params: BTreeMap<String, f64>,
}

impl AugmentOp {
    pub fn new(name: &str, probability: f64) -> Result<Self> {
        Self::parse(&format!("{name} p={probability}"))
    }

    /// Parse `name p=0.5 key=value ...`; `p` defaults to 1.
    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = text.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Config("empty augmentation entry".into()))?
            .to_string();
        if !NATIVE_OPS.contains(&name.as_str()) && !PLUGIN_OPS.contains(&name.as_str()) {
            return Err(Error::Config(format!("unknown augmentation `{name}`")));
        }
        let mut probability = 1.0;
        let mut params = BTreeMap::new();
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                Error::Config(format!("`{name}`: expected key=value, got `{kv}`"))
            })?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::Config(format!("`{name}`: `{k}` is not a number: `{v}`")))?;
            if !v.is_finite() {
                return Err(Error::Config(format!("`{name}`: `{k}` must be finite")));
            }
            if k == "p" {
                probability = v;
            } else {
                params.insert(k.to_string(), v);
            }
        }
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Config(format!(
                "`{name}`: probability {probability} outside [0, 1]"
            )));
        }
        if NATIVE_OPS.contains(&name.as_str()) {
            let known = known_params(&name);
            for k in params.keys() {
                if !known.iter().any(|(n, _)| n == k) {
                    return Err(Error::Config(format!("`{name}`: unknown parameter `{k}`")));
                }
            }
            for (k, d) in known {
                params.entry(k.to_string()).or_insert(*d);
            }
        }
        Ok(Self {
            name,
            probability,
            params,
        })
    }

    fn param(&self, key: &str) -> f64 {
        self.params[key]
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} p={}", self.name, self.probability)?;
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentationSpec {
    pub ops: Vec<AugmentOp>,
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn parse<S: AsRef<str>>(entries: &[S]) -> Result<Self> {
        Ok(Self {
            ops: entries
                .iter()
                .map(|e| AugmentOp::parse(e.as_ref()))
                .collect::<Result<_>>()?,
        })
    }
}

/// User-supplied implementation of an op.
pub type PluginOp = Arc<
    dyn Fn(&ImageTensor, &LabelMask, &BTreeMap<String, f64>, &mut ChaCha8Rng) -> Result<(ImageTensor, LabelMask)>
        + Send
        + Sync,
>;

/// A validated spec plus any plugins it needs.
#[derive(Clone, Default)]
pub struct Augmenter {
    spec: AugmentationSpec,
    plugins: BTreeMap<String, PluginOp>,
}

impl fmt::Debug for Augmenter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Augmenter")
            .field("spec", &self.spec)
            .field("plugins", &self.plugins.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Augmenter {
    pub fn new(spec: AugmentationSpec) -> Result<Self> {
        Self::with_plugins(spec, BTreeMap::new())
    }

    /// Fails with `NotAvailable` when a plugin-only op has no plugin.
    pub fn with_plugins(spec: AugmentationSpec, plugins: BTreeMap<String, PluginOp>) -> Result<Self> {
        for op in &spec.ops {
            if !NATIVE_OPS.contains(&op.name.as_str()) && !plugins.contains_key(&op.name) {
                return Err(Error::NotAvailable(format!(
                    "augmentation `{}` needs a plugin; none is registered",
                    op.name
                )));
            }
        }
        Ok(Self { spec, plugins })
    }

    pub fn spec(&self) -> &AugmentationSpec {
        &self.spec
    }

    pub fn is_identity(&self) -> bool {
        self.spec.ops.iter().all(|o| o.probability == 0.0)
    }

    pub fn apply(
        &self,
        image: &ImageTensor,
        mask: &LabelMask,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ImageTensor, LabelMask)> {
        let mut img = image.clone();
        let mut m = mask.clone();
        for op in &self.spec.ops {
            // one draw per op keeps the stream aligned whether or not it fires
            let fire = rng.random::<f64>() < op.probability;
            if !fire {
                continue;
            }
            if let Some(plugin) = self.plugins.get(&op.name) {
                (img, m) = plugin(&img, &m, &op.params, rng)?;
                continue;
            }
            match op.name.as_str() {
                "horizontal_flip" => {
                    img = flip_image(&img);
                    m = flip_mask(&m)?;
                }
                "shift_scale_rotate" => {
                    let s = op.param("shift");
                    let a = Affine {
                        dx: rng.random_range(-s..=s) * img.width() as f64,
                        dy: rng.random_range(-s..=s) * img.height() as f64,
                        scale: 1.0 + sym(rng, op.param("scale")),
                        angle: sym(rng, op.param("rotate")).to_radians(),
                    };
                    img = warp_image(&img, &a)?;
                    m = warp_mask(&m, &a)?;
                }
                "brightness_contrast" => {
                    let alpha = 1.0 + sym(rng, op.param("contrast"));
                    let beta = sym(rng, op.param("brightness"));
                    map_pixels(&mut img, |v| v * alpha + beta);
                }
                "brightness" => {
                    let beta = sym(rng, op.param("limit"));
                    map_pixels(&mut img, |v| v + beta);
                }
                "contrast" => {
                    let alpha = 1.0 + sym(rng, op.param("limit"));
                    let mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
                    map_pixels(&mut img, |v| (v - mean) * alpha + mean);
                }
                "gamma" => {
                    let (lo, hi) = (op.param("low"), op.param("high"));
                    let g = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    if g <= 0.0 {
                        return Err(Error::Config(format!("gamma {g} must be positive")));
                    }
                    map_pixels(&mut img, |v| v.powf(g));
                }
                "gaussian_noise" => {
                    let sigma = rng.random::<f64>() * op.param("std").abs();
                    if sigma > 0.0 {
                        let n = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
                        for v in img.data_mut() {
                            *v = (*v + n.sample(rng)).clamp(0.0, 1.0);
                        }
                    }
                }
                "blur" => {
                    let k = odd_kernel(rng, op.param("max_kernel"));
                    img = box_blur(&img, k, true, true);
                }
                "motion_blur" => {
                    let k = odd_kernel(rng, op.param("max_kernel"));
                    let horizontal = rng.random::<bool>();
                    img = box_blur(&img, k, horizontal, !horizontal);
                }
                "sharpen" => {
                    let (lo, hi) = (op.param("low"), op.param("high"));
                    let alpha = if hi > lo { rng.random_range(lo..hi) } else { lo };
                    let smooth = box_blur(&img, 3, true, true);
                    for (v, s) in img.data_mut().iter_mut().zip(smooth.data()) {
                        *v = (*v + alpha * (*v - s)).clamp(0.0, 1.0);
                    }
                }
                "resize" => {}
                other => unreachable!("op `{other}` validated at construction"),
            }
        }
        Ok((img, m))
    }
}

/// The generator for sample `index` of `epoch` under a global `seed`.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    key[24..].copy_from_slice(b"augment\0");
    ChaCha8Rng::from_seed(key)
}

/// One augmentation of a pair with its own seeded generator.
pub fn augment(
    image: &ImageTensor,
    mask: &LabelMask,
    augmenter: &Augmenter,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageTensor, LabelMask)> {
    augmenter.apply(image, mask, rng)
}

fn sym(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    let l = limit.abs();
    if l == 0.0 {
        0.0
    } else {
        rng.random_range(-l..=l)
    }
}

fn odd_kernel(rng: &mut ChaCha8Rng, max: f64) -> usize {
    let max = (max.max(3.0) as usize) | 1;
    let choices = (max - 3) / 2 + 1;
    3 + 2 * rng.random_range(0..choices)
}

fn map_pixels(img: &mut ImageTensor, f: impl Fn(f64) -> f64) {
    for v in img.data_mut() {
        *v = f(*v).clamp(0.0, 1.0);
    }
}

fn flip_image(img: &ImageTensor) -> ImageTensor {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data = Vec::with_capacity(h * w * c);
    for ch in 0..c {
        for y in 0..h {
            data.extend((0..w).rev().map(|x| img.get(y, x, ch)));
        }
    }
    ImageTensor::new(h, w, c, data).expect("same dims")
}

fn flip_mask(m: &LabelMask) -> Result<LabelMask> {
    let (h, w) = (m.height(), m.width());
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        data.extend((0..w).rev().map(|x| m.get(y, x)));
    }
    LabelMask::new(h, w, m.classes(), data)
}

/// Reflect without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - r;
    }
    r as usize
}

struct Affine {
    dx: f64,
    dy: f64,
    scale: f64,
    angle: f64,
}

impl Affine {
    /// Source coordinate of destination pixel centre `(x, y)`.
    fn source(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let u = (x - cx - self.dx) / self.scale;
        let v = (y - cy - self.dy) / self.scale;
        (c * u + s * v + cx, -s * u + c * v + cy)
    }
}

fn warp_image(img: &ImageTensor, a: &Affine) -> Result<ImageTensor> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut data = vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = a.source(x as f64, y as f64, cx, cy);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let xs = [reflect101(x0 as i64, w), reflect101(x0 as i64 + 1, w)];
            let ys = [reflect101(y0 as i64, h), reflect101(y0 as i64 + 1, h)];
            for c in 0..ch {
                let p = img.plane(c);
                let top = p[ys[0] * w + xs[0]] * (1.0 - fx) + p[ys[0] * w + xs[1]] * fx;
                let bot = p[ys[1] * w + xs[0]] * (1.0 - fx) + p[ys[1] * w + xs[1]] * fx;
                data[c * h * w + y * w + x] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(h, w, ch, data)
}

fn warp_mask(m: &LabelMask, a: &Affine) -> Result<LabelMask> {
    let (h, w) = (m.height(), m.width());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = a.source(x as f64, y as f64, cx, cy);
            let xi = reflect101(sx.round() as i64, w);
            let yi = reflect101(sy.round() as i64, h);
            data.push(m.get(yi, xi));
        }
    }
    LabelMask::new(h, w, m.classes(), data)
}

/// Mean filter of odd width `k` along the chosen axes, reflect-101 borders.
fn box_blur(img: &ImageTensor, k: usize, horizontal: bool, vertical: bool) -> ImageTensor {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let r = (k / 2) as i64;
    let mut data = img.data().to_vec();
    let mut tmp = vec![0.0; h * w];
    for c in 0..ch {
        let plane = &mut data[c * h * w..(c + 1) * h * w];
        if horizontal {
            for y in 0..h {
                for x in 0..w {
                    let s: f64 = (-r..=r)
                        .map(|d| plane[y * w + reflect101(x as i64 + d, w)])
                        .sum();
                    tmp[y * w + x] = s / k as f64;
                }
            }
            plane.copy_from_slice(&tmp);
        }
        if vertical {
            for y in 0..h {
                for x in 0..w {
                    let s: f64 = (-r..=r)
                        .map(|d| plane[reflect101(y as i64 + d, h) * w + x])
                        .sum();
                    tmp[y * w + x] = s / k as f64;
                }
            }
            plane.copy_from_slice(&tmp);
        }
    }
    ImageTensor::new(h, w, ch, data).expect("same dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (ImageTensor, LabelMask) {
        let (h, w) = (6, 5);
        let img = ImageTensor::new(
            h,
            w,
            3,
            (0..h * w * 3).map(|i| (i % 11) as f64 / 10.0).collect(),
        )
        .unwrap();
        let m = LabelMask::new(h, w, 2, (0..h * w).map(|i| u8::from(i % 3 == 0)).collect()).unwrap();
        (img, m)
    }

    #[test]
    fn parse_defaults_and_errors() {
        let op = AugmentOp::parse("shift_scale_rotate p=0.5 rotate=10").unwrap();
        assert_eq!(op.probability, 0.5);
        assert_eq!(op.params["rotate"], 10.0);
        assert_eq!(op.params["shift"], 0.0625);
        assert!(AugmentOp::parse("horizontal_flip").unwrap().probability == 1.0);
        assert!(matches!(AugmentOp::parse("twirl p=1"), Err(Error::Config(_))));
        assert!(AugmentOp::parse("blur p=1.5").is_err());
        assert!(AugmentOp::parse("blur size=3").is_err());
        assert!(AugmentOp::parse("blur p").is_err());
    }

    #[test]
    fn plugin_ops_parse_but_are_unavailable() {
        for name in PLUGIN_OPS {
            let spec = AugmentationSpec::parse(&[format!("{name} p=0.5")]).unwrap();
            assert!(matches!(Augmenter::new(spec), Err(Error::NotAvailable(_))));
        }
    }

    #[test]
    fn plugin_is_used_when_registered() {
        let spec = AugmentationSpec::parse(&["clahe p=1"]).unwrap();
        let mut plugins: BTreeMap<String, PluginOp> = BTreeMap::new();
        plugins.insert(
            "clahe".into(),
            Arc::new(|img, m, _, _| {
                let mut img = img.clone();
                img.data_mut().iter_mut().for_each(|v| *v = 0.5);
                Ok((img, m.clone()))
            }),
        );
        let aug = Augmenter::with_plugins(spec, plugins).unwrap();
        let (img, m) = pair();
        let (out, om) = aug.apply(&img, &m, &mut sample_rng(0, 1, 0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        assert_eq!(om, m);
    }

    #[test]
    fn zero_probability_is_identity() {
        let names: Vec<String> = NATIVE_OPS.iter().map(|n| format!("{n} p=0")).collect();
        let aug = Augmenter::new(AugmentationSpec::parse(&names).unwrap()).unwrap();
        let (img, m) = pair();
        let (a, b) = aug.apply(&img, &m, &mut sample_rng(1, 1, 1)).unwrap();
        assert_eq!(a, img);
        assert_eq!(b, m);
    }

    #[test]
    fn flip_twice_is_identity() {
        let aug = Augmenter::new(AugmentationSpec::parse(&["horizontal_flip p=1"]).unwrap()).unwrap();
        let (img, m) = pair();
        let mut rng = sample_rng(0, 1, 0);
        let (a, b) = aug.apply(&img, &m, &mut rng).unwrap();
        assert_ne!(a, img);
        let (c, d) = aug.apply(&a, &b, &mut rng).unwrap();
        assert_eq!(c, img);
        assert_eq!(d, m);
    }

    #[test]
    fn every_native_op_keeps_ranges() {
        let (img, m) = pair();
        for name in NATIVE_OPS {
            let aug = Augmenter::new(AugmentationSpec::parse(&[format!("{name} p=1")]).unwrap()).unwrap();
            for i in 0..5 {
                let (a, b) = aug.apply(&img, &m, &mut sample_rng(9, 2, i)).unwrap();
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)), "{name}");
                assert!(b.data().iter().all(|&v| v < 2), "{name}");
                assert_eq!((a.height(), a.width()), (img.height(), img.width()));
            }
        }
    }

    #[test]
    fn geometric_ops_move_image_and_mask_together() {
        // image channel 0 equals the mask, so a shared transform keeps them equal
        let (h, w) = (16, 16);
        let mvals: Vec<u8> = (0..h * w)
            .map(|i| u8::from((4..12).contains(&(i / w)) && (3..9).contains(&(i % w))))
            .collect();
        let m = LabelMask::new(h, w, 2, mvals.clone()).unwrap();
        let mut data: Vec<f64> = mvals.iter().map(|&v| v as f64).collect();
        data.extend(vec![0.0; 2 * h * w]);
        let img = ImageTensor::new(h, w, 3, data).unwrap();
        let aug = Augmenter::new(
            AugmentationSpec::parse(&["shift_scale_rotate p=1 rotate=0 scale=0"]).unwrap(),
        )
        .unwrap();
        for i in 0..10 {
            let (a, b) = aug.apply(&img, &m, &mut sample_rng(4, 1, i)).unwrap();
            // where every bilinear tap agrees the nearest tap must agree too
            let mut checked = 0;
            for (v, &mv) in a.plane(0).iter().zip(b.data()) {
                if *v < 1e-9 {
                    assert_eq!(mv, 0);
                    checked += 1;
                } else if *v > 1.0 - 1e-9 {
                    assert_eq!(mv, 1);
                    checked += 1;
                }
            }
            assert!(checked > h * w / 2);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let names: Vec<String> = NATIVE_OPS.iter().map(|n| format!("{n} p=0.7")).collect();
        let aug = Augmenter::new(AugmentationSpec::parse(&names).unwrap()).unwrap();
        let (img, m) = pair();
        let a = aug.apply(&img, &m, &mut sample_rng(5, 3, 7)).unwrap();
        let b = aug.apply(&img, &m, &mut sample_rng(5, 3, 7)).unwrap();
        assert_eq!(a, b);
        let c = aug.apply(&img, &m, &mut sample_rng(5, 3, 8)).unwrap();
        assert_ne!(a, c);
    }
}
