//! Images, label masks and per-pixel class maps, plus the conversions every
//! other module relies on: softmax over classes, argmax, resampling and mask
//! file encoding.
//!
//! All multi-channel values are stored channel-major (`C x H x W`).

use std::io::Cursor;
use std::path::Path;

use divseg_nn::{bilinear_taps, Tensor};
use image::{DynamicImage, GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use crate::{Error, Result};

/// Mask files hold 0 for background and this value for foreground.
pub const MASK_FOREGROUND: u8 = 255;
/// Decoded mask pixels at or above this value are foreground.
pub const MASK_THRESHOLD: u8 = 128;

/// An `H x W x C` image with values in `[0, 1]`, stored planar.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// `data` is channel-major: `data[c * h * w + y * w + x]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "image dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidInput(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidInput(format!(
                "image value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; callers are responsible for keeping values in `[0, 1]`.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Read any common raster format as 3-channel RGB.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::decode(path, e.to_string()))?;
        Ok(Self::from_rgb(&img.to_rgb8()))
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = p.0[c] as f64 / 255.0;
            }
        }
        Self {
            height: h,
            width: w,
            channels: 3,
            data,
        }
    }

    /// 8-bit RGB rendering; single-channel images are replicated to grey.
    pub fn to_rgb(&self) -> RgbImage {
        let (h, w) = (self.height, self.width);
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let c = c.min(self.channels - 1);
                (self.get(y as usize, x as usize, c) * 255.0).round() as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::decode(path, e.to_string()))
    }
}

/// Per-pixel class indices in `0..classes`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "mask dims must be positive, got {height}x{width}"
            )));
        }
        if !(2..=256).contains(&classes) {
            return Err(Error::InvalidInput(format!(
                "class count must be in 2..=256, got {classes}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "mask buffer has {} values, expected {}",
                data.len(),
                height * width
            )));
        }
        if let Some(v) = data.iter().find(|v| **v as usize >= classes) {
            return Err(Error::InvalidInput(format!(
                "mask value {v} is not a class index below {classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, classes: usize, class: u8) -> Result<Self> {
        Self::new(height, width, classes, vec![class; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }

    pub fn same_dims(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }
}

macro_rules! class_map {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            classes: usize,
            height: usize,
            width: usize,
            data: Vec<f64>,
        }

        impl $name {
            pub fn classes(&self) -> usize {
                self.classes
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn get(&self, class: usize, y: usize, x: usize) -> f64 {
                self.data[(class * self.height + y) * self.width + x]
            }

            pub fn channel(&self, class: usize) -> &[f64] {
                let n = self.height * self.width;
                &self.data[class * n..(class + 1) * n]
            }

            fn check_dims(classes: usize, height: usize, width: usize, len: usize) -> Result<()> {
                if classes == 0 || height == 0 || width == 0 {
                    return Err(Error::InvalidInput(format!(
                        "class map dims must be positive, got {classes}x{height}x{width}"
                    )));
                }
                if len != classes * height * width {
                    return Err(Error::InvalidInput(format!(
                        "class map buffer has {len} values, expected {}",
                        classes * height * width
                    )));
                }
                Ok(())
            }
        }
    };
}

class_map!(
    /// Unnormalised per-pixel class scores, `K x H x W`.
    LogitMap
);
class_map!(
    /// Per-pixel class distributions, `K x H x W`; each pixel sums to 1.
    ProbMap
);

impl LogitMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::check_dims(classes, height, width, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("logits must be finite".into()));
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }
}

/// Tolerance on the per-pixel sum of a [`ProbMap`].
pub const PROB_SUM_TOL: f64 = 1e-6;

impl ProbMap {
    pub fn new(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::check_dims(classes, height, width, data.len())?;
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidInput(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        let plane = height * width;
        for p in 0..plane {
            let s: f64 = (0..classes).map(|k| data[k * plane + p]).sum();
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "pixel {p} probabilities sum to {s}"
                )));
            }
        }
        Ok(Self {
            classes,
            height,
            width,
            data,
        })
    }

    /// One-hot distribution of a mask.
    pub fn one_hot(mask: &LabelMask) -> Self {
        let plane = mask.height * mask.width;
        let mut data = vec![0.0; mask.classes * plane];
        for (p, &c) in mask.data.iter().enumerate() {
            data[c as usize * plane + p] = 1.0;
        }
        Self {
            classes: mask.classes,
            height: mask.height,
            width: mask.width,
            data,
        }
    }

    /// Build from values already known to be normalised, renormalising each
    /// pixel to absorb rounding.
    pub(crate) fn from_unnormalized(
        classes: usize,
        height: usize,
        width: usize,
        mut data: Vec<f64>,
    ) -> Self {
        normalize_pixels(classes, height * width, &mut data);
        Self {
            classes,
            height,
            width,
            data,
        }
    }
}

fn normalize_pixels(classes: usize, plane: usize, data: &mut [f64]) {
    for p in 0..plane {
        let s: f64 = (0..classes).map(|k| data[k * plane + p].max(0.0)).sum();
        for k in 0..classes {
            let v = &mut data[k * plane + p];
            *v = if s > 0.0 {
                (v.max(0.0) / s).min(1.0)
            } else {
                1.0 / classes as f64
            };
        }
    }
}

/// Per-pixel exponential normalisation over the class dimension.
pub fn softmax_over_classes(logits: &LogitMap) -> Result<ProbMap> {
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("logits must be finite".into()));
    }
    let (k, plane) = (logits.classes, logits.height * logits.width);
    let mut data = vec![0.0; logits.data.len()];
    for p in 0..plane {
        let max = (0..k)
            .map(|c| logits.data[c * plane + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..k {
            let e = (logits.data[c * plane + p] - max).exp();
            data[c * plane + p] = e;
            sum += e;
        }
        for c in 0..k {
            data[c * plane + p] /= sum;
        }
    }
    Ok(ProbMap {
        classes: k,
        height: logits.height,
        width: logits.width,
        data,
    })
}

/// Vector-Jacobian product of the softmax: given `dL/dp`, returns `dL/dz`
/// where `p = softmax(z)`. Both are channel-major `K x H x W`.
pub fn softmax_backward(probs: &ProbMap, grad_probs: &[f64]) -> Vec<f64> {
    let (k, plane) = (probs.classes, probs.height * probs.width);
    let mut out = vec![0.0; probs.data.len()];
    for p in 0..plane {
        let dot: f64 = (0..k)
            .map(|c| probs.data[c * plane + p] * grad_probs[c * plane + p])
            .sum();
        for c in 0..k {
            let i = c * plane + p;
            out[i] = probs.data[i] * (grad_probs[i] - dot);
        }
    }
    out
}

/// Most probable class per pixel; ties go to the lowest class index.
pub fn argmax_mask(probs: &ProbMap) -> LabelMask {
    let (k, plane) = (probs.classes, probs.height * probs.width);
    let data = (0..plane)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if probs.data[c * plane + p] > probs.data[best * plane + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMask {
        height: probs.height,
        width: probs.width,
        classes: k.max(2),
        data,
    }
}

fn binary_only(mask: &LabelMask) -> Result<()> {
    if mask.classes != 2 {
        return Err(Error::InvalidInput(format!(
            "mask files encode two classes, mask has {}",
            mask.classes
        )));
    }
    Ok(())
}

/// Render a binary mask as an 8-bit greyscale image (0 / 255).
pub fn mask_to_gray(mask: &LabelMask) -> Result<GrayImage> {
    binary_only(mask)?;
    Ok(GrayImage::from_fn(
        mask.width as u32,
        mask.height as u32,
        |x, y| {
            Luma([if mask.get(y as usize, x as usize) == 1 {
                MASK_FOREGROUND
            } else {
                0
            }])
        },
    ))
}

pub fn mask_from_gray(img: &GrayImage) -> LabelMask {
    let data = img
        .pixels()
        .map(|p| u8::from(p.0[0] >= MASK_THRESHOLD))
        .collect();
    LabelMask {
        height: img.height() as usize,
        width: img.width() as usize,
        classes: 2,
        data,
    }
}

/// Encode a binary mask as PNG bytes.
pub fn encode_mask(mask: &LabelMask) -> Result<Vec<u8>> {
    let img = mask_to_gray(mask)?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Internal(format!("png encode: {e}")))?;
    Ok(buf.into_inner())
}

fn decode_dynamic(img: DynamicImage) -> LabelMask {
    mask_from_gray(&img.to_luma8())
}

/// Decode mask bytes in any supported raster format; only `classes == 2`
/// is supported.
pub fn decode_mask(bytes: &[u8], classes: usize) -> Result<LabelMask> {
    if classes != 2 {
        return Err(Error::InvalidInput(format!(
            "mask files encode two classes, requested {classes}"
        )));
    }
    let img = image::load_from_memory(bytes)
        .map_err(|e| Error::InvalidInput(format!("undecodable mask: {e}")))?;
    Ok(decode_dynamic(img))
}

pub fn write_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    mask_to_gray(mask)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::decode(path, e.to_string()))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::decode(path, e.to_string()))?;
    Ok(decode_dynamic(img))
}

fn check_target(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput(format!(
            "resize target must be positive, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Bilinear resampling of channel-major planes (half-pixel centres).
fn resize_planes(src: &[f64], planes: usize, ih: usize, iw: usize, h: usize, w: usize) -> Vec<f64> {
    if (ih, iw) == (h, w) {
        return src.to_vec();
    }
    let ty = bilinear_taps(ih, h);
    let tx = bilinear_taps(iw, w);
    let mut out = vec![0.0; planes * h * w];
    for c in 0..planes {
        let s = &src[c * ih * iw..(c + 1) * ih * iw];
        let d = &mut out[c * h * w..(c + 1) * h * w];
        for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (x, &(x0, x1, wx)) in tx.iter().enumerate() {
                let top = s[y0 * iw + x0] * (1.0 - wx) + s[y0 * iw + x1] * wx;
                let bot = s[y1 * iw + x0] * (1.0 - wx) + s[y1 * iw + x1] * wx;
                d[y * w + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

pub fn resize_image(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    check_target(height, width)?;
    let mut data = resize_planes(
        &img.data,
        img.channels,
        img.height,
        img.width,
        height,
        width,
    );
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(ImageTensor {
        height,
        width,
        channels: img.channels,
        data,
    })
}

/// Bilinear resize followed by per-pixel renormalisation.
pub fn resize_probmap(p: &ProbMap, height: usize, width: usize) -> Result<ProbMap> {
    check_target(height, width)?;
    if (p.height, p.width) == (height, width) {
        return Ok(p.clone());
    }
    let data = resize_planes(&p.data, p.classes, p.height, p.width, height, width);
    Ok(ProbMap::from_unnormalized(p.classes, height, width, data))
}

/// Source index of nearest-neighbour resampling: `floor((i + 0.5) * src / dst)`.
#[inline]
pub fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    (((2 * i + 1) * src) / (2 * dst)).min(src - 1)
}

pub fn resize_mask_nearest(mask: &LabelMask, height: usize, width: usize) -> Result<LabelMask> {
    check_target(height, width)?;
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = nearest_index(y, mask.height, height);
        for x in 0..width {
            data.push(mask.get(sy, nearest_index(x, mask.width, width)));
        }
    }
    Ok(LabelMask {
        height,
        width,
        classes: mask.classes,
        data,
    })
}

/// Stack images into an `N x C x H x W` network input.
pub fn images_to_batch(images: &[ImageTensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels, img.height, img.width) != (c, h, w) {
            return Err(Error::Shape(format!(
                "batch images disagree: {c}x{h}x{w} vs {}x{}x{}",
                img.channels, img.height, img.width
            )));
        }
        data.extend(img.data.iter().map(|&v| v as f32));
    }
    Ok(Tensor::from_vec([images.len(), c, h, w], data)?)
}

/// Split an `N x K x H x W` network output into logit maps.
pub fn batch_to_logits(t: &Tensor) -> Result<Vec<LogitMap>> {
    let [n, k, h, w] = t.shape();
    (0..n)
        .map(|i| {
            LogitMap::new(k, h, w, t.item(i).iter().map(|&v| v as f64).collect()).map_err(|_| {
                Error::NonFinite(format!("network produced non-finite logits for item {i}"))
            })
        })
        .collect()
}

/// Image with foreground pixels alpha-blended towards `color` (RGB in [0, 1]).
pub fn overlay(image: &ImageTensor, mask: &LabelMask, color: [f64; 3], alpha: f64) -> Result<ImageTensor> {
    if !mask.same_dims(image.height, image.width) {
        return Err(Error::InvalidInput(format!(
            "mask is {}x{}, image is {}x{}",
            mask.height, mask.width, image.height, image.width
        )));
    }
    let rgb = if image.channels == 3 {
        image.clone()
    } else {
        ImageTensor::from_rgb(&image.to_rgb())
    };
    let plane = rgb.height * rgb.width;
    let mut data = rgb.data;
    for (p, &m) in mask.data.iter().enumerate() {
        if m != 0 {
            for (c, col) in color.iter().enumerate() {
                let v = &mut data[c * plane + p];
                *v = (1.0 - alpha) * *v + alpha * col;
            }
        }
    }
    ImageTensor::new(rgb.height, rgb.width, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(k: usize, h: usize, w: usize, pixels: &[&[f64]]) -> ProbMap {
        let plane = h * w;
        let mut data = vec![0.0; k * plane];
        for (p, px) in pixels.iter().enumerate() {
            for c in 0..k {
                data[c * plane + p] = px[c];
            }
        }
        ProbMap::new(k, h, w, data).unwrap()
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let l = LogitMap::new(2, 3, 3, vec![0.0; 18]).unwrap();
        let p = softmax_over_classes(&l).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_single_class_is_one() {
        let l = LogitMap::new(1, 2, 2, vec![-3.0, 0.0, 7.5, 42.0]).unwrap();
        let p = softmax_over_classes(&l).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn softmax_ln2_pixel() {
        let l = LogitMap::new(2, 1, 1, vec![2f64.ln(), 0.0]).unwrap();
        let p = softmax_over_classes(&l).unwrap();
        assert!((p.get(0, 0, 0) - 2.0 / 3.0).abs() < 1e-9);
        assert!((p.get(1, 0, 0) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn logits_must_be_finite() {
        assert!(LogitMap::new(2, 1, 1, vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn argmax_examples() {
        let p = probs(2, 1, 1, &[&[0.9, 0.1]]);
        assert_eq!(argmax_mask(&p).data(), &[0]);
        let p = probs(2, 1, 1, &[&[0.5, 0.5]]);
        assert_eq!(argmax_mask(&p).data(), &[0]);
        let p = probs(
            2,
            2,
            2,
            &[&[0.4, 0.6], &[0.7, 0.3], &[0.2, 0.8], &[0.5, 0.5]],
        );
        assert_eq!(argmax_mask(&p).data(), &[1, 0, 1, 0]);
    }

    #[test]
    fn mask_threshold_boundary() {
        let img = GrayImage::from_raw(2, 1, vec![127, 128]).unwrap();
        let mut bytes = Cursor::new(Vec::new());
        img.write_to(&mut bytes, ImageFormat::Png).unwrap();
        let m = decode_mask(bytes.get_ref(), 2).unwrap();
        assert_eq!(m.data(), &[0, 1]);
    }

    #[test]
    fn all_foreground_mask_encodes_to_255() {
        let m = LabelMask::filled(4, 5, 2, 1).unwrap();
        let bytes = encode_mask(&m).unwrap();
        let img = image::load_from_memory(&bytes).unwrap().to_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 255));
        assert_eq!(decode_mask(&bytes, 2).unwrap(), m);
    }

    #[test]
    fn multiclass_mask_files_rejected() {
        let m = LabelMask::filled(2, 2, 3, 2).unwrap();
        assert!(encode_mask(&m).is_err());
        assert!(decode_mask(&[], 3).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageTensor::new(2, 3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(resize_image(&img, 2, 3).unwrap(), img);
        let c = ImageTensor::filled(2, 2, 3, 0.3).unwrap();
        let r = resize_image(&c, 4, 4).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn resize_ramp_is_monotone() {
        let img = ImageTensor::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize_image(&img, 1, 4).unwrap();
        // half-pixel taps: 0, 0.25, 0.75, 1
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
        assert!(r.data().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resize_rejects_zero_dims() {
        let img = ImageTensor::filled(2, 2, 1, 0.0).unwrap();
        assert!(resize_image(&img, 0, 2).is_err());
        let m = LabelMask::filled(2, 2, 2, 0).unwrap();
        assert!(resize_mask_nearest(&m, 2, 0).is_err());
    }

    #[test]
    fn nearest_checkerboard_upsample() {
        let m = LabelMask::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let r = resize_mask_nearest(&m, 4, 4).unwrap();
        // floor((i + 0.5) * 2 / 4) = [0, 0, 1, 1]
        assert_eq!(
            r.data(),
            &[0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0]
        );
        assert_eq!(resize_mask_nearest(&m, 2, 2).unwrap(), m);
    }

    #[test]
    fn resized_probmap_stays_normalised() {
        let p = probs(2, 1, 2, &[&[0.2, 0.8], &[0.9, 0.1]]);
        let r = resize_probmap(&p, 3, 5).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                let s = r.get(0, y, x) + r.get(1, y, x);
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(LabelMask::new(1, 1, 2, vec![2]).is_err());
        assert!(ProbMap::new(2, 1, 1, vec![0.3, 0.3]).is_err());
    }
}
