//! Ensemble fusion of independently trained segmentation networks.
//!
//! Every member sees the same resized image; per-pixel softmax outputs are
//! either averaged (`soft`) or turned into hard masks and voted (`hard`).
//! Averages are rounded half-up: a pixel whose mean foreground value is
//! exactly the threshold becomes foreground.
//!
//! Per-pixel sums are taken over member values in sorted order, so the
//! fused result is bitwise independent of member order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbones::{Registry, SegmentationNetwork};
use crate::checkpoint::Checkpoint;
use crate::pipeline::working_probs;
use crate::raster::{
    argmax_mask, resize_mask_nearest, resize_probmap, ImageTensor, LabelMask, ProbMap,
};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Mean of member probability maps.
    #[default]
    Soft,
    /// Mean of member binary masks.
    Hard,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(FusionMode::Soft),
            "hard" => Ok(FusionMode::Hard),
            other => Err(Error::Config(format!(
                "fusion mode must be `soft` or `hard`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Soft => "soft",
            FusionMode::Hard => "hard",
        })
    }
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_working_size() -> usize {
    256
}

/// Ensemble manifest: ordered member checkpoints plus fusion settings.
///
/// ```toml
/// fusion_mode = "soft"
/// threshold = 0.5
/// working_size = 256
/// members = ["unetpp/best", "fpn/best", "triunet/best"]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<PathBuf>,
    #[serde(default)]
    pub fusion_mode: FusionMode,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_working_size")]
    pub working_size: usize,
}

impl EnsembleSpec {
    pub fn new(members: Vec<PathBuf>, fusion_mode: FusionMode, working_size: usize) -> Self {
        Self {
            members,
            fusion_mode,
            threshold: DEFAULT_THRESHOLD,
            working_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("ensemble has no members".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.working_size == 0 {
            return Err(Error::Config("working_size must be positive".into()));
        }
        Ok(())
    }

    /// Read a manifest; relative member paths resolve against its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: Self =
            toml::from_str(&text).map_err(|e| Error::decode(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut spec.members {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn check_same_shape<'a, I>(dims: I) -> Result<()>
where
    I: IntoIterator<Item = (usize, usize, usize)> + 'a,
{
    let mut it = dims.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidInput("nothing to fuse".into()))?;
    for (i, d) in it.enumerate() {
        if d != first {
            return Err(Error::Shape(format!(
                "member {} has shape {:?}, member 0 has {:?}",
                i + 1,
                d,
                first
            )));
        }
    }
    Ok(())
}

/// Order-independent mean of one value per member.
fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-pixel, per-class mean of member distributions.
pub fn mean_probmap(prob_maps: &[ProbMap]) -> Result<ProbMap> {
    check_same_shape(
        prob_maps
            .iter()
            .map(|p| (p.classes(), p.height(), p.width())),
    )?;
    let first = &prob_maps[0];
    let mut scratch = vec![0.0; prob_maps.len()];
    let data = (0..first.data().len())
        .map(|i| {
            for (s, p) in scratch.iter_mut().zip(prob_maps) {
                *s = p.data()[i];
            }
            sorted_mean(&mut scratch)
        })
        .collect();
    // a mean of distributions is one already; no renormalising, so a single
    // member comes back bit for bit
    ProbMap::new(first.classes(), first.height(), first.width(), data)
}

/// Hard mask from a (mean) distribution: for two classes, foreground where
/// `p[1] >= threshold`; otherwise argmax with ties to the lowest class.
pub fn threshold_probmap(p: &ProbMap, threshold: f64) -> LabelMask {
    if p.classes() != 2 {
        return argmax_mask(p);
    }
    let data = p.channel(1).iter().map(|&v| u8::from(v >= threshold)).collect();
    LabelMask::new(p.height(), p.width(), 2, data).expect("binary values")
}

/// Soft fusion: average the member distributions, then round.
pub fn fuse_soft(prob_maps: &[ProbMap], threshold: f64) -> Result<LabelMask> {
    Ok(threshold_probmap(&mean_probmap(prob_maps)?, threshold))
}

/// Hard fusion: average binary member masks and round half-up.
pub fn fuse_hard(masks: &[LabelMask], threshold: f64) -> Result<LabelMask> {
    check_same_shape(masks.iter().map(|m| (m.classes(), m.height(), m.width())))?;
    for (i, m) in masks.iter().enumerate() {
        if m.classes() != 2 {
            return Err(Error::InvalidInput(format!(
                "hard fusion needs binary masks; member {i} has {} classes",
                m.classes()
            )));
        }
    }
    let n = masks.len() as f64;
    let first = &masks[0];
    let data = (0..first.data().len())
        .map(|i| {
            let votes = masks.iter().filter(|m| m.data()[i] == 1).count() as f64;
            u8::from(votes / n >= threshold)
        })
        .collect();
    LabelMask::new(first.height(), first.width(), 2, data)
}

/// Loaded, frozen members ready for inference.
#[derive(Debug)]
pub struct Ensemble {
    spec: EnsembleSpec,
    members: Vec<SegmentationNetwork>,
}

impl Ensemble {
    /// Load every member checkpoint; failures name the member.
    pub fn load(spec: EnsembleSpec, registry: &Registry) -> Result<Self> {
        spec.validate()?;
        let mut members = Vec::with_capacity(spec.members.len());
        for (i, path) in spec.members.iter().enumerate() {
            let net = Checkpoint::load_network(path, registry).map_err(|e| {
                Error::InvalidInput(format!(
                    "ensemble member {i} ({}): {e}",
                    path.display()
                ))
            })?;
            members.push(net);
        }
        Self::from_networks(spec, members)
    }

    pub fn from_networks(spec: EnsembleSpec, members: Vec<SegmentationNetwork>) -> Result<Self> {
        spec.validate()?;
        let first = members
            .first()
            .ok_or_else(|| Error::Config("ensemble has no members".into()))?;
        let (k, c) = (first.classes(), first.in_channels());
        for (i, m) in members.iter().enumerate().skip(1) {
            if m.classes() != k || m.in_channels() != c {
                return Err(Error::Config(format!(
                    "member {i} has {} classes / {} input channels, member 0 has {k} / {c}",
                    m.classes(),
                    m.in_channels()
                )));
            }
        }
        if spec.fusion_mode == FusionMode::Hard && k != 2 {
            return Err(Error::Config(format!(
                "hard fusion needs two classes, members have {k}"
            )));
        }
        Ok(Self { spec, members })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn members_mut(&mut self) -> &mut [SegmentationNetwork] {
        &mut self.members
    }

    /// Member distributions at the working size.
    pub fn member_probs(&mut self, image: &ImageTensor) -> Result<Vec<ProbMap>> {
        let size = self.spec.working_size;
        self.members
            .iter_mut()
            .map(|m| working_probs(m, image, size))
            .collect()
    }

    /// Fused mask at the image's original resolution.
    pub fn predict(&mut self, image: &ImageTensor) -> Result<LabelMask> {
        let probs = self.member_probs(image)?;
        let (h, w) = (image.height(), image.width());
        match self.spec.fusion_mode {
            FusionMode::Soft => {
                let mean = mean_probmap(&probs)?;
                let full = resize_probmap(&mean, h, w)?;
                Ok(threshold_probmap(&full, self.spec.threshold))
            }
            FusionMode::Hard => {
                let masks: Vec<LabelMask> = probs.iter().map(argmax_mask).collect();
                let fused = fuse_hard(&masks, self.spec.threshold)?;
                resize_mask_nearest(&fused, h, w)
            }
        }
    }
}

/// Ensemble prediction for one image with loaded members.
pub fn divergentnets_predict(
    image: &ImageTensor,
    ensemble: &mut Ensemble,
) -> Result<LabelMask> {
    ensemble.predict(image)
}
