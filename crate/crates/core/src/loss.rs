//! Single-channel Dice: overlap measured on one designated class channel
//! only, every other channel ignored.
//!
//! Soft form over predicted probabilities `p` and one-hot ground truth `g`
//! of the target class:
//!
//! ```text
//! score = (2 * sum(p * g) + eps) / (sum(p) + sum(g) + eps)
//! loss  = 1 - score
//! ```
//!
//! On hard 0/1 predictions with `eps = 0` this is
//! `2|A∩B| / (2|A∩B| + |B\A| + |A\B|)`. Over a batch the three sums are
//! pooled across all images before the ratio.

use serde::{Deserialize, Serialize};

use crate::raster::{LabelMask, ProbMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceConfig {
    /// Class whose channel is scored (1 = polyp).
    pub target_class: usize,
    /// Smoothing added to numerator and denominator.
    pub smoothing: f64,
}

impl Default for DiceConfig {
    fn default() -> Self {
        Self {
            target_class: 1,
            smoothing: 1.0,
        }
    }
}

impl DiceConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.target_class >= classes {
            return Err(Error::InvalidInput(format!(
                "target class {} out of range for {classes} classes",
                self.target_class
            )));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "smoothing must be finite and non-negative, got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// Pooled sums behind a Dice ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiceSums {
    pub intersection: f64,
    pub predicted: f64,
    pub truth: f64,
}

impl DiceSums {
    fn denominator(&self, eps: f64) -> f64 {
        self.predicted + self.truth + eps
    }

    /// An empty-empty pair with `eps = 0` scores 1.
    pub fn score(&self, eps: f64) -> f64 {
        let den = self.denominator(eps);
        if den == 0.0 {
            1.0
        } else {
            ((2.0 * self.intersection + eps) / den).clamp(0.0, 1.0)
        }
    }
}

fn check_pair(pred: &ProbMap, gt: &LabelMask, cfg: &DiceConfig) -> Result<()> {
    cfg.validate(pred.classes())?;
    if !gt.same_dims(pred.height(), pred.width()) {
        return Err(Error::InvalidInput(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

fn sums(pred: &ProbMap, gt: &LabelMask, target: usize) -> DiceSums {
    let p = pred.channel(target);
    let mut s = DiceSums::default();
    for (pv, &g) in p.iter().zip(gt.data()) {
        s.predicted += pv;
        if g as usize == target {
            s.truth += 1.0;
            s.intersection += pv;
        }
    }
    s
}

fn pooled(preds: &[ProbMap], gts: &[LabelMask], cfg: &DiceConfig) -> Result<DiceSums> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty batches, got {} predictions and {} masks",
            preds.len(),
            gts.len()
        )));
    }
    let mut total = DiceSums::default();
    for (p, g) in preds.iter().zip(gts) {
        check_pair(p, g, cfg)?;
        let s = sums(p, g, cfg.target_class);
        total.intersection += s.intersection;
        total.predicted += s.predicted;
        total.truth += s.truth;
    }
    Ok(total)
}

pub fn single_channel_dice_score(pred: &ProbMap, gt: &LabelMask, cfg: &DiceConfig) -> Result<f64> {
    check_pair(pred, gt, cfg)?;
    Ok(sums(pred, gt, cfg.target_class).score(cfg.smoothing))
}

pub fn single_channel_dice_loss(pred: &ProbMap, gt: &LabelMask, cfg: &DiceConfig) -> Result<f64> {
    Ok(1.0 - single_channel_dice_score(pred, gt, cfg)?)
}

/// One Dice loss over a whole batch (sums pooled before the ratio).
pub fn batch_dice_loss(preds: &[ProbMap], gts: &[LabelMask], cfg: &DiceConfig) -> Result<f64> {
    Ok(1.0 - pooled(preds, gts, cfg)?.score(cfg.smoothing))
}

/// Loss value and its gradient with respect to every probability entry.
#[derive(Clone, Debug)]
pub struct DiceGradient {
    pub loss: f64,
    /// Per image, channel-major `K x H x W`; zero outside the target channel.
    pub grads: Vec<Vec<f64>>,
}

/// Batch loss and analytic `dL/dp`.
///
/// With `S = (2I + eps) / D`, `D = P + G + eps`:
/// `dL/dp_i = -(2 g_i D - (2I + eps)) / D^2` on the target channel.
pub fn batch_dice_loss_grad(
    preds: &[ProbMap],
    gts: &[LabelMask],
    cfg: &DiceConfig,
) -> Result<DiceGradient> {
    let s = pooled(preds, gts, cfg)?;
    let eps = cfg.smoothing;
    let den = s.denominator(eps);
    let num = 2.0 * s.intersection + eps;
    let target = cfg.target_class;
    let grads = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let plane = p.height() * p.width();
            let mut out = vec![0.0; p.data().len()];
            if den > 0.0 {
                let on = -(2.0 * den - num) / (den * den);
                let off = num / (den * den);
                let chan = &mut out[target * plane..(target + 1) * plane];
                for (o, &gv) in chan.iter_mut().zip(g.data()) {
                    *o = if gv as usize == target { on } else { off };
                }
            }
            out
        })
        .collect();
    Ok(DiceGradient {
        loss: 1.0 - s.score(eps),
        grads,
    })
}
