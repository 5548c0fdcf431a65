use std::path::{Path, PathBuf};

use divseg_nn::{Adam, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{sample_rng, Augmenter};
use super::config::{lr_at_epoch, SelectionMetric, TrainConfig};
use super::data::{load_sample, DatasetManifest, Split};
use super::step::train_step;
use crate::backbones::{Registry, SegmentationNetwork};
use crate::checkpoint::Checkpoint;
use crate::loss::DiceConfig;
use crate::metrics::{ClassMetrics, ConfusionCounts};
use crate::raster::{
    argmax_mask, batch_to_logits, images_to_batch, resize_image, resize_mask_nearest,
    resize_probmap, softmax_over_classes, ImageTensor, LabelMask, ProbMap,
};
use crate::{Error, Result};

pub const BEST_DIR: &str = "best";
pub const RECORDS_FILE: &str = "records.csv";

/// Directory name of the checkpoint written after `epoch`.
pub fn epoch_dir(epoch: usize) -> String {
    format!("epoch_{epoch:03}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub arch_id: String,
    pub epoch: usize,
    pub train_loss: f64,
    /// Target-class metrics over the pooled validation split.
    pub validation: ClassMetrics,
    /// Checkpoint directory, when one was written for this epoch.
    pub weights: Option<PathBuf>,
}

impl CheckpointRecord {
    pub fn metric(&self, m: SelectionMetric) -> f64 {
        match m {
            SelectionMetric::ValidationIou => self.validation.iou,
            SelectionMetric::ValidationF1 => self.validation.f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<CheckpointRecord>,
    /// Index into `records`.
    pub best: usize,
    /// `best` checkpoint directory, when an output directory was given.
    pub best_dir: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn best(&self) -> &CheckpointRecord {
        &self.records[self.best]
    }
}

/// Index of the record with the largest metric; ties go to the earliest.
pub fn select_best(records: &[CheckpointRecord], metric: SelectionMetric) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if best.is_none_or(|b| r.metric(metric) > records[b].metric(metric)) {
            best = Some(i);
        }
    }
    best
}

type Sample = (ImageTensor, LabelMask);

fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    manifest.split(split).into_iter().map(load_sample).collect()
}

/// Softmax outputs at `size x size` for images of any dimensions, in
/// chunks of `batch` (evaluation mode).
pub fn working_probs_batch(
    net: &mut SegmentationNetwork,
    images: &[ImageTensor],
    size: usize,
    batch: usize,
) -> Result<Vec<ProbMap>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let resized = chunk
            .iter()
            .map(|img| resize_image(img, size, size))
            .collect::<Result<Vec<_>>>()?;
        if let Some(img) = resized.first() {
            if img.channels() != net.in_channels() {
                return Err(Error::InvalidInput(format!(
                    "image has {} channels, network expects {}",
                    img.channels(),
                    net.in_channels()
                )));
            }
        }
        let logits = net.forward(&images_to_batch(&resized)?, false)?;
        for l in batch_to_logits(&logits)? {
            out.push(softmax_over_classes(&l)?);
        }
    }
    Ok(out)
}

/// Softmax output of one image at `size x size`.
pub fn working_probs(net: &mut SegmentationNetwork, image: &ImageTensor, size: usize) -> Result<ProbMap> {
    Ok(working_probs_batch(net, std::slice::from_ref(image), size, 1)?.remove(0))
}

/// Masks at the original resolution of each image: resize in, evaluate,
/// resize the probabilities back bilinearly, argmax.
pub fn predict(
    net: &mut SegmentationNetwork,
    images: &[ImageTensor],
    working_size: usize,
) -> Result<Vec<LabelMask>> {
    predict_batched(net, images, working_size, 8)
}

pub fn predict_batched(
    net: &mut SegmentationNetwork,
    images: &[ImageTensor],
    working_size: usize,
    batch: usize,
) -> Result<Vec<LabelMask>> {
    let probs = working_probs_batch(net, images, working_size, batch)?;
    images
        .iter()
        .zip(&probs)
        .map(|(img, p)| Ok(argmax_mask(&resize_probmap(p, img.height(), img.width())?)))
        .collect()
}

/// Load a checkpoint and predict.
pub fn predict_checkpoint(
    dir: impl AsRef<Path>,
    registry: &Registry,
    images: &[ImageTensor],
    working_size: usize,
) -> Result<Vec<LabelMask>> {
    let mut net = Checkpoint::load_network(dir, registry)?;
    predict(&mut net, images, working_size)
}

fn validate(
    net: &mut SegmentationNetwork,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<ClassMetrics> {
    let images: Vec<ImageTensor> = samples.iter().map(|s| s.0.clone()).collect();
    let preds = predict_batched(net, &images, cfg.working_size, cfg.batch_size)?;
    let mut counts = ConfusionCounts::new(net.classes());
    for (p, (_, gt)) in preds.iter().zip(samples) {
        counts.add(p, gt)?;
    }
    Ok(ClassMetrics::from_counts(counts.class(cfg.target_class)))
}

fn write_records(path: &Path, records: &[CheckpointRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::decode(path, e.to_string()))?;
    let res = (|| -> csv::Result<()> {
        w.write_record([
            "arch_id", "epoch", "train_loss", "iou", "f1", "f2", "precision", "recall", "weights",
        ])?;
        for r in records {
            let v = r.validation;
            w.write_record([
                r.arch_id.clone(),
                r.epoch.to_string(),
                r.train_loss.to_string(),
                v.iou.to_string(),
                v.f1.to_string(),
                v.f2.to_string(),
                v.precision.to_string(),
                v.recall.to_string(),
                r.weights
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "-".into()),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::decode(path, e.to_string()))
}

/// Train `net` on the train split, validating after every epoch.
///
/// Per epoch: seeded shuffle, augmentation with a generator per
/// `(seed, epoch, sample)`, resize to the working size, Dice step on the
/// target class. Validation images are never augmented. With `out_dir`,
/// checkpoints go to `epoch_NNN/` (when `save_every_epoch`), the selected
/// one to `best/`, and the records to `records.csv`. On return `net`
/// holds the selected weights.
pub fn train(
    net: &mut SegmentationNetwork,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    augmenter: &Augmenter,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_with_progress(net, manifest, cfg, augmenter, out_dir, |_| {})
}

pub fn train_with_progress(
    net: &mut SegmentationNetwork,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    augmenter: &Augmenter,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&CheckpointRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dice = DiceConfig {
        target_class: cfg.target_class,
        smoothing: cfg.dice_smoothing,
    };
    dice.validate(net.classes())?;
    let train_set = load_split(manifest, Split::Train)?;
    let val_set = load_split(manifest, Split::Validation)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(format!(
            "training needs train and validation samples, manifest has {} and {}",
            train_set.len(),
            val_set.len()
        )));
    }
    for (_, m) in train_set.iter().chain(&val_set) {
        if m.classes() > net.classes() {
            return Err(Error::InvalidInput(format!(
                "masks have {} classes, network predicts {}",
                m.classes(),
                net.classes()
            )));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let size = cfg.working_size;
    let arch_id = net.spec().name().to_string();
    let mut optimizer = Adam::new();
    let mut records: Vec<CheckpointRecord> = Vec::with_capacity(cfg.epochs);
    let mut best_store: Option<ParamStore> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg)?;
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).rotate_left(32));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, m) = &train_set[i];
                let mut rng = sample_rng(cfg.seed, epoch, i);
                let (img, m) = augmenter.apply(img, m, &mut rng)?;
                images.push(resize_image(&img, size, size)?);
                masks.push(resize_mask_nearest(&m, size, size)?);
            }
            let batch = images_to_batch(&images)?;
            let loss = train_step(net, &batch, &masks, &dice, &mut optimizer, lr).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            })?;
            loss_sum += loss;
            batches += 1;
        }
        let validation = validate(net, &val_set, cfg)?;
        let train_loss = loss_sum / batches as f64;
        let weights = match out_dir {
            Some(dir) if cfg.save_every_epoch => {
                let d = dir.join(epoch_dir(epoch));
                Checkpoint::save(&d, net, epoch, train_loss, Some(validation), Some(size))?;
                Some(d)
            }
            _ => None,
        };
        let record = CheckpointRecord {
            arch_id: arch_id.clone(),
            epoch,
            train_loss,
            validation,
            weights,
        };
        let improved = match select_best(&records, cfg.selection_metric) {
            None => true,
            Some(b) => record.metric(cfg.selection_metric) > records[b].metric(cfg.selection_metric),
        };
        if improved {
            best_store = Some(net.params().clone());
        }
        progress(&record);
        records.push(record);
    }

    let best = select_best(&records, cfg.selection_metric).expect("epochs >= 1");
    net.params_mut()
        .load_from(best_store.as_ref().expect("first epoch always improves"))?;
    let mut best_dir = None;
    if let Some(dir) = out_dir {
        let r = &records[best];
        let d = dir.join(BEST_DIR);
        Checkpoint::save(&d, net, r.epoch, r.train_loss, Some(r.validation), Some(size))?;
        write_records(&dir.join(RECORDS_FILE), &records)?;
        best_dir = Some(d);
    }
    Ok(TrainOutcome {
        records,
        best,
        best_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(epoch: usize, iou: f64) -> CheckpointRecord {
        CheckpointRecord {
            arch_id: "unet".into(),
            epoch,
            train_loss: 0.5,
            validation: ClassMetrics {
                iou,
                f1: iou,
                f2: iou,
                precision: iou,
                recall: iou,
            },
            weights: None,
        }
    }

    #[test]
    fn selection_prefers_earliest_tie() {
        let rs = vec![record(1, 0.2), record(2, 0.7), record(3, 0.7), record(4, 0.5)];
        assert_eq!(select_best(&rs, SelectionMetric::ValidationIou), Some(1));
        assert_eq!(select_best(&[], SelectionMetric::ValidationIou), None);
    }
}
