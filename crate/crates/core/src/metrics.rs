//! Confusion-count metrics for hard segmentation masks.
//!
//! Degenerate denominators follow one convention, applied in
//! [`ClassMetrics::from_counts`]:
//! - class absent from both masks (`TP + FP + FN = 0`): every metric is 1;
//! - class present but never predicted: precision is 0;
//! - class predicted but absent from the ground truth: recall is 0.
//!
//! All-class metrics are micro averages over pooled counts, which makes
//! precision, recall and F1 all equal to pixel accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::raster::{read_mask, LabelMask};
use crate::{Error, Result};

/// Per-class one-vs-rest counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// `K x K` confusion matrix, rows ground truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    classes: usize,
    matrix: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            matrix: vec![0; classes * classes],
        }
    }

    pub fn add(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if !gt.same_dims(pred.height(), pred.width()) {
            return Err(Error::InvalidInput(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let k = self.classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p as usize, g as usize);
            if p >= k || g >= k {
                return Err(Error::InvalidInput(format!(
                    "label {} outside {k} classes",
                    p.max(g)
                )));
            }
            self.matrix[g * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::InvalidInput(format!(
                "cannot merge {} classes into {}",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Pixels with ground truth `gt` predicted as `pred`.
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.matrix[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn class(&self, c: usize) -> ClassCounts {
        let tp = self.get(c, c);
        let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.classes).map(|g| self.get(g, c)).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        ClassCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

/// Exact pixel tally of `pred` against `gt` over `classes` labels.
pub fn confusion(pred: &LabelMask, gt: &LabelMask, classes: usize) -> Result<ConfusionCounts> {
    if classes < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 classes, got {classes}")));
    }
    let mut c = ConfusionCounts::new(classes);
    c.add(pred, gt)?;
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub iou: f64,
    pub f1: f64,
    pub f2: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    pub fn from_counts(c: ClassCounts) -> Self {
        let ClassCounts { tp, fp, fn_, .. } = c;
        if tp + fp + fn_ == 0 {
            return Self {
                iou: 1.0,
                f1: 1.0,
                f2: 1.0,
                precision: 1.0,
                recall: 1.0,
            };
        }
        Self {
            iou: ratio(tp, tp + fp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            f2: ratio(5 * tp, 5 * tp + 4 * fn_ + fp),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }

    /// Mean of F1, F2, precision and recall.
    pub fn challenge(&self) -> f64 {
        (self.f1 + self.f2 + self.precision + self.recall) / 4.0
    }
}

pub fn per_class_metrics(counts: &ConfusionCounts, class: usize) -> Result<ClassMetrics> {
    if class >= counts.classes() {
        return Err(Error::InvalidInput(format!(
            "class {class} outside {} classes",
            counts.classes()
        )));
    }
    Ok(ClassMetrics::from_counts(counts.class(class)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllClassMetrics {
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

/// Micro average: per-class counts pooled before the ratio.
pub fn all_class_metrics(counts: &ConfusionCounts) -> AllClassMetrics {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for c in 0..counts.classes() {
        let k = counts.class(c);
        tp += k.tp;
        fp += k.fp;
        fn_ += k.fn_;
    }
    AllClassMetrics {
        iou: ratio(tp, tp + fp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        accuracy: ratio(counts.correct(), counts.total()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengeScore {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

/// Mean and population SD of per-image scores.
pub fn challenge_score(per_image: &[f64]) -> Result<ChallengeScore> {
    if per_image.is_empty() {
        return Err(Error::InvalidInput("no images to score".into()));
    }
    let n = per_image.len() as f64;
    let mean = per_image.iter().sum::<f64>() / n;
    let var = per_image.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(ChallengeScore {
        mean,
        sd: var.sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub name: String,
    pub target: ClassMetrics,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: usize,
    pub classes: usize,
    pub target_class: usize,
    pub counts: ConfusionCounts,
    /// Indexed by class.
    pub per_class: Vec<ClassMetrics>,
    pub all_class: AllClassMetrics,
    /// Over per-image scores of the target class.
    pub challenge: ChallengeScore,
    pub per_image: Vec<ImageRow>,
}

impl MetricsReport {
    pub fn target(&self) -> &ClassMetrics {
        &self.per_class[self.target_class]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::decode(path, e.to_string()))?;
        let res = (|| -> csv::Result<()> {
            w.write_record(["image", "iou", "f1", "f2", "precision", "recall", "score"])?;
            for r in &self.per_image {
                let t = r.target;
                w.write_record([
                    r.name.clone(),
                    t.iou.to_string(),
                    t.f1.to_string(),
                    t.f2.to_string(),
                    t.precision.to_string(),
                    t.recall.to_string(),
                    r.score.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })();
        res.map_err(|e| Error::decode(path, e.to_string()))
    }

    /// Fixed-width text table.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images: {}", self.images);
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:>8} {:>9} {:>8}",
            "class", "iou", "f1", "f2", "precision", "recall"
        );
        for (c, m) in self.per_class.iter().enumerate() {
            let label = if c == self.target_class {
                format!("{c} (target)")
            } else {
                c.to_string()
            };
            let _ = writeln!(
                s,
                "{label:<10} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>8.4}",
                m.iou, m.f1, m.f2, m.precision, m.recall
            );
        }
        let a = &self.all_class;
        let _ = writeln!(
            s,
            "{:<10} {:>8.4} {:>8.4} {:>8} {:>9.4} {:>8.4}",
            "all", a.iou, a.f1, "-", a.precision, a.recall
        );
        let _ = writeln!(s, "accuracy: {:.4}", a.accuracy);
        let _ = writeln!(
            s,
            "challenge mean: {:.4} sd: {:.4}",
            self.challenge.mean, self.challenge.sd
        );
        s
    }
}

/// Metrics over named `(prediction, ground truth)` pairs.
pub fn evaluate_masks(
    pairs: &[(String, LabelMask, LabelMask)],
    classes: usize,
    target_class: usize,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no mask pairs to evaluate".into()));
    }
    if target_class >= classes {
        return Err(Error::InvalidInput(format!(
            "target class {target_class} outside {classes} classes"
        )));
    }
    let mut total = ConfusionCounts::new(classes);
    let mut per_image = Vec::with_capacity(pairs.len());
    for (name, pred, gt) in pairs {
        let mut c = ConfusionCounts::new(classes);
        c.add(pred, gt)
            .map_err(|e| Error::InvalidInput(format!("{name}: {e}")))?;
        total.merge(&c)?;
        let target = ClassMetrics::from_counts(c.class(target_class));
        per_image.push(ImageRow {
            name: name.clone(),
            target,
            score: target.challenge(),
        });
    }
    let scores: Vec<f64> = per_image.iter().map(|r| r.score).collect();
    Ok(MetricsReport {
        images: pairs.len(),
        classes,
        target_class,
        per_class: (0..classes)
            .map(|c| ClassMetrics::from_counts(total.class(c)))
            .collect(),
        all_class: all_class_metrics(&total),
        challenge: challenge_score(&scores)?,
        counts: total,
        per_image,
    })
}

const MASK_EXTENSIONS: [&str; 6] = ["png", "bmp", "jpg", "jpeg", "tif", "tiff"];

/// Mask files of a directory keyed by file stem.
pub fn list_masks(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| MASK_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("bad file name {}", path.display())))?
            .to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::InvalidInput(format!(
                "two masks share the name `{stem}`: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Binary mask files matched by file stem. Unmatched names on either side
/// are an error listing them.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, classes: usize) -> Result<MetricsReport> {
    if classes != 2 {
        return Err(Error::InvalidInput(format!(
            "mask files hold binary masks; {classes} classes requested"
        )));
    }
    let preds = list_masks(pred_dir)?;
    let gts = list_masks(gt_dir)?;
    let missing: Vec<&str> = gts
        .keys()
        .filter(|k| !preds.contains_key(*k))
        .map(String::as_str)
        .collect();
    let extra: Vec<&str> = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::InvalidInput(format!(
            "unmatched masks; no prediction for [{}]; no ground truth for [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    if gts.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no mask files in {}",
            gt_dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(gts.len());
    for (name, gt_path) in &gts {
        let pred = read_mask(&preds[name])?;
        let gt = read_mask(gt_path)?;
        pairs.push((name.clone(), pred, gt));
    }
    evaluate_masks(&pairs, classes, 1)
}
