use divseg_core::metrics::{
    all_class_metrics, challenge_score, confusion, evaluate_dataset, evaluate_masks, per_class_metrics,
    ClassCounts, ClassMetrics, ConfusionCounts,
};
use divseg_core::raster::{write_mask, LabelMask};
use divseg_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, k: u8, side: usize) -> LabelMask {
    LabelMask::new(side, side, k as usize, (0..side * side).map(|_| rng.random_range(0..k)).collect()).unwrap()
}

/// Direct per-pixel counting and textbook formulas.
fn oracle(pred: &LabelMask, gt: &LabelMask, class: u8) -> [f64; 5] {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == class, g == class) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0.0 {
        return [1.0; 5];
    }
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    let fb = |beta2: f64| div((1.0 + beta2) * precision * recall, beta2 * precision + recall);
    [div(tp, tp + fp + fn_), fb(1.0), fb(4.0), precision, recall]
}

fn as_array(m: &ClassMetrics) -> [f64; 5] {
    [m.iou, m.f1, m.f2, m.precision, m.recall]
}

#[test]
fn per_class_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in [2u8, 3] {
        for _ in 0..200 {
            let side = 16;
            let pred = random_mask(&mut rng, k, side);
            // sparse ground truth so some classes go missing
            let gt = if rng.random_bool(0.2) {
                LabelMask::filled(side, side, k as usize, 0).unwrap()
            } else {
                random_mask(&mut rng, k, side)
            };
            let counts = confusion(&pred, &gt, k as usize).unwrap();
            for c in 0..k {
                let got = as_array(&per_class_metrics(&counts, c as usize).unwrap());
                let want = oracle(&pred, &gt, c);
                for (g, w) in got.iter().zip(want) {
                    assert!((g - w).abs() < 1e-12, "k={k} class {c}: {got:?} vs {want:?}");
                }
            }
        }
    }
}

#[test]
fn worked_examples() {
    let m = ClassMetrics::from_counts(ClassCounts { tp: 1, fp: 1, fn_: 1, tn: 0 });
    assert!((m.iou - 1.0 / 3.0).abs() < 1e-15);
    assert!((m.f1 - 0.5).abs() < 1e-15);
    assert!((m.precision - 0.5).abs() < 1e-15 && (m.recall - 0.5).abs() < 1e-15);
    let m = ClassMetrics::from_counts(ClassCounts { tp: 2, fp: 0, fn_: 3, tn: 7 });
    assert!((m.iou - 0.4).abs() < 1e-15);
    assert!((m.precision - 1.0).abs() < 1e-15);
    assert!((m.recall - 0.4).abs() < 1e-15);
    assert!((m.f1 - 4.0 / 7.0).abs() < 1e-15);
    assert!((m.f2 - 10.0 / 22.0).abs() < 1e-15);
}

#[test]
fn degenerate_conventions() {
    let empty = ClassMetrics::from_counts(ClassCounts { tp: 0, fp: 0, fn_: 0, tn: 10 });
    assert_eq!(as_array(&empty), [1.0; 5]);
    let never_predicted = ClassMetrics::from_counts(ClassCounts { tp: 0, fp: 0, fn_: 4, tn: 6 });
    assert_eq!(as_array(&never_predicted), [0.0; 5]);
    let absent_but_predicted = ClassMetrics::from_counts(ClassCounts { tp: 0, fp: 3, fn_: 0, tn: 7 });
    assert_eq!(as_array(&absent_but_predicted), [0.0; 5]);
}

#[test]
fn challenge_examples() {
    let s = challenge_score(&[0.5, 1.0]).unwrap();
    assert_eq!((s.mean, s.sd), (0.75, 0.25));
    let s = challenge_score(&[0.3]).unwrap();
    assert_eq!((s.mean, s.sd), (0.3, 0.0));
    assert!(challenge_score(&[]).is_err());
    let m = ClassMetrics { iou: 0.0, f1: 0.2, f2: 0.4, precision: 0.6, recall: 0.8 };
    assert!((m.challenge() - 0.5).abs() < 1e-15);
}

proptest! {
    #[test]
    fn micro_average_identities(seed in any::<u64>(), k in 2u8..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_mask(&mut rng, k, 12);
        let gt = random_mask(&mut rng, k, 12);
        let counts = confusion(&pred, &gt, k as usize).unwrap();
        let all = all_class_metrics(&counts);
        // pooled FP and FN both count the misclassified pixels once
        let correct = counts.correct() as f64;
        let total = counts.total() as f64;
        prop_assert_eq!(all.precision, correct / total);
        prop_assert_eq!(all.recall, correct / total);
        prop_assert_eq!(all.accuracy, correct / total);
        prop_assert_eq!(all.f1, correct / total);
        prop_assert!((all.iou - correct / (2.0 * total - correct)).abs() < 1e-15);
    }

    #[test]
    fn iou_never_exceeds_f1(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
        let m = ClassMetrics::from_counts(ClassCounts { tp, fp, fn_, tn: 0 });
        prop_assert!(m.iou <= m.f1 + 1e-15);
        for v in as_array(&m) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn merged_counts_equal_counts_of_the_union(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p1, g1, p2, g2) = (
            random_mask(&mut rng, 2, 6),
            random_mask(&mut rng, 2, 6),
            random_mask(&mut rng, 2, 6),
            random_mask(&mut rng, 2, 6),
        );
        let mut merged = confusion(&p1, &g1, 2).unwrap();
        merged.merge(&confusion(&p2, &g2, 2).unwrap()).unwrap();
        let mut added = ConfusionCounts::new(2);
        added.add(&p1, &g1).unwrap();
        added.add(&p2, &g2).unwrap();
        prop_assert_eq!(merged, added);
    }
}

#[test]
fn per_image_rows_and_pooled_totals() {
    let a = LabelMask::new(1, 4, 2, vec![1, 1, 0, 0]).unwrap();
    let b = LabelMask::new(1, 4, 2, vec![1, 0, 0, 0]).unwrap();
    let z = LabelMask::filled(1, 4, 2, 0).unwrap();
    let report = evaluate_masks(
        &[("x".into(), a.clone(), b.clone()), ("y".into(), z.clone(), z.clone())],
        2,
        1,
    )
    .unwrap();
    assert_eq!(report.images, 2);
    assert_eq!(report.per_image[0].target.precision, 0.5);
    assert_eq!(report.per_image[1].score, 1.0);
    assert_eq!(report.target().iou, 0.5);
    let mean = (report.per_image[0].score + 1.0) / 2.0;
    assert!((report.challenge.mean - mean).abs() < 1e-15);
    let back = divseg_core::metrics::MetricsReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn dataset_evaluation_matches_files_by_stem() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    let m = LabelMask::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
    for name in ["a", "b"] {
        write_mask(&m, pred.join(format!("{name}.png"))).unwrap();
        write_mask(&m, gt.join(format!("{name}.png"))).unwrap();
    }
    let report = evaluate_dataset(&pred, &gt, 2).unwrap();
    assert_eq!(report.images, 2);
    assert_eq!(report.target().iou, 1.0);

    write_mask(&m, gt.join("c.png")).unwrap();
    write_mask(&m, pred.join("d.png")).unwrap();
    let err = evaluate_dataset(&pred, &gt, 2).unwrap_err().to_string();
    assert!(err.contains("\"c\"") || err.contains("c"), "{err}");
    assert!(err.contains("no prediction for") && err.contains("no ground truth for"), "{err}");

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert!(matches!(evaluate_dataset(&empty, &empty, 2), Err(Error::InvalidInput(_))));
    assert!(evaluate_dataset(&dir.path().join("nope"), &gt, 2).unwrap_err().is_user_error());
}
