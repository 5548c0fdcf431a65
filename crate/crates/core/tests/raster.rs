use divseg_core::raster::{
    argmax_mask, decode_mask, encode_mask, mask_from_gray, nearest_index, resize_image,
    resize_mask_nearest, resize_probmap, softmax_over_classes, ImageTensor, LabelMask, LogitMap,
    ProbMap, PROB_SUM_TOL,
};
use image::{GrayImage, Luma};
use proptest::prelude::*;

#[test]
fn gray_threshold_boundary() {
    let img = GrayImage::from_fn(4, 1, |x, _| Luma([[0u8, 127, 128, 255][x as usize]]));
    assert_eq!(mask_from_gray(&img).data(), &[0, 0, 1, 1]);
}

#[test]
fn nearest_index_examples() {
    // downsampling 4 -> 2 samples source centres 1 and 3
    assert_eq!((0..2).map(|i| nearest_index(i, 4, 2)).collect::<Vec<_>>(), vec![1, 3]);
    // upsampling 2 -> 4 repeats
    assert_eq!((0..4).map(|i| nearest_index(i, 2, 4)).collect::<Vec<_>>(), vec![0, 0, 1, 1]);
}

proptest! {
    #[test]
    fn mask_png_round_trip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u8> = (0..h * w).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let m = LabelMask::new(h, w, 2, data).unwrap();
        prop_assert_eq!(decode_mask(&encode_mask(&m).unwrap(), 2).unwrap(), m);
    }

    #[test]
    fn softmax_rows_sum_to_one(logits in prop::collection::vec(-30.0f64..30.0, 12)) {
        let p = softmax_over_classes(&LogitMap::new(3, 2, 2, logits).unwrap()).unwrap();
        for px in 0..4 {
            let s: f64 = (0..3).map(|k| p.data()[k * 4 + px]).sum();
            prop_assert!((s - 1.0).abs() < PROB_SUM_TOL);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-5.0f64..5.0, 8), c in -50.0f64..50.0) {
        let a = softmax_over_classes(&LogitMap::new(2, 2, 2, logits.clone()).unwrap()).unwrap();
        let b = softmax_over_classes(&LogitMap::new(2, 2, 2, logits.iter().map(|v| v + c).collect()).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_of_one_hot_is_identity(labels in prop::collection::vec(0u8..4, 12)) {
        let m = LabelMask::new(3, 4, 4, labels).unwrap();
        prop_assert_eq!(argmax_mask(&ProbMap::one_hot(&m)), m);
    }

    #[test]
    fn resized_probabilities_stay_normalised(
        fg in prop::collection::vec(0.0f64..=1.0, 16),
        h in 1usize..12,
        w in 1usize..12,
    ) {
        let mut d: Vec<f64> = fg.iter().map(|p| 1.0 - p).collect();
        d.extend_from_slice(&fg);
        let p = ProbMap::new(2, 4, 4, d).unwrap();
        let r = resize_probmap(&p, h, w).unwrap();
        prop_assert!(ProbMap::new(2, h, w, r.data().to_vec()).is_ok());
    }

    #[test]
    fn resized_images_stay_in_range(vals in prop::collection::vec(0.0f64..=1.0, 48), h in 1usize..10, w in 1usize..10) {
        let img = ImageTensor::new(4, 4, 3, vals).unwrap();
        let r = resize_image(&img, h, w).unwrap();
        prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn nearest_resize_keeps_alphabet(labels in prop::collection::vec(0u8..3, 20), h in 1usize..15, w in 1usize..15) {
        let m = LabelMask::new(4, 5, 3, labels.clone()).unwrap();
        let r = resize_mask_nearest(&m, h, w).unwrap();
        prop_assert!(r.data().iter().all(|v| labels.contains(v)));
        // integer upscaling then downscaling restores the mask
        let up = resize_mask_nearest(&m, 12, 15).unwrap();
        prop_assert_eq!(resize_mask_nearest(&up, 4, 5).unwrap(), m);
    }
}
