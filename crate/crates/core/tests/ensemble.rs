use divseg_core::backbones::{NetworkSpec, Registry, SegmentationNetwork};
use divseg_core::checkpoint::Checkpoint;
use divseg_core::ensemble::{fuse_hard, fuse_soft, mean_probmap, Ensemble, EnsembleSpec, FusionMode};
use divseg_core::pipeline::{predict, working_probs};
use divseg_core::raster::{argmax_mask, resize_mask_nearest, resize_probmap, ImageTensor, LabelMask, ProbMap};
use divseg_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_probs(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> ProbMap {
    let mut data = vec![0.0; k * h * w];
    for p in 0..h * w {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        for (c, v) in raw.iter().enumerate() {
            data[c * h * w + p] = v / s;
        }
    }
    ProbMap::new(k, h, w, data).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelMask {
    LabelMask::new(h, w, 2, (0..h * w).map(|_| rng.random_range(0..2u8)).collect()).unwrap()
}

#[test]
fn hard_fusion_is_majority_vote_for_every_vote_pattern() {
    for n in [3usize, 5] {
        // one pixel per vote pattern
        let patterns = 1usize << n;
        let masks: Vec<LabelMask> = (0..n)
            .map(|m| LabelMask::new(1, patterns, 2, (0..patterns).map(|p| ((p >> m) & 1) as u8).collect()).unwrap())
            .collect();
        let fused = fuse_hard(&masks, 0.5).unwrap();
        for p in 0..patterns {
            let votes = p.count_ones() as usize;
            assert_eq!(fused.get(0, p), u8::from(2 * votes > n), "n={n} pattern {p:b}");
        }
    }
}

#[test]
fn fusion_ignores_member_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let probs: Vec<ProbMap> = (0..5).map(|_| random_probs(&mut rng, 2, 9, 7)).collect();
    let masks: Vec<LabelMask> = (0..5).map(|_| random_mask(&mut rng, 9, 7)).collect();
    let mean = mean_probmap(&probs).unwrap();
    let soft = fuse_soft(&probs, 0.5).unwrap();
    let hard = fuse_hard(&masks, 0.5).unwrap();
    let mut order: Vec<usize> = (0..5).collect();
    for _ in 0..100 {
        order.shuffle(&mut rng);
        let p: Vec<ProbMap> = order.iter().map(|&i| probs[i].clone()).collect();
        let m: Vec<LabelMask> = order.iter().map(|&i| masks[i].clone()).collect();
        assert_eq!(mean_probmap(&p).unwrap().data(), mean.data());
        assert_eq!(fuse_soft(&p, 0.5).unwrap(), soft);
        assert_eq!(fuse_hard(&m, 0.5).unwrap(), hard);
    }
}

proptest! {
    #[test]
    fn duplicating_every_member_changes_nothing(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs: Vec<ProbMap> = (0..n).map(|_| random_probs(&mut rng, 2, 5, 6)).collect();
        let masks: Vec<LabelMask> = (0..n).map(|_| random_mask(&mut rng, 5, 6)).collect();
        let p2: Vec<ProbMap> = probs.iter().chain(&probs).cloned().collect();
        let m2: Vec<LabelMask> = masks.iter().chain(&masks).cloned().collect();
        prop_assert_eq!(fuse_soft(&p2, 0.5).unwrap(), fuse_soft(&probs, 0.5).unwrap());
        prop_assert_eq!(fuse_hard(&m2, 0.5).unwrap(), fuse_hard(&masks, 0.5).unwrap());
    }

    #[test]
    fn one_hot_members_make_soft_equal_hard(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks: Vec<LabelMask> = (0..n).map(|_| random_mask(&mut rng, 4, 8)).collect();
        let probs: Vec<ProbMap> = masks.iter().map(ProbMap::one_hot).collect();
        prop_assert_eq!(fuse_soft(&probs, 0.5).unwrap(), fuse_hard(&masks, 0.5).unwrap());
    }

    #[test]
    fn single_member_soft_fusion_is_its_own_threshold(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_probs(&mut rng, 2, 6, 6);
        let mean = mean_probmap(std::slice::from_ref(&p)).unwrap();
        prop_assert_eq!(mean.data(), p.data());
        let fused = fuse_soft(std::slice::from_ref(&p), 0.5).unwrap();
        for (i, v) in p.channel(1).iter().enumerate() {
            prop_assert_eq!(fused.data()[i], u8::from(*v >= 0.5));
        }
    }
}

fn small_net(arch: &str, seed: u64) -> SegmentationNetwork {
    Registry::with_defaults()
        .build_network(&NetworkSpec {
            depth: 2,
            base_width: 4,
            seed,
            ..NetworkSpec::new(arch)
        })
        .unwrap()
}

fn test_image() -> ImageTensor {
    ImageTensor::new(20, 28, 3, (0..20 * 28 * 3).map(|i| ((i * 31) % 101) as f64 / 101.0).collect()).unwrap()
}

/// A one-member ensemble reproduces the single model. At an exact 0.5 the
/// fusion rounds up to foreground while argmax keeps background.
#[test]
fn single_member_ensemble_equals_single_model_prediction() {
    let img = test_image();
    for seed in [3, 4] {
        let mut single = small_net("unet", seed);
        let expected = predict(&mut single, std::slice::from_ref(&img), 16).unwrap().remove(0);
        let p1 = resize_probmap(&working_probs(&mut single, &img, 16).unwrap(), 20, 28).unwrap();
        for mode in [FusionMode::Soft, FusionMode::Hard] {
            let spec = EnsembleSpec::new(vec!["m0".into()], mode, 16);
            let mut ens = Ensemble::from_networks(spec, vec![small_net("unet", seed)]).unwrap();
            let got = ens.predict(&img).unwrap();
            let mut compared = 0;
            for (i, (g, e)) in got.data().iter().zip(expected.data()).enumerate() {
                if mode == FusionMode::Soft && p1.channel(1)[i] == 0.5 {
                    assert_eq!(*g, 1);
                    continue;
                }
                if mode == FusionMode::Hard {
                    // hard mode resizes the mask, not the probabilities
                    continue;
                }
                assert_eq!(g, e, "{mode} pixel {i}");
                compared += 1;
            }
            if mode == FusionMode::Hard {
                let mut net = small_net("unet", seed);
                let m = argmax_mask(&working_probs(&mut net, &img, 16).unwrap());
                assert_eq!(got, resize_mask_nearest(&m, 20, 28).unwrap());
            } else {
                assert!(compared > 0);
            }
        }
    }
}

#[test]
fn mixed_architectures_fuse_at_the_original_size() {
    let spec = EnsembleSpec::new(vec!["a".into(), "b".into(), "c".into()], FusionMode::Soft, 16);
    let members = vec![small_net("unet", 0), small_net("fpn", 1), small_net("deeplabv3plus", 2)];
    let mut ens = Ensemble::from_networks(spec, members).unwrap();
    let m = ens.predict(&test_image()).unwrap();
    assert_eq!((m.height(), m.width(), m.classes()), (20, 28, 2));
}

#[test]
fn unreadable_member_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good");
    Checkpoint::save(&good, &small_net("unet", 0), 1, 0.5, None, Some(16)).unwrap();
    let bad = dir.path().join("missing");
    let spec = EnsembleSpec::new(vec![good, bad.clone()], FusionMode::Soft, 16);
    let err = Ensemble::load(spec, &Registry::with_defaults()).unwrap_err();
    let msg = err.to_string();
    assert!(err.is_user_error());
    assert!(msg.contains("member 1") && msg.contains(&bad.display().to_string()), "{msg}");
}

#[test]
fn members_must_agree_on_classes() {
    let three = Registry::with_defaults()
        .build_network(&NetworkSpec {
            depth: 2,
            base_width: 4,
            classes: 3,
            ..NetworkSpec::new("unet")
        })
        .unwrap();
    let spec = EnsembleSpec::new(vec!["a".into(), "b".into()], FusionMode::Soft, 16);
    let err = Ensemble::from_networks(spec, vec![small_net("unet", 0), three]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn mismatched_member_shapes_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_probs(&mut rng, 2, 4, 4);
    let b = random_probs(&mut rng, 2, 4, 5);
    assert!(matches!(fuse_soft(&[a, b], 0.5), Err(Error::Shape(_))));
    let a = random_mask(&mut rng, 4, 4);
    let b = random_mask(&mut rng, 5, 4);
    assert!(matches!(fuse_hard(&[a, b], 0.5), Err(Error::Shape(_))));
}

