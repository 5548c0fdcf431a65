use std::collections::BTreeMap;

use divseg_core::backbones::{NetworkSpec, Registry};
use divseg_core::loss::{batch_dice_loss, DiceConfig};
use divseg_core::raster::{batch_to_logits, softmax_over_classes, LabelMask, ProbMap};
use divseg_core::triunet::{build_triunet, end_to_end_step, subnet_of, TriUNetSpec, SUBNETS};
use divseg_core::{Error, Result};
use divseg_nn::{Adam, Tensor};

fn template(seed: u64) -> NetworkSpec {
    NetworkSpec {
        depth: 3,
        base_width: 4,
        seed,
        ..NetworkSpec::new("unet")
    }
}

fn input(n: usize, size: usize) -> Tensor {
    Tensor::from_vec(
        [n, 3, size, size],
        (0..n * 3 * size * size).map(|i| ((i * 53) % 97) as f32 / 97.0).collect(),
    )
    .unwrap()
}

fn masks(n: usize, size: usize) -> Vec<LabelMask> {
    (0..n)
        .map(|i| {
            LabelMask::new(size, size, 2, (0..size * size).map(|p| u8::from((p % size + i) % 7 < 3)).collect())
                .unwrap()
        })
        .collect()
}

fn training_loss(net: &mut divseg_core::backbones::SegmentationNetwork, x: &Tensor, gts: &[LabelMask]) -> Result<f64> {
    let y = net.forward(x, true)?;
    let probs = batch_to_logits(&y)?
        .iter()
        .map(softmax_over_classes)
        .collect::<Result<Vec<ProbMap>>>()?;
    batch_dice_loss(&probs, gts, &DiceConfig::default())
}

#[test]
fn forward_shape_contract() {
    let mut net = build_triunet(&TriUNetSpec::from_template(&template(0))).unwrap();
    for size in [32, 64, 128] {
        assert_eq!(net.forward(&input(1, size), false).unwrap().shape(), [1, 2, size, size]);
    }
    let spec = NetworkSpec { depth: 4, ..template(0) };
    let mut net = build_triunet(&TriUNetSpec::from_template(&spec)).unwrap();
    assert_eq!(net.forward(&input(1, 64), false).unwrap().shape(), [1, 2, 64, 64]);
}

#[test]
fn malformed_specs_are_rejected() {
    let good = TriUNetSpec::from_template(&template(0));
    let mut wrong_c = good.clone();
    wrong_c.net_c.in_channels = 2;
    let mut wrong_b = good.clone();
    wrong_b.net_b.in_channels = 4;
    let mut wrong_classes = good.clone();
    wrong_classes.net_a.classes = 3;
    for spec in [wrong_c, wrong_b, wrong_classes] {
        assert!(matches!(build_triunet(&spec), Err(Error::Config(_))), "{spec:?}");
    }
}

#[test]
fn parameter_count_is_the_sum_of_the_parts() {
    let spec = TriUNetSpec::from_template(&template(3));
    let tri = build_triunet(&spec).unwrap();
    let r = Registry::with_defaults();
    let parts: usize = [&spec.net_a, &spec.net_b, &spec.net_c]
        .iter()
        .map(|s| r.build_network(s).unwrap().params().num_scalars())
        .sum();
    assert_eq!(tri.params().num_scalars(), parts);
    for p in tri.params().params() {
        assert!(subnet_of(&p.name).is_some(), "{}", p.name);
    }
}

/// Evaluation output equals `net_c(concat(net_a(x), net_b(x)))` with the
/// three parts built on their own.
#[test]
fn composite_equals_manual_composition() {
    let spec = TriUNetSpec::from_template(&template(8));
    let r = Registry::with_defaults();
    let x = input(2, 32);
    let v1 = r.build_network(&spec.net_a).unwrap().forward(&x, false).unwrap();
    let v2 = r.build_network(&spec.net_b).unwrap().forward(&x, false).unwrap();
    let mut cat = Vec::new();
    for i in 0..2 {
        cat.extend_from_slice(v1.item(i));
        cat.extend_from_slice(v2.item(i));
    }
    let cat = Tensor::from_vec([2, 4, 32, 32], cat).unwrap();
    let manual = r.build_network(&spec.net_c).unwrap().forward(&cat, false).unwrap();
    let composite = build_triunet(&spec).unwrap().forward(&x, false).unwrap();
    assert_eq!(composite.data(), manual.data());
}

#[test]
fn identical_seeds_give_identical_branches() {
    let mut spec = TriUNetSpec::from_template(&template(5));
    spec.net_b.seed = spec.net_a.seed;
    let r = Registry::with_defaults();
    let x = input(1, 32);
    let v1 = r.build_network(&spec.net_a).unwrap().forward(&x, false).unwrap();
    let v2 = r.build_network(&spec.net_b).unwrap().forward(&x, false).unwrap();
    assert_eq!(v1.data(), v2.data());
    let tri = build_triunet(&spec).unwrap();
    let store = tri.params();
    for p in store.params().iter().filter(|p| p.name.starts_with("net_a.")) {
        let twin = store.param(store.param_id(&p.name.replacen("net_a.", "net_b.", 1)).unwrap());
        assert_eq!(p.value.data(), twin.value.data());
    }
}

#[test]
fn swapping_the_parallel_pair_changes_the_output() {
    let spec = TriUNetSpec::from_template(&template(6));
    let mut swapped = spec.clone();
    std::mem::swap(&mut swapped.net_a, &mut swapped.net_b);
    let x = input(1, 32);
    let a = build_triunet(&spec).unwrap().forward(&x, false).unwrap();
    let b = build_triunet(&swapped).unwrap().forward(&x, false).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn one_end_to_end_step_updates_all_three_parts() {
    let mut net = build_triunet(&TriUNetSpec::from_template(&template(1))).unwrap();
    let (x, gts) = (input(2, 32), masks(2, 32));
    let before = net.params().clone();
    let expected = training_loss(&mut net, &x, &gts).unwrap();
    let loss = end_to_end_step(&mut net, &x, &gts, &DiceConfig::default(), &mut Adam::new(), 1e-3).unwrap();
    assert!(loss > 0.0);
    assert_eq!(loss, expected);
    let mut delta: BTreeMap<&str, f32> = BTreeMap::new();
    for (p, q) in before.params().iter().zip(net.params().params()) {
        let d = delta.entry(subnet_of(&p.name).unwrap()).or_default();
        *d = d.max(p.value.max_abs_diff(&q.value));
    }
    for s in SUBNETS {
        assert!(delta[s] > 0.0, "{s} did not move: {delta:?}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut net = build_triunet(&TriUNetSpec::from_template(&template(1))).unwrap();
    let before = net.params().clone();
    end_to_end_step(&mut net, &input(2, 32), &masks(2, 32), &DiceConfig::default(), &mut Adam::new(), 0.0).unwrap();
    for (p, q) in before.params().iter().zip(net.params().params()) {
        assert_eq!(p.value.data(), q.value.data(), "{}", p.name);
    }
}

/// The loss gradient reaches every part: for the entry with the largest
/// gradient in each part, a central difference of the loss agrees.
#[test]
fn gradient_reaches_every_part() {
    let mut net = build_triunet(&TriUNetSpec::from_template(&template(2))).unwrap();
    let (x, gts) = (input(2, 32), masks(2, 32));
    end_to_end_step(&mut net, &x, &gts, &DiceConfig::default(), &mut Adam::new(), 0.0).unwrap();
    for s in SUBNETS {
        let (pi, ei, g) = net
            .params()
            .params()
            .iter()
            .enumerate()
            .filter(|(_, p)| subnet_of(&p.name) == Some(s))
            .flat_map(|(pi, p)| p.grad.data().iter().enumerate().map(move |(ei, g)| (pi, ei, *g)))
            .max_by(|a, b| a.2.abs().total_cmp(&b.2.abs()))
            .unwrap();
        assert!(g != 0.0, "{s}: zero gradient");
        let h = 1e-4f32;
        let orig = net.params().params()[pi].value.data()[ei];
        let at = |net: &mut divseg_core::backbones::SegmentationNetwork, v: f32| {
            net.params_mut().params_mut()[pi].value.data_mut()[ei] = v;
            training_loss(net, &x, &gts).unwrap()
        };
        let numeric = (at(&mut net, orig + h) - at(&mut net, orig - h)) / (2.0 * h as f64);
        at(&mut net, orig);
        // ReLU and max-pool kinks bias finite differences at any usable step
        let rel = (numeric - g as f64).abs() / (g as f64).abs();
        assert!(rel < 0.2, "{s}: analytic {g} numeric {numeric}");
    }
}
