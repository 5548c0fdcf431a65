//! Central finite-difference checks for every differentiable op.

use divseg_nn::{
    BatchNorm2d, Conv2d, Graph, ParamStore, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f32 = 1e-2;
const TOL: f64 = 2e-2;

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Objective `J = sum(seed * f(x))`, evaluated in f64.
fn objective<F>(f: &F, x: &Tensor, store: &mut ParamStore, seed: &Tensor, training: bool) -> f64
where
    F: Fn(&mut Graph, &mut ParamStore, Var) -> Var,
{
    let mut g = Graph::new(training);
    let v = g.variable(x.clone());
    let y = f(&mut g, store, v);
    g.value(y)
        .data()
        .iter()
        .zip(seed.data())
        .map(|(a, b)| *a as f64 * *b as f64)
        .sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-2)
}

fn check<F>(name: &str, f: F, x: Tensor, mut store: ParamStore, training: bool)
where
    F: Fn(&mut Graph, &mut ParamStore, Var) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut g = Graph::new(training);
    let v = g.variable(x.clone());
    let y = f(&mut g, &mut store, v);
    let seed = random_tensor(&mut rng, g.value(y).shape(), -1.0, 1.0);
    store.zero_grads();
    let leaves = g.backward(y, seed.clone(), &mut store).unwrap();
    let analytic_x = leaves
        .into_iter()
        .find(|(var, _)| *var == v)
        .map(|(_, t)| t)
        .expect("input gradient");

    let probes = x.len().min(40);
    for k in 0..probes {
        let i = (k * 7919) % x.len();
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let numeric = (objective(&f, &xp, &mut store, &seed, training)
            - objective(&f, &xm, &mut store, &seed, training))
            / (2.0 * STEP as f64);
        let a = analytic_x.data()[i] as f64;
        assert!(
            rel_err(a, numeric) < TOL,
            "{name}: d/dx[{i}] analytic {a} vs numeric {numeric}"
        );
    }

    let grads: Vec<Tensor> = store.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, grad) in grads.iter().enumerate() {
        let len = grad.len();
        for k in 0..len.min(12) {
            let i = (k * 31) % len;
            let orig = store.params()[pi].value.data()[i];
            store.params_mut()[pi].value.data_mut()[i] = orig + STEP;
            let jp = objective(&f, &x, &mut store, &seed, training);
            store.params_mut()[pi].value.data_mut()[i] = orig - STEP;
            let jm = objective(&f, &x, &mut store, &seed, training);
            store.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (jp - jm) / (2.0 * STEP as f64);
            let a = grad.data()[i] as f64;
            let pname = store.params()[pi].name.clone();
            assert!(
                rel_err(a, numeric) < TOL,
                "{name}: d/d{pname}[{i}] analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn conv3x3_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "c", 3, 4, 3, 1, true, &mut rng).unwrap();
    let x = random_tensor(&mut rng, [2, 3, 5, 6], -1.0, 1.0);
    check(
        "conv3x3",
        move |g, s, v| conv.forward(g, s, v).unwrap(),
        x,
        store,
        true,
    );
}

#[test]
fn dilated_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "c", 2, 3, 3, 2, false, &mut rng).unwrap();
    let x = random_tensor(&mut rng, [2, 2, 7, 5], -1.0, 1.0);
    check(
        "dilated",
        move |g, s, v| conv.forward(g, s, v).unwrap(),
        x,
        store,
        true,
    );
}

#[test]
fn pointwise_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "c", 4, 2, 1, 1, true, &mut rng).unwrap();
    let x = random_tensor(&mut rng, [3, 4, 3, 3], -1.0, 1.0);
    check(
        "pointwise",
        move |g, s, v| conv.forward(g, s, v).unwrap(),
        x,
        store,
        true,
    );
}

#[test]
fn batch_norm_gradients_both_modes() {
    for training in [true, false] {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 3).unwrap();
        for p in store.params_mut() {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let x = random_tensor(&mut rng, [2, 3, 4, 4], -2.0, 2.0);
        check(
            "batch_norm",
            move |g, s, v| bn.forward(g, s, v).unwrap(),
            x,
            store,
            training,
        );
    }
}

#[test]
fn relu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = random_tensor(&mut rng, [1, 2, 4, 4], 0.1, 1.0);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        if i % 3 == 0 {
            *v = -*v;
        }
    }
    check("relu", |g, _, v| g.relu(v), x, ParamStore::new(), true);
}

#[test]
fn max_pool_gradients() {
    let x = Tensor::from_vec(
        [1, 2, 4, 6],
        (0..48).map(|i| ((i * 37) % 48) as f32 * 0.1).collect(),
    )
    .unwrap();
    check(
        "max_pool",
        |g, _, v| g.max_pool2(v).unwrap(),
        x,
        ParamStore::new(),
        true,
    );
}

#[test]
fn resampling_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, [2, 2, 3, 4], -1.0, 1.0);
    check(
        "nearest",
        |g, _, v| g.upsample_nearest(v, 2, 3),
        x.clone(),
        ParamStore::new(),
        true,
    );
    check(
        "bilinear_up",
        |g, _, v| g.resize_bilinear(v, 7, 9),
        x.clone(),
        ParamStore::new(),
        true,
    );
    check(
        "bilinear_down",
        |g, _, v| g.resize_bilinear(v, 2, 3),
        x.clone(),
        ParamStore::new(),
        true,
    );
    check(
        "gap",
        |g, _, v| g.global_avg_pool(v),
        x,
        ParamStore::new(),
        true,
    );
}

#[test]
fn concat_and_add_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "c", 2, 2, 3, 1, false, &mut rng).unwrap();
    let x = random_tensor(&mut rng, [2, 2, 4, 4], -1.0, 1.0);
    check(
        "concat_add",
        move |g, s, v| {
            let y = conv.forward(g, s, v).unwrap();
            let sum = g.add(y, v).unwrap();
            g.concat(&[sum, v, y]).unwrap()
        },
        x,
        store,
        true,
    );
}
