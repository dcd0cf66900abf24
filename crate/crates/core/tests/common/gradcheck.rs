//! Central finite differences against the reverse pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitmix::nn::{ArchSpec, BnMode, CrossEntropy, LayerSpec, Mode, ModelGraph, Objective, Tensor, Width};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb == 0.0 {
        0.0
    } else {
        diff / (na + nb)
    }
}

pub fn input(shape: &[usize], seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn loss(model: &ModelGraph, x: &Tensor, y: &[usize], obj: &dyn Objective, mode: Mode) -> f64 {
    let (logits, _) = model.forward(x, mode).unwrap();
    obj.loss_grad(&logits, y).unwrap().0
}

/// Check parameter and input gradients of `model` at `mode`; returns the
/// two relative errors.
pub fn check(model: &ModelGraph, x: &Tensor, y: &[usize], obj: &dyn Objective, mode: Mode) -> (f64, f64) {
    let (logits, tape) = model.forward(x, mode).unwrap();
    let (_, dl) = obj.loss_grad(&logits, y).unwrap();
    let (grads, dx) = model.backward(&tape, &dl).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();

    let base = model.flat_params();
    let mut probe = model.clone();
    let mut numeric = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + H;
        probe.set_flat_params(&p).unwrap();
        let up = loss(&probe, x, y, obj, mode);
        p[i] = base[i] - H;
        probe.set_flat_params(&p).unwrap();
        let down = loss(&probe, x, y, obj, mode);
        numeric[i] = (up - down) / (2.0 * H);
    }
    let e_param = rel_err(&analytic, &numeric);

    let mut ndx = vec![0.0; x.len()];
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let up = loss(model, &xp, y, obj, mode);
        xp.data_mut()[i] -= 2.0 * H;
        let down = loss(model, &xp, y, obj, mode);
        ndx[i] = (up - down) / (2.0 * H);
    }
    (e_param, rel_err(dx.data(), &ndx))
}

pub fn small_cnn(bn: BnMode, dual: bool) -> ArchSpec {
    use LayerSpec::*;
    ArchSpec {
        id: "fd_cnn".into(),
        input: vec![2, 6, 6],
        classes: 3,
        layers: vec![
            Conv2d { out: 4, kernel: 3, stride: 1, padding: 1 },
            BatchNorm,
            Relu,
            MaxPool2d { kernel: 2, stride: 2 },
            Conv2d { out: 4, kernel: 3, stride: 2, padding: 1 },
            BatchNorm,
            Relu,
            Flatten,
            Dense { out: 6 },
            BatchNorm,
            Relu,
            Dense { out: 3 },
        ],
        bn_mode: bn,
        dual_bn: dual,
        rescale_init: true,
        rescale_layer: false,
    }
}

/// Parameter and input gradient relative errors of a fresh `arch` model.
pub fn errors(arch: &ArchSpec, width: Width, mode: Mode, seed: u64) -> (f64, f64) {
    let mut model = ModelGraph::build(arch, width, seed).unwrap();
    let mut shape = vec![5];
    shape.extend_from_slice(&arch.input);
    let x = input(&shape, seed + 1);
    let y: Vec<usize> = (0..5).map(|i| [0, 1, 2, 1, 0][i] % arch.classes).collect();
    // Give tracked statistics non-trivial values before probing eval mode.
    for s in 0..3 {
        let xs = input(&shape, seed + 10 + s);
        model.forward_train(&xs, Mode::train().with_route(mode.route)).unwrap();
    }
    check(&model, &x, &y, &CrossEntropy::new(), mode)
}

pub fn dense_stack() -> ArchSpec {
    use LayerSpec::*;
    ArchSpec {
        id: "fd_dense".into(),
        input: vec![7],
        classes: 4,
        layers: vec![Dense { out: 6 }, Relu, Dense { out: 6 }, Relu, Dense { out: 4 }],
        bn_mode: BnMode::BatchAverage,
        dual_bn: false,
        rescale_init: true,
        rescale_layer: false,
    }
}
