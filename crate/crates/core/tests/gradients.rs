mod common;

use common::gradcheck::{check, dense_stack, errors, input, small_cnn, TOL};
use splitmix::nn::{BnMode, BnRoute, CrossEntropy, Mode, ModelGraph, Phase, Width};

fn run(arch: &splitmix::nn::ArchSpec, width: Width, mode: Mode, seed: u64) {
    let (ep, ex) = errors(arch, width, mode, seed);
    assert!(ep < TOL, "parameter gradient relative error {ep:e} ({mode:?})");
    assert!(ex < TOL, "input gradient relative error {ex:e} ({mode:?})");
}

#[test]
fn dense_stack_without_norm() {
    run(&dense_stack(), Width::new(1, 1).unwrap(), Mode::train(), 3);
}

#[test]
fn sliced_layers_with_output_rescaling() {
    let mut arch = small_cnn(BnMode::BatchAverage, false);
    arch.rescale_layer = true;
    run(&arch, Width::new(1, 2).unwrap(), Mode::train(), 5);
}

#[test]
fn conv_bn_every_mode_in_training() {
    for bn in [BnMode::BatchAverage, BnMode::PostAverage, BnMode::Tracked, BnMode::LocallyTracked] {
        run(&small_cnn(bn, false), Width::new(1, 1).unwrap(), Mode::train(), 11);
    }
}

#[test]
fn conv_bn_every_mode_in_inference() {
    for bn in [BnMode::BatchAverage, BnMode::PostAverage, BnMode::Tracked, BnMode::LocallyTracked] {
        run(&small_cnn(bn, false), Width::new(1, 1).unwrap(), Mode::eval(), 13);
    }
}

#[test]
fn dual_bn_each_route() {
    for route in [BnRoute::Clean, BnRoute::Noised, BnRoute::Mix(0.3)] {
        for phase in [Phase::Train, Phase::Eval] {
            let mode = Mode { phase, route, update_stats: false };
            run(&small_cnn(BnMode::Tracked, true), Width::new(1, 2).unwrap(), mode, 17);
        }
    }
}

#[test]
fn masked_cross_entropy_gradient() {
    let arch = small_cnn(BnMode::BatchAverage, false);
    let model = ModelGraph::build(&arch, Width::new(1, 1).unwrap(), 19).unwrap();
    let x = input(&[4, 2, 6, 6], 20);
    let y = vec![0, 2, 2, 0];
    let obj = CrossEntropy::masked(3, &[0, 2]).unwrap();
    let (ep, ex) = check(&model, &x, &y, &obj, Mode::train());
    assert!(ep < TOL && ex < TOL, "{ep:e} {ex:e}");
}
