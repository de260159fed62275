mod common;

use common::GRAD_TOL;

fn check(name: &str, f: impl Fn(u64) -> f64, seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let err = f(seed);
        assert!(err <= GRAD_TOL, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conv2d_matches_finite_differences() {
    check("conv2d", common::conv2d_grad_error, 0..10);
}

#[test]
fn depthwise_matches_finite_differences() {
    check("depthwise", common::depthwise_grad_error, 0..10);
}

#[test]
fn softmax_matches_finite_differences() {
    check("softmax", common::softmax_grad_error, 0..10);
}

#[test]
fn awd_matches_finite_differences() {
    check("awd", common::awd_grad_error, 0..6);
}

#[test]
fn scb_matches_finite_differences() {
    check("scb", common::scb_grad_error, 0..6);
}

#[test]
fn dsl_composite_matches_finite_differences() {
    check("dsl", |s| common::dsl_grad_error(s, 8), 0..3);
}
