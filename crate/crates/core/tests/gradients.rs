//! Central finite-difference checks for every layer kind and both losses.

mod common;

use common::{bce_error, check, mse_error, DRAWS, TOL};
use moocshift::nn::LayerSpec;

fn check_all_draws(name: &str, specs: impl Fn() -> Vec<LayerSpec>, sample: &[usize]) {
    let mut worst: f64 = 0.0;
    for draw in 0..DRAWS {
        worst = worst.max(check(specs(), sample, 1000 + draw));
    }
    println!("{name}: worst relative error {worst:.2e}");
    assert!(worst < TOL, "{name}: relative error {worst:e}");
}

#[test]
fn dense() {
    check_all_draws("dense", || vec![LayerSpec::dense(3)], &[5]);
}

#[test]
fn conv1d_kernel_one_and_three() {
    check_all_draws("conv1d(4,1)", || vec![LayerSpec::conv1d(4, 1)], &[4, 5]);
    check_all_draws("conv1d(3,3)", || vec![LayerSpec::conv1d(3, 3)], &[4, 5]);
    check_all_draws("conv1d(2,2)", || vec![LayerSpec::conv1d(2, 2)], &[3, 5]);
}

#[test]
fn lstm() {
    check_all_draws("lstm", || vec![LayerSpec::lstm(4)], &[4, 5]);
}

#[test]
fn bilstm() {
    check_all_draws("bilstm", || vec![LayerSpec::bilstm(3)], &[4, 5]);
}

#[test]
fn activations_and_reshapes() {
    check_all_draws("sigmoid", || vec![LayerSpec::Sigmoid], &[5]);
    check_all_draws("relu", || vec![LayerSpec::Relu], &[5]);
    check_all_draws("leaky_relu", || vec![LayerSpec::leaky_relu(0.2)], &[5]);
    check_all_draws(
        "flatten+reshape",
        || {
            vec![
                LayerSpec::Flatten,
                LayerSpec::reshape(vec![5, 2]),
                LayerSpec::conv1d(2, 1),
            ]
        },
        &[2, 5],
    );
}

#[test]
fn full_presets() {
    use moocshift::nn::presets;
    check_all_draws("lstm-predictor", presets::lstm_predictor, &[3, 5]);
    check_all_draws("cnn-embedding", presets::cnn_predictor, &[3, 6]);
    check_all_draws(
        "lstm-ae",
        || {
            let mut s = presets::lstm_encoder(8);
            s.extend(presets::lstm_decoder(3, 8, 5));
            s
        },
        &[3, 5],
    );
}

#[test]
fn bce_gradient() {
    let worst = (0..DRAWS).map(bce_error).fold(0.0, f64::max);
    println!("bce: worst relative error {worst:.2e}");
    assert!(worst < TOL);
}

#[test]
fn mse_gradient() {
    let worst = (0..DRAWS).map(mse_error).fold(0.0, f64::max);
    println!("mse: worst relative error {worst:.2e}");
    assert!(worst < TOL);
}
