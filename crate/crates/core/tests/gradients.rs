mod common;

use common::{gradient_sweep, input_gradient_error, mlp, random_input};
use gga_core::nn::{ActivationMode, LossKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn fifty_random_models_match_finite_differences() {
    let (input, param) = gradient_sweep(50);
    assert!(input < 1e-4, "input gradient error {input}");
    assert!(param < 1e-4, "parameter gradient error {param}");
}

#[test]
fn rectifier_gradients_match_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..20 {
        let model = mlp(4, 6, 3, false, seed);
        let x = random_input(&[4], &mut rng);
        // A random point sits on a kink with probability zero; the tolerance
        // still allows for a pre-activation within one step of zero.
        let err = input_gradient_error(&model, &x, (seed % 3) as usize, LossKind::Sce);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn softplus_swap_gradients_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..10 {
        let model = mlp(5, 8, 4, false, seed).swap_activations(ActivationMode::Softplus, 10.0);
        let x = random_input(&[5], &mut rng);
        let err = input_gradient_error(&model, &x, 1, LossKind::Mse);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}
