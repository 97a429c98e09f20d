#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vsp_core::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-4;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding do not blow the ratio up.
pub const REL_FLOOR: f64 = 1e-6;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Builds the loss on a fresh tape from `params` and compares the analytic
/// gradient of every parameter against central finite differences.
/// Returns the worst relative error seen.
pub fn assert_grads_match<F>(label: &str, params: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&[Tensor<f64>], &mut Tape<f64>) -> (Var, Vec<Var>),
{
    let mut tape = Tape::new();
    let (loss, vars) = build(params, &mut tape);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let eval = |p: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let (l, _) = build(p, &mut t);
        t.value(l).data()[0]
    };
    let mut worst = 0.0f64;
    let mut work = params.to_vec();
    for (pi, grads) in analytic.iter().enumerate() {
        for i in 0..work[pi].numel() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work[pi].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let e = rel_err(grads[i], numeric);
            assert!(
                e < MAX_REL_ERR,
                "{label}: param {pi} element {i}: analytic {} vs numeric {numeric} (rel err {e:.3e})",
                grads[i]
            );
            worst = worst.max(e);
        }
    }
    worst
}
