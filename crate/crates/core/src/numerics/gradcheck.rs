//! Central finite differences for the per-op gradient contract.

use super::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;

pub(crate) fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Builds `loss = Σ w ⊙ f(inputs)` with a fixed random weighting `w`, then
/// compares the analytic gradient of every input to central differences.
pub(crate) fn check(
    seed: u64,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) {
    let weigh = |tape: &mut Tape<f64>, vars: &[Var], rng: &mut ChaCha8Rng| {
        let out = f(tape, vars);
        let w = random(tape.shape(out), rng);
        let w = tape.constant(w);
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod)
    };
    let eval = |xs: &[Tensor<f64>]| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let loss = weigh(&mut tape, &vars, &mut r);
        tape.value(loss).item().unwrap()
    };

    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let loss = weigh(&mut tape, &vars, &mut r);
    let grads = tape.backward(loss).unwrap();

    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *v);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[j];
            let tol = 1e-4f64.max(1e-2 * a.abs().max(numeric.abs()));
            assert!(
                (a - numeric).abs() <= tol,
                "input {i} element {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}
