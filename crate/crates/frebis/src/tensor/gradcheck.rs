//! Central finite-difference gradient checking.
//!
//! Only meaningful at f64; f32 rounding swamps the O(eps^2) truncation term.

use super::buf::Buf;
use super::graph::{Graph, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;

/// Compare the autodiff gradient of `f` wrt a single input against central
/// finite differences. `f` rebuilds the computation from scratch for each
/// evaluation and must return a scalar Var.
///
/// Returns the worst relative error over all input entries.
pub fn check_gradient(
    input: &Buf<f64>,
    eps: f64,
    f: impl Fn(&mut Graph<f64>, Var) -> Var,
) -> f64 {
    // Autodiff gradient.
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let loss = f(&mut g, x);
    let grads = g.backward(loss);
    let auto = grads.get(x, input.shape());

    // Finite differences, one entry at a time.
    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;

        let fp = eval_scalar(&plus, &f);
        let fm = eval_scalar(&minus, &f);
        let numeric = (fp - fm) / (2.0 * eps);
        let analytic = auto.data()[i];

        let denom = numeric.abs().max(analytic.abs()).max(1e-6);
        let rel = (numeric - analytic).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

fn eval_scalar(input: &Buf<f64>, f: &impl Fn(&mut Graph<f64>, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let y = f(&mut g, x);
    g.value(y).item()
}
