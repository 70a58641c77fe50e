//! Dense `f64` tensors, a reverse-mode tape over the operations the model
//! needs, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod linalg;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use params::{Gradients, ParamId, ParamStore, Session};
pub use tape::{Binary, Tape, Unary, Var};
pub use tensor::Tensor;

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax of a plain slice, max-subtracted.
pub fn softmax_slice(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
