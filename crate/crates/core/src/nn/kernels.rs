//! Forward kernels shared by the taped and tape-free code paths, so that both
//! produce bit-identical values.

use ndarray::{Array2, ArrayView1, ArrayView2};

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · wᵀ + b` with `w` stored as `[out, in]`.
pub fn linear(x: ArrayView2<f64>, w: ArrayView2<f64>, b: Option<ArrayView1<f64>>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    if let Some(b) = b {
        y += &b;
    }
    y
}
