//! Cross-correlation of twin projections and the redundancy-reduction loss
//!
//! ```text
//! C_ij = Σ_b u'_bi u''_bj / (√Σ_b u'²_bi · √Σ_b u''²_bj)
//! L    = Σ_i (C_ii − 1)² + λ Σ_{i≠j} C_ij²
//! ```
//!
//! Columns are L2-normalised without mean-centring unless `center` is set,
//! which recovers the batch-standardised variant.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

/// Column norms are computed as `√(Σ u² + NORM_EPS²)`.
pub const NORM_EPS: f64 = 1e-12;
pub const DEFAULT_LAMBDA: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorr {
    pub c: Array2<f64>,
    /// Set when some feature column had zero norm in either view.
    pub zero_norm_column: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrDiagnostics {
    pub diag_mean: f64,
    pub offdiag_rms: f64,
}

impl CrossCorr {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn diagnostics(&self) -> CorrDiagnostics {
        corr_diagnostics(self.c.view())
    }
}

pub fn corr_diagnostics(c: ArrayView2<f64>) -> CorrDiagnostics {
    let d = c.nrows();
    let diag_mean = c.diag().sum() / d as f64;
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                off += c[[i, j]] * c[[i, j]];
            }
        }
    }
    let n_off = (d * d - d).max(1) as f64;
    CorrDiagnostics {
        diag_mean,
        offdiag_rms: (off / n_off).sqrt(),
    }
}

fn check_inputs(old: (usize, usize), new: (usize, usize)) -> Result<()> {
    if old != new {
        return Err(Error::Config(format!(
            "twin projections differ in shape: {old:?} vs {new:?}"
        )));
    }
    if old.0 < 2 {
        return Err(Error::Config(format!(
            "cross-correlation needs at least 2 samples, got {}",
            old.0
        )));
    }
    Ok(())
}

fn normalize_columns(u: ArrayView2<f64>, center: bool) -> (Array2<f64>, bool) {
    let mut u = u.to_owned();
    if center {
        let mean = u.mean_axis(Axis(0)).expect("non-empty batch");
        u -= &mean;
    }
    let ss = u.mapv(|x| x * x).sum_axis(Axis(0));
    let zero = ss.iter().any(|&s| s == 0.0);
    let norm = ss.mapv(|s| (s + NORM_EPS * NORM_EPS).sqrt());
    u /= &norm;
    (u, zero)
}

/// `C` for twin projection batches (rows are samples).
pub fn cross_corr(u_old: ArrayView2<f64>, u_new: ArrayView2<f64>, center: bool) -> Result<CrossCorr> {
    check_inputs(u_old.dim(), u_new.dim())?;
    let (a, za) = normalize_columns(u_old, center);
    let (b, zb) = normalize_columns(u_new, center);
    Ok(CrossCorr {
        c: a.t().dot(&b),
        zero_norm_column: za || zb,
    })
}

pub fn barlow_loss(c: &CrossCorr, lambda: f64) -> f64 {
    let d = c.dim();
    let mut on = 0.0;
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v = c.c[[i, j]];
            if i == j {
                on += (v - 1.0) * (v - 1.0);
            } else {
                off += v * v;
            }
        }
    }
    on + lambda * off
}

fn normalize_columns_tape(tape: &mut Tape, u: Var, center: bool) -> Result<Var> {
    let u = if center {
        let mean = tape.mean_cols(u);
        let neg = tape.scale(mean, -1.0);
        tape.add_row(u, neg)?
    } else {
        u
    };
    let sq = tape.square(u);
    let ss = tape.sum_cols(sq);
    let ss = tape.add_scalar(ss, NORM_EPS * NORM_EPS);
    let norm = tape.sqrt(ss);
    tape.div_row(u, norm)
}

/// Taped `C`, differentiable with respect to both views.
pub fn cross_corr_tape(tape: &mut Tape, u_old: Var, u_new: Var, center: bool) -> Result<Var> {
    check_inputs(tape.shape(u_old), tape.shape(u_new))?;
    let a = normalize_columns_tape(tape, u_old, center)?;
    let b = normalize_columns_tape(tape, u_new, center)?;
    tape.matmul_tn(a, b)
}

/// Taped loss over a `d×d` correlation variable.
pub fn barlow_loss_tape(tape: &mut Tape, c: Var, lambda: f64) -> Result<Var> {
    let (d, d2) = tape.shape(c);
    if d != d2 {
        return Err(Error::dim("cross-correlation columns", d, d2));
    }
    let eye = Array2::<f64>::eye(d);
    let weights = Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { lambda });
    let neg_eye = eye.mapv(|x| -x);
    let diff = tape.add_const(c, &neg_eye)?;
    let sq = tape.square(diff);
    let weighted = tape.mul_const(sq, weights)?;
    Ok(tape.sum_all(weighted))
}
