//! Analytic-vs-central-difference gradient verification.

use serde::Serialize;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct EntryReport {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub entries: Vec<EntryReport>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

fn eval<F>(f: &F, params: &ParamSet) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(Error::Numerical(format!("loss is not finite ({v})")));
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `h`, for every scalar in `params`.
pub fn fd_check<F>(f: F, params: &ParamSet, h: f64, tol: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut analytic = params.clone();
    analytic.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = f(&mut tape, &analytic)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numerical(format!("loss is not finite ({v})")));
        }
        tape.backward(loss, &mut analytic)?;
    }

    let mut work = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in 0..params.entry(idx).len() {
            let orig = work.entry(idx).values[k];
            work.entry_mut(idx).values[k] = orig + h;
            let plus = eval(&f, &work)?;
            work.entry_mut(idx).values[k] = orig - h;
            let minus = eval(&f, &work)?;
            work.entry_mut(idx).values[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.entry(idx).grad[k];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        entries.push(EntryReport {
            name: params.entry(idx).name.clone(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(FdReport {
        entries,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
