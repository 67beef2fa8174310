//! Single-layer GRU cell.
//!
//! Gate layout follows the usual `[reset, update, candidate]` stacking:
//!
//! ```text
//! r  = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z  = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::orthogonal;
use super::kernels;
use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const HIDDEN_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruState {
    pub hidden: Vec<f64>,
}

impl GruState {
    pub fn zeros(hidden: usize) -> Self {
        GruState {
            hidden: vec![0.0; hidden],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub prefix: String,
}

impl Gru {
    pub fn new(input_dim: usize, hidden_dim: usize, prefix: &str) -> Self {
        Gru {
            input_dim,
            hidden_dim,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, what: &str) -> String {
        format!("{}{what}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        let h = self.hidden_dim;
        // Each gate block gets its own orthogonal matrix.
        let mut w_ih = Vec::with_capacity(3 * h * self.input_dim);
        let mut w_hh = Vec::with_capacity(3 * h * h);
        for _ in 0..3 {
            w_ih.extend(orthogonal(h, self.input_dim, 1.0, rng));
            w_hh.extend(orthogonal(h, h, 1.0, rng));
        }
        params.insert(&self.name("w_ih"), &[3 * h, self.input_dim], w_ih)?;
        params.insert(&self.name("w_hh"), &[3 * h, h], w_hh)?;
        params.insert_zeros(&self.name("b_ih"), &[3 * h])?;
        params.insert_zeros(&self.name("b_hh"), &[3 * h])?;
        Ok(())
    }

    pub fn init_zeros(&self, params: &mut ParamSet) -> Result<()> {
        let h = self.hidden_dim;
        params.insert_zeros(&self.name("w_ih"), &[3 * h, self.input_dim])?;
        params.insert_zeros(&self.name("w_hh"), &[3 * h, h])?;
        params.insert_zeros(&self.name("b_ih"), &[3 * h])?;
        params.insert_zeros(&self.name("b_hh"), &[3 * h])?;
        Ok(())
    }

    fn entry<'a>(&self, params: &'a ParamSet, what: &str) -> Result<&'a super::params::ParamEntry> {
        let name = self.name(what);
        params
            .get(&name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    /// Input-side gate pre-activations for a batch of rows.
    pub fn input_gates(&self, params: &ParamSet, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::dim(
                format!("{}input", self.prefix),
                self.input_dim,
                x.ncols(),
            ));
        }
        let w = self.entry(params, "w_ih")?;
        let b = self.entry(params, "b_ih")?;
        Ok(kernels::linear(x, w.as_matrix(), Some(b.as_vector())))
    }

    /// One step for a batch: rows of `x` are inputs, rows of `h` hidden states.
    pub fn step_batch(
        &self,
        params: &ParamSet,
        x: ArrayView2<f64>,
        h: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        if h.ncols() != self.hidden_dim {
            return Err(Error::dim(
                format!("{}state", self.prefix),
                self.hidden_dim,
                h.ncols(),
            ));
        }
        if h.nrows() != x.nrows() {
            return Err(Error::dim(format!("{}batch", self.prefix), x.nrows(), h.nrows()));
        }
        let gi = self.input_gates(params, x)?;
        let w = self.entry(params, "w_hh")?;
        let b = self.entry(params, "b_hh")?;
        let gh = kernels::linear(h, w.as_matrix(), Some(b.as_vector()));
        Ok(combine_gates(gi.view(), gh.view(), h, self.hidden_dim))
    }

    /// The single-sample step: returns `(output, new_state)` with
    /// `output == new_state.hidden`.
    pub fn step(
        &self,
        params: &ParamSet,
        input: &[f64],
        state: &GruState,
    ) -> Result<(Vec<f64>, GruState)> {
        if state.hidden.len() != self.hidden_dim {
            return Err(Error::dim(
                format!("{}state", self.prefix),
                self.hidden_dim,
                state.hidden.len(),
            ));
        }
        if input.len() != self.input_dim {
            return Err(Error::dim(
                format!("{}input", self.prefix),
                self.input_dim,
                input.len(),
            ));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
        let h = ArrayView2::from_shape((1, state.hidden.len()), &state.hidden).unwrap();
        let out = self.step_batch(params, x, h)?.into_raw_vec_and_offset().0;
        Ok((out.clone(), GruState { hidden: out }))
    }

    /// Unrolls the cell over a time-major sequence on the tape.
    ///
    /// `x` holds `steps × batch` rows (row `t * batch + b`), `h0` is
    /// `batch × hidden`. Before step `t` the carried state of row `b` is
    /// multiplied by `keep[t][b]` (0 resets it after an episode boundary).
    /// Returns the `steps × batch` stacked outputs.
    pub fn sequence_tape(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: Var,
        h0: Var,
        keep: &[Vec<f64>],
        batch: usize,
    ) -> Result<Var> {
        let steps = keep.len();
        let (rows, cols) = tape.shape(x);
        if cols != self.input_dim {
            return Err(Error::dim(format!("{}input", self.prefix), self.input_dim, cols));
        }
        if rows != steps * batch {
            return Err(Error::dim(format!("{}sequence rows", self.prefix), steps * batch, rows));
        }
        if tape.shape(h0) != (batch, self.hidden_dim) {
            return Err(Error::dim(
                format!("{}initial state", self.prefix),
                batch * self.hidden_dim,
                tape.shape(h0).0 * tape.shape(h0).1,
            ));
        }
        let hd = self.hidden_dim;
        let w_ih = tape.param_by_name(params, &self.name("w_ih"))?;
        let b_ih = tape.param_by_name(params, &self.name("b_ih"))?;
        let w_hh = tape.param_by_name(params, &self.name("w_hh"))?;
        let b_hh = tape.param_by_name(params, &self.name("b_hh"))?;
        let gi_all = tape.linear(x, w_ih, Some(b_ih))?;

        let mut h = h0;
        let mut outputs = Vec::with_capacity(steps);
        for (t, keep_t) in keep.iter().enumerate() {
            if keep_t.len() != batch {
                return Err(Error::dim("reset mask", batch, keep_t.len()));
            }
            if keep_t.iter().any(|&k| k != 1.0) {
                h = tape.scale_rows(h, keep_t.clone())?;
            }
            let gi = tape.slice_rows(gi_all, t * batch, batch)?;
            let gh = tape.linear(h, w_hh, Some(b_hh))?;
            let gi_rz = tape.slice_cols(gi, 0, 2 * hd)?;
            let gh_rz = tape.slice_cols(gh, 0, 2 * hd)?;
            let rz_pre = tape.add(gi_rz, gh_rz)?;
            let rz = tape.sigmoid(rz_pre);
            let r = tape.slice_cols(rz, 0, hd)?;
            let z = tape.slice_cols(rz, hd, hd)?;
            let gi_n = tape.slice_cols(gi, 2 * hd, hd)?;
            let gh_n = tape.slice_cols(gh, 2 * hd, hd)?;
            let rn = tape.mul(r, gh_n)?;
            let n_pre = tape.add(gi_n, rn)?;
            let n = tape.tanh(n_pre);
            let neg_z = tape.scale(z, -1.0);
            let one_minus_z = tape.add_scalar(neg_z, 1.0);
            let a = tape.mul(one_minus_z, n)?;
            let b = tape.mul(z, h)?;
            h = tape.add(a, b)?;
            outputs.push(h);
        }
        tape.concat_rows(&outputs)
    }
}

/// Combines input-side and hidden-side gate pre-activations. Mirrors the
/// taped op sequence in [`Gru::sequence_tape`] exactly.
fn combine_gates(
    gi: ArrayView2<f64>,
    gh: ArrayView2<f64>,
    h: ArrayView2<f64>,
    hd: usize,
) -> Array2<f64> {
    let rz = (&gi.slice(s![.., 0..2 * hd]) + &gh.slice(s![.., 0..2 * hd])).mapv(kernels::sigmoid);
    let r = rz.slice(s![.., 0..hd]);
    let z = rz.slice(s![.., hd..2 * hd]);
    let mut out = Array2::zeros((h.nrows(), hd));
    Zip::from(&mut out)
        .and(&r)
        .and(&z)
        .and(&gi.slice(s![.., 2 * hd..3 * hd]))
        .and(&gh.slice(s![.., 2 * hd..3 * hd]))
        .and(&h)
        .for_each(|o, &r, &z, &gin, &ghn, &hp| {
            let n = (gin + r * ghn).tanh();
            *o = (-z + 1.0) * n + z * hp;
        });
    out
}
