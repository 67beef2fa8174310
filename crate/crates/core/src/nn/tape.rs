//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of a forward pass. Rows are samples,
//! columns are features; scalars are `1×1` matrices. Parameters are bound from
//! a [`ParamSet`] and [`Tape::backward`] accumulates their gradients back into
//! that set (it never zeroes them).

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::kernels;
use super::params::ParamSet;
use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(usize),
    /// `x · wᵀ + b`
    Linear { x: Var, w: Var, b: Option<Var> },
    /// `aᵀ · b`
    MatMulTn(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast a `1×n` row over every row of `a`.
    AddRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    /// Multiply row `i` by a constant factor.
    ScaleRows(Var, Vec<f64>),
    MulConst(Var, Mat),
    Scale(Var, f64),
    AddScalar(Var),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumAll(Var),
    MeanAll(Var),
    /// Column sums, `1×n`.
    SumCols(Var),
    /// Row sums, `m×1`.
    SumRows(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Parameter entry index -> bound variable.
    bound: Vec<Option<Var>>,
    bound_names: Vec<(usize, String)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const)
    }

    pub fn constant_row(&mut self, row: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, row.len()), row.to_vec()).unwrap())
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Binds parameter entry `idx` of `params`. Repeated bindings of the same
    /// entry return the same variable.
    pub fn param(&mut self, params: &ParamSet, idx: usize) -> Var {
        if idx >= self.bound.len() {
            self.bound.resize(idx + 1, None);
        }
        if let Some(v) = self.bound[idx] {
            return v;
        }
        let e = params.entry(idx);
        let v = self.push(e.as_matrix().to_owned(), Op::Param(idx));
        self.bound[idx] = Some(v);
        self.bound_names.push((idx, e.name.clone()));
        v
    }

    pub fn param_by_name(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        let idx = params.require(name)?;
        Ok(self.param(params, idx))
    }

    fn check_same(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Config(format!(
                "{what}: shape {sa:?} does not match {sb:?}"
            )));
        }
        Ok(())
    }

    fn check_row(&self, what: &str, a: Var, row: Var) -> Result<()> {
        let (_, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(Error::Config(format!(
                "{what}: expected a 1×{c} row, got {rr}×{rc}"
            )));
        }
        Ok(())
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (_, in_dim) = self.shape(x);
        let (out_dim, w_in) = self.shape(w);
        if in_dim != w_in {
            return Err(Error::dim("linear input", w_in, in_dim));
        }
        if let Some(b) = b {
            let (br, bc) = self.shape(b);
            if br != 1 || bc != out_dim {
                return Err(Error::dim("linear bias", out_dim, br * bc));
            }
        }
        let value = kernels::linear(
            self.value(x).view(),
            self.value(w).view(),
            b.map(|b| self.value(b).row(0)),
        );
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, _) = self.shape(a);
        let (rb, _) = self.shape(b);
        if ra != rb {
            return Err(Error::dim("matmul_tn rows", ra, rb));
        }
        let value = self.value(a).t().dot(self.value(b));
        Ok(self.push(value, Op::MatMulTn(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let value = self.value(a) + self.value(b);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", a, row)?;
        let value = self.value(a) + &self.value(row).row(0);
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", a, row)?;
        let value = self.value(a) * &self.value(row).row(0);
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    pub fn div_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_row("div_row", a, row)?;
        let value = self.value(a) / &self.value(row).row(0);
        Ok(self.push(value, Op::DivRow(a, row)))
    }

    pub fn scale_rows(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let (r, _) = self.shape(a);
        if factors.len() != r {
            return Err(Error::dim("scale_rows factors", r, factors.len()));
        }
        let mut value = self.value(a).clone();
        for (mut row, &f) in value.rows_mut().into_iter().zip(&factors) {
            row *= f;
        }
        Ok(self.push(value, Op::ScaleRows(a, factors)))
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Result<Var> {
        if self.shape(a) != c.dim() {
            return Err(Error::Config(format!(
                "mul_const: shape {:?} does not match {:?}",
                self.shape(a),
                c.dim()
            )));
        }
        let value = self.value(a) * &c;
        Ok(self.push(value, Op::MulConst(a, c)))
    }

    /// Adds a constant of the same shape (no gradient flows into it).
    pub fn add_const(&mut self, a: Var, c: &Mat) -> Result<Var> {
        let k = self.constant(c.clone());
        self.add(a, k)
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let value = self.value(a) * f;
        self.push(value, Op::Scale(a, f))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::AddScalar(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(kernels::elu);
        self.push(value, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(kernels::sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero wherever the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("min", a, b)?;
        let mut value = self.value(a).clone();
        Zip::from(&mut value)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        Ok(self.push(value, Op::Min(a, b)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (_, c) = self.shape(a);
        if start + len > c {
            return Err(Error::dim("slice_cols end", c, start + len));
        }
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, _) = self.shape(a);
        if start + len > r {
            return Err(Error::dim("slice_rows end", r, start + len));
        }
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::Config(format!("concat_cols: {e}")))?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Config(format!("concat_rows: {e}")))?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Array2::from_elem((1, 1), m.sum() / m.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumCols(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumRows(a))
    }

    /// Column means as a `1×n` row.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let rows = self.shape(a).0 as f64;
        let s = self.sum_cols(a);
        self.scale(s, 1.0 / rows)
    }

    /// Propagates d(loss)/d(node) back through the tape and adds the result
    /// into the gradients of the bound entries of `params`.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Usage(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for (idx, name) in &self.bound_names {
            match params.index_of(name) {
                Some(i) if i == *idx => {}
                _ => {
                    return Err(Error::Usage(format!(
                        "parameter {name:?} was bound from a different set"
                    )))
                }
            }
        }

        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(idx) => {
                    let entry = params.entry_mut(*idx);
                    for (dst, src) in entry.grad.iter_mut().zip(g.iter()) {
                        *dst += *src;
                    }
                }
                Op::Linear { x, w, b } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, g.dot(wv));
                    accumulate(&mut grads, *w, g.t().dot(xv));
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::MatMulTn(a, b) => {
                    // c = aᵀb: da = b·gᵀ, db = a·g
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut grads, *a, bv.dot(&g.t()));
                    accumulate(&mut grads, *b, av.dot(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &g * self.value(*b));
                    accumulate(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, r) => {
                    accumulate(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, r) => {
                    let rv = self.value(*r).row(0);
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *r, gr);
                    accumulate(&mut grads, *a, &g * &rv);
                }
                Op::DivRow(a, r) => {
                    // y = a / r: da = g / r, dr = -Σ_rows g·a / r²
                    let rv = self.value(*r).row(0);
                    let av = self.value(*a);
                    let mut gr = (&g * av).sum_axis(Axis(0));
                    Zip::from(&mut gr).and(&rv).for_each(|x, &d| *x = -*x / (d * d));
                    accumulate(&mut grads, *r, gr.insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, &g / &rv);
                }
                Op::ScaleRows(a, f) => {
                    let mut ga = g;
                    for (mut row, &k) in ga.rows_mut().into_iter().zip(f) {
                        row *= k;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MulConst(a, c) => accumulate(&mut grads, *a, &g * c),
                Op::Scale(a, f) => accumulate(&mut grads, *a, g * *f),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Elu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= if y > 0.0 { 1.0 } else { y + 1.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g * &node.value),
                Op::Sqrt(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &y| *g *= 0.5 / y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g *= 2.0 * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|g, &x| {
                        if x < *lo || x > *hi {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Min(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut ga = g.clone();
                    let mut gb = g;
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(av)
                        .and(bv)
                        .for_each(|ga, gb, &x, &y| {
                            if x <= y {
                                *gb = 0.0;
                            } else {
                                *ga = 0.0;
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    let w = g.ncols();
                    ga.slice_mut(s![.., *start..*start + w]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    let h = g.nrows();
                    ga.slice_mut(s![*start..*start + h, ..]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        accumulate(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        accumulate(&mut grads, p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::SumAll(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanAll(a) => {
                    let n = self.value(*a).len() as f64;
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]] / n);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let ga = g.broadcast((r, c)).unwrap().to_owned();
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let (r, c) = self.shape(*a);
                    let ga = g.broadcast((r, c)).unwrap().to_owned();
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
