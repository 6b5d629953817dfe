//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every value is an `Array2<f64>`; vectors are `1 x n` rows and batches of
//! frames are stacked as rows. Nodes are appended in evaluation order, so the
//! backward pass walks the node list in reverse, which is a reverse
//! topological order that touches each node once.

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{BweError, Result};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Exponent of the modified sigmoid, `ln 10`.
pub const MOD_SIGMOID_EXPONENT: f64 = std::f64::consts::LN_10;
/// Offset of the modified sigmoid.
pub const MOD_SIGMOID_FLOOR: f64 = 1e-7;

/// `2 * logistic(x)^ln(10) + 1e-7`.
pub fn modified_sigmoid(x: f64) -> f64 {
    2.0 * logistic(x).powf(MOD_SIGMOID_EXPONENT) + MOD_SIGMOID_FLOOR
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    ModSigmoid(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    GruCell(Box<GruCache>),
    Sum(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct GruCache {
    xw: Var,
    h: Var,
    u: Var,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    hu_n: Array2<f64>,
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(BweError::Shape(msg()))
    }
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Constant input (no gradient is propagated past it).
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        check(ac == br, || format!("matmul {ar}x{ac} by {br}x{bc}"))?;
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a + row` with `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        check(self.shape(row) == (1, ac), || format!("add_row {:?} + {:?}", self.shape(a), self.shape(row)))?;
        let v = self.value(a) + self.value(row);
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// `a * row` with `row` broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        check(self.shape(row) == (1, ac), || format!("mul_row {:?} * {:?}", self.shape(a), self.shape(row)))?;
        let v = self.value(a) * self.value(row);
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    /// `a * col` with the `n x 1` column broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ar, _) = self.shape(a);
        check(self.shape(col) == (ar, 1), || format!("mul_col {:?} * {:?}", self.shape(a), self.shape(col)))?;
        let v = self.value(a) * self.value(col);
        Ok(self.push(v, Op::MulCol(a, col)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check(self.shape(a) == self.shape(b), || format!("add {:?} + {:?}", self.shape(a), self.shape(b)))?;
        let v = self.value(a) + self.value(b);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check(self.shape(a) == self.shape(b), || format!("mul {:?} * {:?}", self.shape(a), self.shape(b)))?;
        let v = self.value(a) * self.value(b);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(logistic);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn modified_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(modified_sigmoid);
        self.push(v, Op::ModSigmoid(a))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in out.outer_iter_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { x: a, inv_std })
    }

    /// Row-wise softmax, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.outer_iter_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        self.push(out, Op::Softmax(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        check(!parts.is_empty(), || "concat of nothing".into())?;
        let rows = self.shape(parts[0]).0;
        check(parts.iter().all(|&p| self.shape(p).0 == rows), || "concat_cols row mismatch".into())?;
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).map_err(|e| BweError::Shape(e.to_string()))?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        check(start < end && end <= self.shape(a).1, || format!("slice_cols {start}..{end} of {:?}", self.shape(a)))?;
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        check(start < end && end <= self.shape(a).0, || format!("slice_rows {start}..{end} of {:?}", self.shape(a)))?;
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        check(!parts.is_empty(), || "concat of nothing".into())?;
        let cols = self.shape(parts[0]).1;
        check(parts.iter().all(|&p| self.shape(p).1 == cols), || "concat_rows column mismatch".into())?;
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).map_err(|e| BweError::Shape(e.to_string()))?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// One GRU step for a batch of rows.
    ///
    /// `xw` is the precomputed input projection `x W + b` laid out as
    /// `[z | r | n]` blocks, `h` the previous state and `u` the recurrent
    /// weights `[units x 3 units]` in the same block order:
    ///
    /// ```text
    /// z  = sigmoid(xw_z + h U_z)
    /// r  = sigmoid(xw_r + h U_r)
    /// n  = tanh(xw_n + r * (h U_n))
    /// h' = (1 - z) * n + z * h
    /// ```
    pub fn gru_cell(&mut self, xw: Var, h: Var, u: Var) -> Result<Var> {
        let (b, units) = self.shape(h);
        check(self.shape(u) == (units, 3 * units), || format!("gru U {:?} for {units} units", self.shape(u)))?;
        check(self.shape(xw) == (b, 3 * units), || format!("gru xw {:?} for batch {b}", self.shape(xw)))?;
        let hv = self.value(h);
        let hu = hv.dot(self.value(u));
        let xwv = self.value(xw);
        let z = (&xwv.slice(s![.., 0..units]) + &hu.slice(s![.., 0..units])).mapv(logistic);
        let r = (&xwv.slice(s![.., units..2 * units]) + &hu.slice(s![.., units..2 * units])).mapv(logistic);
        let hu_n = hu.slice(s![.., 2 * units..]).to_owned();
        let n = (&xwv.slice(s![.., 2 * units..]) + &(&r * &hu_n)).mapv(f64::tanh);
        let out = &(&z.mapv(|v| 1.0 - v) * &n) + &(&z * hv);
        Ok(self.push(out, Op::GruCell(Box::new(GruCache { xw, h, u, z, r, n, hu_n }))))
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        self.push(v, Op::SumSquares(a))
    }

    /// Reverse pass from one or more seeded outputs.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            check(self.shape(*v) == g.dim(), || format!("seed shape {:?} for node {:?}", g.dim(), self.shape(*v)))?;
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, ga);
                }
                Op::MulCol(a, col) => {
                    let gc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g * self.value(*col);
                    accumulate(&mut grads, *col, gc);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Sigmoid(a) => {
                    let ga = &g * &node.value.mapv(|y| y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x <= 0.0 {
                            *gv *= slope
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::ModSigmoid(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        let s = logistic(x);
                        *gv *= 2.0 * MOD_SIGMOID_EXPONENT * s.powf(MOD_SIGMOID_EXPONENT) * (1.0 - s);
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let xhat = &node.value;
                    let cols = xhat.ncols() as f64;
                    let mut gx = g;
                    for ((mut grow, xrow), is) in gx.outer_iter_mut().zip(xhat.outer_iter()).zip(inv_std) {
                        let mg = grow.sum() / cols;
                        let mgx = grow.iter().zip(xrow.iter()).map(|(a, b)| a * b).sum::<f64>() / cols;
                        for (gv, xv) in grow.iter_mut().zip(xrow.iter()) {
                            *gv = is * (*gv - mg - xv * mgx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(a) => {
                    let sm = &node.value;
                    let mut ga = g;
                    for (mut grow, srow) in ga.outer_iter_mut().zip(sm.outer_iter()) {
                        let dot: f64 = grow.iter().zip(srow.iter()).map(|(a, b)| a * b).sum();
                        for (gv, sv) in grow.iter_mut().zip(srow.iter()) {
                            *gv = sv * (*gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        accumulate(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
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
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.shape(*p).0;
                        accumulate(&mut grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::GruCell(c) => {
                    let units = c.z.ncols();
                    let hv = self.value(c.h);
                    // dz, dn, direct dh
                    let dz = &g * &(hv - &c.n);
                    let dn = &g * &c.z.mapv(|v| 1.0 - v);
                    let mut dh = &g * &c.z;
                    let dpre_n = &dn * &c.n.mapv(|v| 1.0 - v * v);
                    let dr = &dpre_n * &c.hu_n;
                    let dhu_n = &dpre_n * &c.r;
                    let dpre_r = &dr * &c.r.mapv(|v| v * (1.0 - v));
                    let dpre_z = &dz * &c.z.mapv(|v| v * (1.0 - v));
                    let b = g.nrows();
                    let mut dhu = Array2::zeros((b, 3 * units));
                    dhu.slice_mut(s![.., 0..units]).assign(&dpre_z);
                    dhu.slice_mut(s![.., units..2 * units]).assign(&dpre_r);
                    dhu.slice_mut(s![.., 2 * units..]).assign(&dhu_n);
                    let mut dxw = dhu.clone();
                    dxw.slice_mut(s![.., 2 * units..]).assign(&dpre_n);
                    let du = hv.t().dot(&dhu);
                    dh += &dhu.dot(&self.value(c.u).t());
                    accumulate(&mut grads, c.xw, dxw);
                    accumulate(&mut grads, c.h, dh);
                    accumulate(&mut grads, c.u, du);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumSquares(a) => {
                    let ga = self.value(*a) * (2.0 * g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Push gradients of every parameter leaf into the store.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.accumulate_grad(*id, g)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients left on leaf nodes after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}
