//! Dense, normalization, MLP and GRU building blocks.
//!
//! All layers use the row-vector convention `y = x W + b`, with `x` holding
//! one example (or one frame) per row.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{BweError, Result};

/// Negative-side slope of the leaky rectifier used inside MLPs.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    /// Weights uniform in `±1/sqrt(n_in)`, zero bias.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let w = store.add_uniform(format!("{name}.w"), n_in, n_out, n_in, rng);
        let b = store.add_constant(format!("{name}.b"), 1, n_out, 0.0);
        Self { w, b, n_in, n_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// `x W + b` on plain vectors.
pub fn dense(x: &Array1<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    if w.nrows() != x.len() || w.ncols() != b.len() {
        return Err(BweError::Shape(format!(
            "dense: x {} , W {:?}, b {}",
            x.len(),
            w.dim(),
            b.len()
        )));
    }
    Ok(x.dot(w) + b)
}

/// Row-wise layer normalization followed by a trainable per-column scale and
/// shift (initialized to 1 and 0).
#[derive(Debug, Clone, Copy)]
pub struct NormAffine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormAffine {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add_constant(format!("{name}.gamma"), 1, width, 1.0);
        let beta = store.add_constant(format!("{name}.beta"), 1, width, 0.0);
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let normed = tape.layer_norm(x, LAYER_NORM_EPS);
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        let scaled = tape.mul_row(normed, g)?;
        tape.add_row(scaled, b)
    }
}

/// Three `dense -> layer norm -> leaky ReLU` layers.
#[derive(Debug, Clone)]
pub struct Mlp3 {
    pub layers: [(Dense, NormAffine); 3],
}

impl Mlp3 {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, n_in: usize, width: usize, rng: &mut R) -> Self {
        let mut make = |i: usize, fan: usize| {
            let d = Dense::new(store, &format!("{name}.{i}.dense"), fan, width, rng);
            let n = NormAffine::new(store, &format!("{name}.{i}.norm"), width);
            (d, n)
        };
        let l0 = make(0, n_in);
        let l1 = make(1, width);
        let l2 = make(2, width);
        Self { layers: [l0, l1, l2] }
    }

    pub fn out_width(&self) -> usize {
        self.layers[2].0.n_out
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (dense, norm) in &self.layers {
            let d = dense.forward(tape, store, h)?;
            let n = norm.forward(tape, store, d)?;
            h = tape.leaky_relu(n, LEAKY_SLOPE);
        }
        Ok(h)
    }
}

/// Gated recurrent unit with the gate convention documented on
/// [`Tape::gru_cell`]. `w` is `[n_in x 3 units]`, `u` is `[units x 3 units]`,
/// `b` is `[1 x 3 units]`, blocks ordered `[z | r | n]`.
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub units: usize,
}

impl Gru {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, n_in: usize, units: usize, rng: &mut R) -> Self {
        let w = store.add_uniform(format!("{name}.w"), n_in, 3 * units, n_in, rng);
        let u = store.add_uniform(format!("{name}.u"), units, 3 * units, units, rng);
        let b = store.add_constant(format!("{name}.b"), 1, 3 * units, 0.0);
        Self { w, u, b, n_in, units }
    }

    /// Run over a time-major sequence: `x` is `[steps * batch x n_in]` with
    /// row `t * batch + i` holding step `t` of sequence `i`. Starts from a
    /// zero state and returns all states in the same layout.
    pub fn forward_seq(&self, tape: &mut Tape, store: &ParamStore, x: Var, steps: usize, batch: usize) -> Result<Var> {
        if tape.shape(x).0 != steps * batch {
            return Err(BweError::Shape(format!(
                "gru input has {} rows, expected {steps} x {batch}",
                tape.shape(x).0
            )));
        }
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let u = tape.param(store, self.u);
        let xw_all = tape.matmul(x, w)?;
        let xw_all = tape.add_row(xw_all, b)?;
        let mut h = tape.input(Array2::zeros((batch, self.units)));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let xw_t = tape.slice_rows(xw_all, t * batch, (t + 1) * batch)?;
            h = tape.gru_cell(xw_t, h, u)?;
            states.push(h);
        }
        tape.concat_rows(&states)
    }
}

/// Parameters of one GRU cell for [`gru_step`].
#[derive(Debug, Clone)]
pub struct GruWeights {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

/// One recurrence step on plain vectors.
pub fn gru_step(x: &Array1<f64>, h: &Array1<f64>, p: &GruWeights) -> Result<Array1<f64>> {
    let units = h.len();
    if p.w.dim() != (x.len(), 3 * units) || p.u.dim() != (units, 3 * units) || p.b.len() != 3 * units {
        return Err(BweError::Shape(format!(
            "gru_step: x {}, h {}, W {:?}, U {:?}, b {}",
            x.len(),
            units,
            p.w.dim(),
            p.u.dim(),
            p.b.len()
        )));
    }
    let mut tape = Tape::new();
    let xw = tape.input((x.dot(&p.w) + &p.b).insert_axis(ndarray::Axis(0)));
    let hv = tape.input(h.clone().insert_axis(ndarray::Axis(0)));
    let u = tape.input(p.u.clone());
    let out = tape.gru_cell(xw, hv, u)?;
    Ok(tape.value(out).row(0).to_owned())
}

/// Scalars in a GRU cell: `3 (units n_in + units^2 + units)`.
pub fn gru_param_count(n_in: usize, units: usize) -> usize {
    3 * (units * n_in + units * units + units)
}
