use ndarray::Array2;
use rand::Rng;

use crate::error::{BweError, Result};

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    /// Set once a backward pass has written into `grad`.
    pub has_grad: bool,
}

/// Flat store of named trainable tensors with matching gradient slots.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Seed used for initialization.
    pub seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { params: Vec::new(), step: 0, seed }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param { name, value, grad, has_grad: false });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound));
        self.add(name, value)
    }

    pub fn add_constant(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Array2::from_elem((rows, cols), v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
            p.has_grad = false;
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Array2<f64>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.dim() != g.dim() {
            return Err(BweError::Shape(format!(
                "gradient for {} has shape {:?}, expected {:?}",
                p.name,
                g.dim(),
                p.grad.dim()
            )));
        }
        p.grad += g;
        p.has_grad = true;
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// Rescale all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                p.grad.mapv_inplace(|g| g * s);
            }
        }
        norm
    }

    /// Replace values from `(name, tensor)` pairs; every parameter must be present.
    pub fn load_values(&mut self, tensors: &[(String, Array2<f64>)]) -> Result<()> {
        for p in &mut self.params {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| BweError::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.dim() != p.value.dim() {
                return Err(BweError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.dim(),
                    p.value.dim()
                )));
            }
            p.value.assign(t);
        }
        Ok(())
    }

    /// `(name, rows, cols)` for every tensor, in insertion order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.nrows(), p.value.ncols())).collect()
    }
}
