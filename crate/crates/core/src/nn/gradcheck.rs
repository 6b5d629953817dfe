//! Central finite-difference checks of tape gradients.

use super::params::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub eps: f64,
    /// Denominator floor for the relative error, so entries where both
    /// gradients are essentially zero do not blow up.
    pub abs_floor: f64,
    /// Check at most this many entries per tensor (evenly strided).
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-4, abs_floor: 1e-8, max_per_tensor: None }
    }
}

#[derive(Debug, Clone)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorReport>,
    /// Every relative error, in check order.
    pub rel_errors: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }

    /// Fraction of checked entries with relative error at most `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.rel_errors.is_empty() {
            return 1.0;
        }
        self.rel_errors.iter().filter(|&&e| e <= tol).count() as f64 / self.rel_errors.len() as f64
    }

    pub fn checked(&self) -> usize {
        self.rel_errors.len()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare analytic gradients against central differences.
///
/// `f(store, with_grad)` must return the scalar loss for the current values;
/// when `with_grad` is set it must also leave dL/dθ in the store's gradient
/// slots (after zeroing them). `f` must be deterministic.
pub fn grad_check<F>(store: &mut ParamStore, cfg: &GradCheckConfig, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore, bool) -> Result<f64>,
{
    store.zero_grad();
    f(store, true)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.iter().cloned().collect()).collect();
    let mut report = GradCheckReport::default();
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = match cfg.max_per_tensor {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut errs = Vec::new();
        for (idx, &a) in grads.iter().enumerate().step_by(stride) {
            let original = nth_value(store, pi, idx);
            set_nth_value(store, pi, idx, original + cfg.eps);
            let plus = f(store, false)?;
            set_nth_value(store, pi, idx, original - cfg.eps);
            let minus = f(store, false)?;
            set_nth_value(store, pi, idx, original);
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            errs.push(relative_error(a, numeric, cfg.abs_floor));
        }
        let name = store.iter().nth(pi).map(|p| p.name.clone()).unwrap_or_default();
        let max = errs.iter().cloned().fold(0.0, f64::max);
        let mean = if errs.is_empty() { 0.0 } else { errs.iter().sum::<f64>() / errs.len() as f64 };
        report.tensors.push(TensorReport { name, checked: errs.len(), max_rel_err: max, mean_rel_err: mean });
        report.rel_errors.extend(errs);
    }
    Ok(report)
}

fn nth_value(store: &ParamStore, pi: usize, idx: usize) -> f64 {
    *store.iter().nth(pi).unwrap().value.iter().nth(idx).unwrap()
}

fn set_nth_value(store: &mut ParamStore, pi: usize, idx: usize, v: f64) {
    *store.iter_mut().nth(pi).unwrap().value.iter_mut().nth(idx).unwrap() = v;
}
