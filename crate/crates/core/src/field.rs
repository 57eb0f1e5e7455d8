//! The control-field abstraction: time-indexed maps `(t, x, mu) -> R^d`.
//!
//! Hot loops evaluate a field at one `(t, mu)` pair and many states, so the
//! trait splits binding from evaluation: [`Field::slice`] does the per-step
//! work (measure statistics, table lookups) once and returns a cheap
//! per-state evaluator.

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use std::sync::Arc;

/// Per-step summary of a measure: the cloud plus statistics the coefficient
/// closures consume, computed once per (time step, cloud).
pub struct MeasureView<'a> {
    pub mu: &'a EmpiricalMeasure,
    pub mean: Vec<f64>,
    /// Square root of the second moment, `sqrt(E |X|^2)`.
    pub sqrt_e2: f64,
}

impl<'a> MeasureView<'a> {
    pub fn new(mu: &'a EmpiricalMeasure) -> Self {
        let mean = mu.mean();
        let sqrt_e2 = mu.moment(2.0).sqrt();
        Self { mu, mean, sqrt_e2 }
    }
}

/// State-and-measure map without control input: `(x, mu) -> R^d`.
/// Used for terminal conditions and for regularization targets.
pub type StateMap = dyn Fn(&[f64], &MeasureView, &mut [f64]) + Send + Sync;

/// Full coefficient signature: `(x, mu, u) -> R^d`.
pub type CoefMap = dyn Fn(&[f64], &MeasureView, &[f64], &mut [f64]) + Send + Sync;

/// A bound `(t, mu)` evaluator. Implementations hold only read-only data and
/// may be shared across worker threads.
pub trait FieldSlice: Send + Sync {
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

/// A time-indexed control field `W(t, x, mu)` where `t` is horizon-to-go.
pub trait Field: Send + Sync {
    fn dim(&self) -> usize;

    /// Largest meaningful `t`; evaluation clamps to `[0, horizon]`.
    fn horizon(&self) -> f64;

    /// Binds `(t, mu)` and returns a per-state evaluator.
    fn slice<'a>(&'a self, t: f64, mu: &'a EmpiricalMeasure) -> Box<dyn FieldSlice + 'a>;

    /// Convenience single-point evaluation.
    fn eval(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Vec<f64> {
        let s = self.slice(t, mu);
        let mut out = vec![0.0; self.dim()];
        s.eval(x, &mut out);
        out
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn horizon(&self) -> f64 {
        (**self).horizon()
    }
    fn slice<'a>(&'a self, t: f64, mu: &'a EmpiricalMeasure) -> Box<dyn FieldSlice + 'a> {
        (**self).slice(t, mu)
    }
}

impl Field for Arc<dyn Field> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn horizon(&self) -> f64 {
        (**self).horizon()
    }
    fn slice<'a>(&'a self, t: f64, mu: &'a EmpiricalMeasure) -> Box<dyn FieldSlice + 'a> {
        (**self).slice(t, mu)
    }
}

/// Wraps a terminal map as a time-constant field.
pub struct TerminalField {
    map: Arc<StateMap>,
    dim: usize,
    horizon: f64,
}

impl TerminalField {
    pub fn new(map: Arc<StateMap>, dim: usize, horizon: f64) -> Self {
        Self { map, dim, horizon }
    }
}

struct TerminalSlice<'a> {
    map: &'a StateMap,
    view: MeasureView<'a>,
    dim: usize,
}

impl FieldSlice for TerminalSlice<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        (self.map)(x, &self.view, out);
    }
}

impl Field for TerminalField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn slice<'a>(&'a self, _t: f64, mu: &'a EmpiricalMeasure) -> Box<dyn FieldSlice + 'a> {
        Box::new(TerminalSlice {
            map: self.map.as_ref(),
            view: MeasureView::new(mu),
            dim: self.dim,
        })
    }
}

/// Ad-hoc field from a closure, mostly for tests and synthetic scenarios.
pub struct ClosureField {
    pub dim: usize,
    pub horizon: f64,
    #[allow(clippy::type_complexity)]
    pub f: Arc<dyn Fn(f64, &[f64], &MeasureView, &mut [f64]) + Send + Sync>,
}

struct ClosureSlice<'a> {
    t: f64,
    view: MeasureView<'a>,
    f: &'a (dyn Fn(f64, &[f64], &MeasureView, &mut [f64]) + Send + Sync),
}

impl FieldSlice for ClosureSlice<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(self.t, x, &self.view, out)
    }
}

impl Field for ClosureField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn slice<'a>(&'a self, t: f64, mu: &'a EmpiricalMeasure) -> Box<dyn FieldSlice + 'a> {
        Box::new(ClosureSlice {
            t: t.clamp(0.0, self.horizon),
            view: MeasureView::new(mu),
            f: self.f.as_ref(),
        })
    }
}

/// Validates that a state vector matches a field's dimension.
pub fn check_dim(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    Ok(())
}
