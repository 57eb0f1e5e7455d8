//! Fixed-point computation of the decoupling field.
//!
//! The field `W(t, x, mu)` is represented by value tables on a time grid
//! and a spatial stencil, one table per reference measure flow. One sweep
//! ([`picard::psi_apply`]) simulates the reference flows under the current
//! field and re-tabulates node values by Monte Carlo path functionals; the
//! solver iterates sweeps to a fixed point with noise frozen across sweeps,
//! so the iteration is a deterministic map on tables.

pub mod fbsde;
pub mod harness;
pub mod picard;
pub mod psi;

use crate::error::{Error, Result};
use crate::field::{Field, FieldSlice, MeasureView, StateMap};
use crate::lq::grid_steps;
use crate::measures::EmpiricalMeasure;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Spatial evaluation design: a symmetric grid of states around a center.
///
/// In one dimension the stencil is `points_per_axis` evenly spaced states
/// on `[center - half_width, center + half_width]`. In higher dimensions it
/// is the union of the per-axis grids through the center (a star design),
/// which is enough to fit one affine map per table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StencilSpec {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub points_per_axis: usize,
}

impl StencilSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.center.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.center.len(),
            });
        }
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "stencil half width must be positive, got {}",
                self.half_width
            )));
        }
        if self.points_per_axis < 3 || self.points_per_axis % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "stencil needs an odd number of points per axis, at least 3, got {}",
                self.points_per_axis
            )));
        }
        Ok(())
    }

    /// Generates the stencil states. One-dimensional stencils are sorted
    /// ascending; star designs list the center first, then axis points.
    pub fn generate(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        self.validate(dim)?;
        let m = self.points_per_axis;
        let step = 2.0 * self.half_width / (m - 1) as f64;
        if dim == 1 {
            return Ok((0..m)
                .map(|i| vec![self.center[0] - self.half_width + i as f64 * step])
                .collect());
        }
        let mut points = vec![self.center.clone()];
        for axis in 0..dim {
            for i in 0..m {
                let offset = -self.half_width + i as f64 * step;
                if offset == 0.0 {
                    continue;
                }
                let mut p = self.center.clone();
                p[axis] += offset;
                points.push(p);
            }
        }
        Ok(points)
    }
}

/// Full problem description for one solver run.
#[derive(Debug, Clone)]
pub struct SolverScenario {
    pub dim: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Particles in each reference flow.
    pub n_particles: usize,
    /// Monte Carlo replicas per table node.
    pub n_replicas: usize,
    pub sigma_x: f64,
    pub stencil: StencilSpec,
    /// Initial-mean shifts, one reference flow per entry. Field evaluation
    /// selects the flow whose summary statistics best match the queried
    /// measure.
    pub flow_offsets: Vec<Vec<f64>>,
    pub mu0: EmpiricalMeasure,
    pub seed: u64,
}

impl SolverScenario {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if self.mu0.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: self.mu0.dim(),
            });
        }
        grid_steps(self.horizon, self.dt)?;
        if self.n_particles == 0 || self.n_replicas == 0 {
            return Err(Error::InvalidArgument(
                "particle and replica counts must be positive".into(),
            ));
        }
        if !(self.sigma_x.is_finite() && self.sigma_x >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_x must be nonnegative, got {}",
                self.sigma_x
            )));
        }
        self.stencil.validate(self.dim)?;
        if self.flow_offsets.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one reference flow".into(),
            ));
        }
        for off in &self.flow_offsets {
            if off.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: off.len(),
                });
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        grid_steps(self.horizon, self.dt).expect("validated grid")
    }
}

/// Stopping rule for the fixed-point iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PicardOptions {
    /// Sup-norm table increment below which the iteration stops. Must
    /// exceed three times the largest per-node Monte Carlo standard error,
    /// otherwise the target is indistinguishable from sampling noise.
    pub tol: f64,
    pub max_iter: usize,
}

impl PicardOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Per-row affine fit `w(x) ~ intercept + matrix (x - center)` used to
/// evaluate star-design tables in dimension two and above.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineRow {
    pub intercept: Vec<f64>,
    /// Row-major `dim x dim`.
    pub matrix: Vec<f64>,
}

/// Tabulated field values along one reference flow.
///
/// Index convention: row `k` lives at horizon-to-go `t_k = k dt`, which is
/// forward time `T - t_k`; row 0 is the terminal row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTable {
    pub offset: Vec<f64>,
    /// Mean of the flow measure at each row's time.
    pub mean: Vec<Vec<f64>>,
    /// Square root of the second moment at each row's time.
    pub sqrt_e2: Vec<f64>,
    /// `values[k][j]`: field value at row `k`, stencil state `j`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Largest per-component Monte Carlo standard error per node.
    pub std_err: Vec<Vec<f64>>,
    /// Affine fits per row, present for star designs (`dim >= 2`).
    pub affine: Option<Vec<AffineRow>>,
}

impl FlowTable {
    pub fn max_std_err(&self) -> f64 {
        self.std_err
            .iter()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b))
    }
}

/// Largest absolute entry difference between two aligned tables.
pub fn table_distance(a: &[FlowTable], b: &[FlowTable]) -> f64 {
    let mut worst = 0.0f64;
    for (fa, fb) in a.iter().zip(b) {
        for (ra, rb) in fa.values.iter().zip(&fb.values) {
            for (va, vb) in ra.iter().zip(rb) {
                for (x, y) in va.iter().zip(vb) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    worst
}

/// The solved decoupling field: value tables plus the exact terminal map.
///
/// Evaluation at `t = 0` applies the terminal map to the queried measure
/// directly; positive times interpolate the nearest flow's table linearly
/// in time and state (with linear extrapolation beyond the stencil).
#[derive(Clone)]
pub struct DecouplingField {
    pub dim: usize,
    /// Node times `t_k = k dt`, horizon-to-go, ascending.
    pub times: Vec<f64>,
    pub stencil_points: Vec<Vec<f64>>,
    pub flows: Vec<FlowTable>,
    pub w0: Arc<StateMap>,
    pub iteration_count: usize,
    pub final_increment: f64,
    pub converged: bool,
    pub increment_history: Vec<f64>,
    pub max_std_err: f64,
}

impl std::fmt::Debug for DecouplingField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecouplingField")
            .field("dim", &self.dim)
            .field("nodes", &self.times.len())
            .field("stencil", &self.stencil_points.len())
            .field("flows", &self.flows.len())
            .field("iteration_count", &self.iteration_count)
            .field("final_increment", &self.final_increment)
            .field("converged", &self.converged)
            .field("max_std_err", &self.max_std_err)
            .finish_non_exhaustive()
    }
}

impl DecouplingField {
    fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Flow whose summary statistics at the node nearest `t` best match
    /// the queried measure.
    fn select_flow(&self, t: f64, mean: &[f64], sqrt_e2: f64) -> &FlowTable {
        if self.flows.len() == 1 {
            return &self.flows[0];
        }
        let k = ((t / self.dt()).round() as usize).min(self.times.len() - 1);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (f, flow) in self.flows.iter().enumerate() {
            let mut d2 = 0.0;
            for (a, b) in mean.iter().zip(&flow.mean[k]) {
                d2 += (a - b) * (a - b);
            }
            let de = sqrt_e2 - flow.sqrt_e2[k];
            d2 += de * de;
            if d2 < best_d {
                best_d = d2;
                best = f;
            }
        }
        &self.flows[best]
    }

    /// Interpolates one table row at state `x`.
    fn eval_row(&self, flow: &FlowTable, k: usize, x: &[f64], out: &mut [f64]) {
        if self.dim == 1 {
            let xs = &self.stencil_points;
            let row = &flow.values[k];
            let n = xs.len();
            let xq = x[0];
            // Segment index by binary search; ends extrapolate linearly.
            let seg = match xs.binary_search_by(|p| p[0].total_cmp(&xq)) {
                Ok(i) => i.min(n - 2),
                Err(0) => 0,
                Err(i) if i >= n => n - 2,
                Err(i) => i - 1,
            };
            let x0 = xs[seg][0];
            let x1 = xs[seg + 1][0];
            let lam = (xq - x0) / (x1 - x0);
            for c in 0..self.dim {
                out[c] = (1.0 - lam) * row[seg][c] + lam * row[seg + 1][c];
            }
        } else {
            let fit = flow
                .affine
                .as_ref()
                .expect("star tables carry affine fits")
                .get(k)
                .expect("one fit per row");
            let center = &self.stencil_points[0];
            for c in 0..self.dim {
                let mut v = fit.intercept[c];
                for (j, (&xc, &cc)) in x.iter().zip(center).enumerate() {
                    v += fit.matrix[c * self.dim + j] * (xc - cc);
                }
                out[c] = v;
            }
        }
    }
}

struct TerminalExactSlice<'a> {
    w0: &'a StateMap,
    view: MeasureView<'a>,
}

impl FieldSlice for TerminalExactSlice<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.w0)(x, &self.view, out);
    }
}

struct TableSlice<'a> {
    field: &'a DecouplingField,
    flow: &'a FlowTable,
    k_lo: usize,
    k_hi: usize,
    lam: f64,
}

impl FieldSlice for TableSlice<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.field.dim;
        let mut lo = vec![0.0; d];
        self.field.eval_row(self.flow, self.k_lo, x, &mut lo);
        if self.k_hi == self.k_lo {
            out.copy_from_slice(&lo);
            return;
        }
        let mut hi = vec![0.0; d];
        self.field.eval_row(self.flow, self.k_hi, x, &mut hi);
        for c in 0..d {
            out[c] = (1.0 - self.lam) * lo[c] + self.lam * hi[c];
        }
    }
}

impl Field for DecouplingField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn slice<'a>(&'a self, t: f64, mu: &'a EmpiricalMeasure) -> Box<dyn FieldSlice + 'a> {
        let horizon = self.horizon();
        if t <= 1e-12 * horizon.max(1.0) {
            // The terminal map is known exactly; apply it to the queried
            // measure instead of interpolating the table.
            return Box::new(TerminalExactSlice {
                w0: self.w0.as_ref(),
                view: MeasureView::new(mu),
            });
        }
        let t = t.clamp(0.0, horizon);
        let view = MeasureView::new(mu);
        let flow = self.select_flow(t, &view.mean, view.sqrt_e2);
        let dt = self.dt();
        let pos = t / dt;
        let k_lo = (pos.floor() as usize).min(self.times.len() - 2);
        let k_hi = k_lo + 1;
        let lam = (pos - k_lo as f64).clamp(0.0, 1.0);
        Box::new(TableSlice {
            field: self,
            flow,
            k_lo,
            k_hi,
            lam,
        })
    }
}

/// Fits one affine row to star-design values by least squares. With a star
/// design the fit decouples: the matrix column for an axis comes from the
/// regression of values against that axis's offsets, and the intercept is
/// chosen so the fit is exact in the mean over the design.
pub(crate) fn fit_affine_row(
    stencil: &[Vec<f64>],
    values: &[Vec<f64>],
    dim: usize,
) -> AffineRow {
    let center = &stencil[0];
    let n = stencil.len();
    // Per axis: slope_c = sum_j offset_j value_j / sum_j offset_j^2 over
    // the points lying on that axis (offsets are centered by symmetry).
    let mut matrix = vec![0.0; dim * dim];
    for axis in 0..dim {
        let mut sxx = 0.0;
        let mut sxy = vec![0.0; dim];
        for (p, v) in stencil.iter().zip(values) {
            let off = p[axis] - center[axis];
            if off == 0.0 {
                continue;
            }
            // Star design: points off the center vary along one axis only.
            sxx += off * off;
            for c in 0..dim {
                sxy[c] += off * v[c];
            }
        }
        if sxx > 0.0 {
            for c in 0..dim {
                matrix[c * dim + axis] = sxy[c] / sxx;
            }
        }
    }
    // Intercept: average residual value at offset zero over the design.
    let mut intercept = vec![0.0; dim];
    for (p, v) in stencil.iter().zip(values) {
        for c in 0..dim {
            let mut pred = 0.0;
            for j in 0..dim {
                pred += matrix[c * dim + j] * (p[j] - center[j]);
            }
            intercept[c] += (v[c] - pred) / n as f64;
        }
    }
    AffineRow { intercept, matrix }
}
