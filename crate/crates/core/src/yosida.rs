//! Measure-coupled resolvent regularization.
//!
//! Given a monotone base map `F(x, mu)`, the regularized map at level
//! `epsilon` is built from the resolvent of `id + epsilon F`: solve
//!
//! ```text
//! Y + epsilon F(Y, L(Y)) = X   atomwise, L(Y) = law of the solution cloud
//! ```
//!
//! and set `F_eps(X) = (X - Y) / epsilon`. The regularized map inherits
//! monotonicity, is `1/epsilon`-Lipschitz in the lifted metric, and for
//! linear-growth `F` with constant `c` and `epsilon < 1/c` satisfies the
//! growth bound `(1 + c) / (1 - c epsilon)`. The solve alternates between
//! freezing the law (outer loop) and solving the atomwise equations exactly
//! (safeguarded bisection in one dimension, damped Newton above).

use crate::error::{Error, Result};
use crate::field::{MeasureView, StateMap};
use crate::measures::EmpiricalMeasure;
use crate::rng::{stream_rng, tag};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// A base map together with a regularization level and solver budget.
#[derive(Clone)]
pub struct RegularizedCoefficient {
    // Debug is implemented by hand below: `base` is an opaque closure.
    base: Arc<StateMap>,
    pub dim: usize,
    pub epsilon: f64,
    pub solver_tol: f64,
    pub max_iter: usize,
    /// Declared linear growth constant of the base map, when known.
    pub growth_constant: Option<f64>,
}

impl std::fmt::Debug for RegularizedCoefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegularizedCoefficient")
            .field("dim", &self.dim)
            .field("epsilon", &self.epsilon)
            .field("solver_tol", &self.solver_tol)
            .field("max_iter", &self.max_iter)
            .field("growth_constant", &self.growth_constant)
            .finish_non_exhaustive()
    }
}

/// Builds a regularized coefficient, rejecting levels at or beyond the
/// contraction threshold `1 / growth_constant` when a constant is declared.
pub fn regularize(
    base: Arc<StateMap>,
    dim: usize,
    epsilon: f64,
    growth_constant: Option<f64>,
    solver_tol: f64,
    max_iter: usize,
) -> Result<RegularizedCoefficient> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if let Some(c) = growth_constant {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "growth constant must be positive, got {c}"
            )));
        }
        if epsilon >= 1.0 / c {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {epsilon} must stay below 1/growth = {}",
                1.0 / c
            )));
        }
    }
    if !(solver_tol.is_finite() && solver_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "solver tolerance must be positive, got {solver_tol}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be positive".into()));
    }
    Ok(RegularizedCoefficient {
        base,
        dim,
        epsilon,
        solver_tol,
        max_iter,
        growth_constant,
    })
}

/// Adds `lambda x` to a base map. Shifting by the semi-monotonicity defect
/// turns a semi-monotone map into a monotone one, which is the form the
/// resolvent machinery requires.
pub fn monotone_shift(base: Arc<StateMap>, lambda: f64) -> Arc<StateMap> {
    Arc::new(move |x, mu, out| {
        base(x, mu, out);
        for (o, &xc) in out.iter_mut().zip(x) {
            *o += lambda * xc;
        }
    })
}

impl RegularizedCoefficient {
    /// The resolvent cloud: solves the coupled atomwise equations and
    /// returns the law of `Y`. Atom order matches the input cloud.
    pub fn resolvent_cloud(&self, mu: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
        self.check_cloud(mu)?;
        let mut law = mu.clone();
        let mut outer = 0usize;
        loop {
            let solved = self.solve_atoms_frozen(mu.points(), &law)?;
            let increment = paired_l2(solved.points(), law.points(), mu.weights());
            let was_first = outer == 0;
            law = solved;
            outer += 1;
            // The first sweep always moves (law starts at the input cloud);
            // convergence is measured between successive solution clouds.
            if !was_first && increment < self.solver_tol {
                return Ok(law);
            }
            if outer >= self.max_iter {
                return Err(Error::NoConvergence {
                    iterations: outer,
                    residual: increment,
                });
            }
        }
    }

    /// Regularized values along a cloud: `F_eps(x_i) = (x_i - y_i) / eps`.
    /// Also returns the resolvent cloud.
    pub fn map_cloud(
        &self,
        mu: &EmpiricalMeasure,
    ) -> Result<(Vec<Vec<f64>>, EmpiricalMeasure)> {
        let res = self.resolvent_cloud(mu)?;
        let vals = mu
            .points()
            .iter()
            .zip(res.points())
            .map(|(x, y)| {
                x.iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) / self.epsilon)
                    .collect()
            })
            .collect();
        Ok((vals, res))
    }

    /// Pointwise evaluation `F_eps(x, mu)` at a state detached from the
    /// cloud: resolve the measure first, then project the single point
    /// against the frozen resolvent law. Returns the value and the
    /// projected point `g`, which satisfy `|x - g| = eps |F_eps(x, mu)|`.
    pub fn eval_with_projection(
        &self,
        x: &[f64],
        mu: &EmpiricalMeasure,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let law = self.resolvent_cloud(mu)?;
        let view = MeasureView::new(&law);
        let g = self.solve_atom(x, &view)?;
        let val = x
            .iter()
            .zip(&g)
            .map(|(a, b)| (a - b) / self.epsilon)
            .collect();
        Ok((val, g))
    }

    pub fn eval(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        Ok(self.eval_with_projection(x, mu)?.0)
    }

    fn check_cloud(&self, mu: &EmpiricalMeasure) -> Result<()> {
        if mu.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: mu.dim(),
            });
        }
        Ok(())
    }

    /// Solves every atomwise equation against a frozen law.
    fn solve_atoms_frozen(
        &self,
        xs: &[Vec<f64>],
        law: &EmpiricalMeasure,
    ) -> Result<EmpiricalMeasure> {
        let view = MeasureView::new(law);
        let solved: Vec<Result<Vec<f64>>> = xs
            .par_iter()
            .map(|x| self.solve_atom(x, &view))
            .collect();
        let pts = solved.into_iter().collect::<Result<Vec<Vec<f64>>>>()?;
        EmpiricalMeasure::new(pts, law.weights().to_vec())
    }

    /// One atomwise equation `y + eps F(y, law) = x` against a frozen view.
    fn solve_atom(&self, x: &[f64], view: &MeasureView) -> Result<Vec<f64>> {
        if self.dim == 1 {
            self.solve_atom_1d(x[0], view).map(|y| vec![y])
        } else {
            self.solve_atom_newton(x, view)
        }
    }

    fn residual_1d(&self, y: f64, x: f64, view: &MeasureView) -> f64 {
        let mut out = [0.0];
        (self.base)(&[y], view, &mut out);
        y + self.epsilon * out[0] - x
    }

    /// Bracketing bisection. The equation's left side is strictly
    /// increasing in `y` for any monotone base map, so a sign change
    /// brackets the unique root.
    fn solve_atom_1d(&self, x: f64, view: &MeasureView) -> Result<f64> {
        let g = |y: f64| self.residual_1d(y, x, view);
        let g_at_x = g(x);
        if g_at_x.abs() <= self.solver_tol {
            return Ok(x);
        }
        let mut span = 1.0 + g_at_x.abs();
        let (mut lo, mut hi);
        if g_at_x > 0.0 {
            hi = x;
            lo = x - span;
            let mut tries = 0;
            while g(lo) > 0.0 {
                span *= 2.0;
                lo = x - span;
                tries += 1;
                if tries > 80 {
                    return Err(Error::NoConvergence {
                        iterations: tries,
                        residual: g(lo),
                    });
                }
            }
        } else {
            lo = x;
            hi = x + span;
            let mut tries = 0;
            while g(hi) < 0.0 {
                span *= 2.0;
                hi = x + span;
                tries += 1;
                if tries > 80 {
                    return Err(Error::NoConvergence {
                        iterations: tries,
                        residual: g(hi),
                    });
                }
            }
        }
        let mut iter = 0usize;
        loop {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm.abs() <= self.solver_tol || (hi - lo) <= f64::EPSILON * mid.abs().max(1.0) {
                return Ok(mid);
            }
            if gm > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            iter += 1;
            if iter >= self.max_iter {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: gm,
                });
            }
        }
    }

    /// Damped Newton with a finite-difference Jacobian for dimensions
    /// above one.
    fn solve_atom_newton(&self, x: &[f64], view: &MeasureView) -> Result<Vec<f64>> {
        let d = self.dim;
        let eval = |y: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; d];
            (self.base)(y, view, &mut out);
            out.iter()
                .zip(y)
                .zip(x)
                .map(|((&f, &yc), &xc)| yc + self.epsilon * f - xc)
                .collect()
        };
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut y = x.to_vec();
        let mut res = eval(&y);
        let mut res_norm = norm(&res);
        let mut iter = 0usize;
        while res_norm > self.solver_tol {
            if iter >= self.max_iter {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: res_norm,
                });
            }
            iter += 1;
            // Finite-difference Jacobian of the residual.
            let h = 1e-7 * (1.0 + norm(&y));
            let mut jac = vec![vec![0.0; d]; d];
            for j in 0..d {
                let mut yp = y.clone();
                yp[j] += h;
                let rp = eval(&yp);
                for i in 0..d {
                    jac[i][j] = (rp[i] - res[i]) / h;
                }
            }
            let step = solve_linear(&mut jac, &res).ok_or(Error::NoConvergence {
                iterations: iter,
                residual: res_norm,
            })?;
            // Backtracking on the residual norm.
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = y
                    .iter()
                    .zip(&step)
                    .map(|(&yc, &s)| yc - scale * s)
                    .collect();
                let trial_res = eval(&trial);
                let trial_norm = norm(&trial_res);
                if trial_norm < res_norm {
                    y = trial;
                    res = trial_res;
                    res_norm = trial_norm;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: res_norm,
                });
            }
        }
        Ok(y)
    }
}

/// Gaussian elimination with partial pivoting; `None` on a singular system.
fn solve_linear(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col][col];
        for row in 0..col {
            x[row] -= a[row][col] * x[col];
        }
    }
    Some(x)
}

fn paired_l2(a: &[Vec<f64>], b: &[Vec<f64>], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((pa, pb), &wi) in a.iter().zip(b).zip(w) {
        let mut sq = 0.0;
        for (x, y) in pa.iter().zip(pb) {
            let d = x - y;
            sq += d * d;
        }
        acc += wi * sq;
    }
    acc.sqrt()
}

/// One row of a regularization sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Largest pointwise `|F_eps - F|` over the shared evaluation clouds.
    pub sup_error: f64,
    /// Largest lifted Lipschitz quotient of `F_eps` over sampled pairs.
    pub lipschitz_quotient: f64,
    /// Largest `|F_eps(x)| / (1 + |x| + sqrt(E2))` observed.
    pub growth_ratio: f64,
}

/// Evaluates the regularized map across decreasing levels on one shared,
/// seed-determined family of clouds, reporting approximation error,
/// Lipschitz quotients, and growth ratios per level.
#[allow(clippy::too_many_arguments)]
pub fn convergence_sweep(
    base: Arc<StateMap>,
    dim: usize,
    epsilons: &[f64],
    growth_constant: Option<f64>,
    n_eval_clouds: usize,
    n_lipschitz_pairs: usize,
    cloud_size: usize,
    compact_radius: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() {
        return Err(Error::InvalidArgument("no epsilon levels".into()));
    }
    for w in epsilons.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::InvalidArgument(
                "epsilon levels must strictly decrease".into(),
            ));
        }
    }
    if n_eval_clouds == 0 || cloud_size == 0 || compact_radius <= 0.0 {
        return Err(Error::InvalidArgument("empty evaluation design".into()));
    }
    use rand::Rng;
    let sample_cloud = |stream: &[u64]| -> Result<EmpiricalMeasure> {
        let mut rng = stream_rng(seed, stream);
        EmpiricalMeasure::uniform(
            (0..cloud_size)
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.gen_range(-compact_radius..compact_radius))
                        .collect()
                })
                .collect(),
        )
    };
    let eval_clouds: Vec<EmpiricalMeasure> = (0..n_eval_clouds)
        .map(|i| sample_cloud(&[tag::MEASURE_SAMPLE, 21, i as u64]))
        .collect::<Result<_>>()?;
    let pair_clouds: Vec<(EmpiricalMeasure, EmpiricalMeasure)> = (0..n_lipschitz_pairs)
        .map(|i| {
            Ok((
                sample_cloud(&[tag::PROBE_PAIR, 22, i as u64, 0])?,
                sample_cloud(&[tag::PROBE_PAIR, 22, i as u64, 1])?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let reg = regularize(
            base.clone(),
            dim,
            eps,
            growth_constant,
            DEFAULT_SOLVER_TOL,
            DEFAULT_MAX_ITER,
        )?;
        let mut sup_error = 0.0f64;
        let mut growth_ratio = 0.0f64;
        for mu in &eval_clouds {
            let (vals, _) = reg.map_cloud(mu)?;
            let view = MeasureView::new(mu);
            let mut direct = vec![0.0; dim];
            for (x, v) in mu.points().iter().zip(&vals) {
                base(x, &view, &mut direct);
                let err = v
                    .iter()
                    .zip(&direct)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                sup_error = sup_error.max(err);
                let vnorm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                let xnorm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                growth_ratio = growth_ratio.max(vnorm / (1.0 + xnorm + view.sqrt_e2));
            }
        }
        let quotients: Vec<Result<f64>> = pair_clouds
            .par_iter()
            .map(|(a, b)| {
                let (va, _) = reg.map_cloud(a)?;
                let (vb, _) = reg.map_cloud(b)?;
                let num = paired_l2(&va, &vb, a.weights());
                let den = paired_l2(a.points(), b.points(), a.weights());
                Ok(if den > 0.0 { num / den } else { 0.0 })
            })
            .collect();
        let lipschitz_quotient = quotients
            .into_iter()
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0f64, f64::max);
        rows.push(SweepRow {
            epsilon: eps,
            sup_error,
            lipschitz_quotient,
            growth_ratio,
        });
    }
    Ok(rows)
}
