//! Forward-backward consistency residuals along simulated paths.
//!
//! A correct field makes `Y_s = W(T - s, X_s, m_s)` a semimartingale whose
//! drift cancels the running cost: per grid interval and particle,
//!
//! ```text
//! r_k = Y_{k+1} - Y_k + g(X_k, m_k, u_k) dt
//! ```
//!
//! has conditional mean zero up to second-order time discretization error.
//! The report carries, per interval, the cross-particle mean residual and
//! its standard error, so `|mean| / se` is a direct test statistic.

use crate::coefficients::CoefficientSet;
use crate::dynamics::simulate_mckean;
use crate::error::{Error, Result};
use crate::field::{Field, MeasureView};
use crate::measures::EmpiricalMeasure;
use crate::rng::{stream_id, tag};
use crate::solver::{DecouplingField, SolverScenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FbsdeRow {
    /// Forward time at the interval's left endpoint.
    pub time: f64,
    /// Largest-magnitude component of the mean residual.
    pub mean_residual: f64,
    /// Standard error of that component's mean.
    pub std_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FbsdeReport {
    pub rows: Vec<FbsdeRow>,
    pub n_paths: usize,
}

impl FbsdeReport {
    /// Largest `|mean| / se` over intervals; infinite if any interval has
    /// zero standard error but nonzero mean.
    pub fn max_ratio(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                if r.std_err > 0.0 {
                    r.mean_residual.abs() / r.std_err
                } else if r.mean_residual == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0f64, f64::max)
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.mean_residual.abs())
            .fold(0.0f64, f64::max)
    }
}

/// Simulates `n_paths` particles under `w` and measures the per-interval
/// backward residuals. Works for any field; no convergence gate.
#[allow(clippy::too_many_arguments)]
pub fn fbsde_residuals(
    w: &dyn Field,
    cs: &CoefficientSet,
    mu0: &EmpiricalMeasure,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    sigma_x: f64,
    seed: u64,
) -> Result<FbsdeReport> {
    let d = cs.dim;
    let path_seed = stream_id(&[seed, tag::FBSDE]);
    let flow = simulate_mckean(cs, w, mu0, horizon, dt, n_paths, sigma_x, path_seed)?;
    let steps = flow.steps();

    // Y values per step: evaluate the field along every particle.
    let mut y: Vec<Vec<Vec<f64>>> = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let m = flow.at(k);
        let to_go = (steps - k) as f64 * dt;
        let slice = w.slice(to_go, m);
        let vals: Vec<Vec<f64>> = m
            .points()
            .iter()
            .map(|x| {
                let mut out = vec![0.0; d];
                slice.eval(x, &mut out);
                out
            })
            .collect();
        y.push(vals);
    }

    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let m = flow.at(k);
        let view = MeasureView::new(m);
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        let mut g = vec![0.0; d];
        for (i, x) in m.points().iter().enumerate() {
            (cs.g)(x, &view, &y[k][i], &mut g);
            for c in 0..d {
                let r = y[k + 1][i][c] - y[k][i][c] + g[c] * dt;
                let delta = r - mean[c];
                mean[c] += delta / (i + 1) as f64;
                m2[c] += delta * (r - mean[c]);
            }
        }
        let n = m.len();
        let (mut worst_mean, mut worst_se) = (0.0f64, 0.0f64);
        for c in 0..d {
            if mean[c].abs() >= worst_mean.abs() {
                worst_mean = mean[c];
                worst_se = if n > 1 {
                    (m2[c] / (n * (n - 1)) as f64).sqrt()
                } else {
                    0.0
                };
            }
        }
        rows.push(FbsdeRow {
            time: k as f64 * dt,
            mean_residual: worst_mean,
            std_err: worst_se,
        });
    }
    Ok(FbsdeReport {
        rows,
        n_paths,
    })
}

/// Residuals for a solved field; refuses unconverged solves, whose tables
/// would fail the test for reasons unrelated to the model.
pub fn build_fbsde_paths(
    field: &DecouplingField,
    cs: &CoefficientSet,
    scenario: &SolverScenario,
    n_paths: usize,
) -> Result<FbsdeReport> {
    if !field.converged {
        return Err(Error::InvalidArgument(
            "field is not converged; residuals are not meaningful".into(),
        ));
    }
    fbsde_residuals(
        field,
        cs,
        &scenario.mu0,
        scenario.horizon,
        scenario.dt,
        n_paths,
        scenario.sigma_x,
        scenario.seed,
    )
}
