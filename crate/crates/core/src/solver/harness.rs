//! Stability-rate estimation: perturb the data, re-solve, fit the decay.
//!
//! Each regime predicts a power law for how field values and state paths
//! respond to data perturbations of size `delta`. The harness solves the
//! base and perturbed problems with identical noise streams (so differences
//! are coupled and nearly noise-free), measures sup distances, and fits the
//! exponent by least squares in log-log coordinates.

use crate::coefficients::{CoefficientSet, Regime};
use crate::error::{Error, Result};
use crate::field::StateMap;
use crate::solver::picard::{picard_solve, picard_solve_with_init};
use crate::solver::psi::simulate_reference_flow;
use crate::solver::{table_distance, DecouplingField, PicardOptions, SolverScenario};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Predicted decay exponent of the field distance under terminal-data
/// perturbations. `None` when the regime makes no rate prediction or the
/// exponent parameter is out of range.
pub fn predicted_w_exponent(regime: &Regime, gamma: f64) -> Option<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return None;
    }
    match regime {
        Regime::JointMonotone => None,
        Regime::WeakStrongInX { .. } => Some(1.0),
        Regime::StrongInX { .. } => Some(gamma / (2.0 - gamma)),
        Regime::WeakStrongInW { .. } => Some(gamma / (2.0 - gamma)),
        Regime::StrongInW { .. } => Some(gamma * gamma / (2.0 - gamma * gamma)),
    }
}

/// Predicted decay exponent of the coupled state-path distance.
pub fn predicted_x_exponent(regime: &Regime, gamma: f64) -> Option<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return None;
    }
    match regime {
        Regime::JointMonotone => None,
        Regime::WeakStrongInX { .. } => Some(gamma),
        Regime::StrongInX { .. } => Some(gamma * gamma / (2.0 - gamma)),
        Regime::WeakStrongInW { .. } => Some(1.0 / (2.0 - gamma)),
        Regime::StrongInW { .. } => Some(gamma / (2.0 - gamma * gamma)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityRow {
    pub delta: f64,
    /// Size of the data perturbation in the lifted metric.
    pub data_distance: f64,
    /// Sup over table nodes of the field difference.
    pub sup_dw: f64,
    /// Sup over grid times of the coupled particle-path distance.
    pub sup_dx: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub rows: Vec<StabilityRow>,
    pub fitted_w_exponent: Option<f64>,
    pub fitted_x_exponent: Option<f64>,
    pub predicted_w_exponent: Option<f64>,
    pub predicted_x_exponent: Option<f64>,
}

/// Least-squares slope of `log(response)` against `log(distance)`.
fn fit_exponent(rows: &[StabilityRow], pick: impl Fn(&StabilityRow) -> f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.data_distance > 0.0 && pick(r) > 0.0)
        .map(|r| (r.data_distance.ln(), pick(r).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Largest over grid times of the paired particle distance between two
/// flows driven by different fields but identical noise.
fn coupled_flow_distance(
    cs_a: &CoefficientSet,
    field_a: &DecouplingField,
    cs_b: &CoefficientSet,
    field_b: &DecouplingField,
    scenario_a: &SolverScenario,
    scenario_b: &SolverScenario,
) -> Result<f64> {
    let flow_a = simulate_reference_flow(cs_a, field_a, scenario_a, 0)?;
    let flow_b = simulate_reference_flow(cs_b, field_b, scenario_b, 0)?;
    let mut sup = 0.0f64;
    for (ma, mb) in flow_a.measures.iter().zip(&flow_b.measures) {
        let mut acc = 0.0;
        for ((pa, pb), &w) in ma.points().iter().zip(mb.points()).zip(ma.weights()) {
            let mut sq = 0.0;
            for (x, y) in pa.iter().zip(pb) {
                let dxy = x - y;
                sq += dxy * dxy;
            }
            acc += w * sq;
        }
        sup = sup.max(acc.sqrt());
    }
    Ok(sup)
}

fn shifted_terminal(base: Arc<StateMap>, delta: f64) -> Arc<StateMap> {
    Arc::new(move |x, mu, out| {
        base(x, mu, out);
        for o in out.iter_mut() {
            *o += delta;
        }
    })
}

fn require_converged(field: &DecouplingField, what: &str) -> Result<()> {
    if !field.converged {
        return Err(Error::InvalidArgument(format!(
            "{what} solve did not converge (last increment {}); \
             stability rates need converged fields",
            field.final_increment
        )));
    }
    Ok(())
}

/// Perturbs the terminal map by constant shifts of size `delta`, re-solves,
/// and fits the response exponents. Perturbed solves warm-start from the
/// base field and share all noise streams with it.
pub fn stability_harness(
    cs: &CoefficientSet,
    scenario: &SolverScenario,
    deltas: &[f64],
    options: &PicardOptions,
) -> Result<EstimateReport> {
    if deltas.is_empty() || deltas.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
        return Err(Error::InvalidArgument(
            "perturbation sizes must be positive".into(),
        ));
    }
    let base = picard_solve(cs, scenario, options)?;
    require_converged(&base, "base")?;
    let sqrt_d = (cs.dim as f64).sqrt();
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let cs_p = CoefficientSet {
            w0: shifted_terminal(cs.w0.clone(), delta),
            ..cs.clone()
        };
        let solved = picard_solve_with_init(&cs_p, scenario, options, &base)?;
        require_converged(&solved, "perturbed")?;
        let sup_dw = table_distance(&base.flows, &solved.flows);
        let sup_dx =
            coupled_flow_distance(cs, &base, &cs_p, &solved, scenario, scenario)?;
        rows.push(StabilityRow {
            delta,
            // A constant shift has exact lifted norm delta sqrt(dim).
            data_distance: delta * sqrt_d,
            sup_dw,
            sup_dx,
        });
    }
    Ok(EstimateReport {
        fitted_w_exponent: fit_exponent(&rows, |r| r.sup_dw),
        fitted_x_exponent: fit_exponent(&rows, |r| r.sup_dx),
        predicted_w_exponent: predicted_w_exponent(&cs.regime, cs.gamma),
        predicted_x_exponent: predicted_x_exponent(&cs.regime, cs.gamma),
        rows,
    })
}

/// Perturbs the initial measure by translations of size `delta`, re-solves
/// against each shifted start, and fits the response exponents.
pub fn measure_stability_harness(
    cs: &CoefficientSet,
    scenario: &SolverScenario,
    deltas: &[f64],
    options: &PicardOptions,
) -> Result<EstimateReport> {
    if deltas.is_empty() || deltas.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
        return Err(Error::InvalidArgument(
            "perturbation sizes must be positive".into(),
        ));
    }
    let base = picard_solve(cs, scenario, options)?;
    require_converged(&base, "base")?;
    let sqrt_d = (cs.dim as f64).sqrt();
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let shift = vec![delta; cs.dim];
        let mut scenario_p = scenario.clone();
        scenario_p.mu0 = scenario.mu0.pushforward_shift(&shift)?;
        let solved = picard_solve_with_init(cs, &scenario_p, options, &base)?;
        require_converged(&solved, "perturbed")?;
        let sup_dw = table_distance(&base.flows, &solved.flows);
        let sup_dx =
            coupled_flow_distance(cs, &base, cs, &solved, scenario, &scenario_p)?;
        rows.push(StabilityRow {
            delta,
            // A translation moves the measure by exactly its length in the
            // quadratic transport metric.
            data_distance: delta * sqrt_d,
            sup_dw,
            sup_dx,
        });
    }
    Ok(EstimateReport {
        fitted_w_exponent: fit_exponent(&rows, |r| r.sup_dw),
        fitted_x_exponent: fit_exponent(&rows, |r| r.sup_dx),
        predicted_w_exponent: predicted_w_exponent(&cs.regime, cs.gamma),
        predicted_x_exponent: predicted_x_exponent(&cs.regime, cs.gamma),
        rows,
    })
}
