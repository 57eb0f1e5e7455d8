//! `oracle-compare`: solve a linear-quadratic problem and compare every
//! table node against the closed-form field `a(t) x + b(t) mean`.
//!
//! Only the `lq` family has a closed form; other families exit with
//! code 5. Writes `comparison.csv` (per-node errors), `riccati.csv` (the
//! closed-form coefficient pair on the grid), and `report.json`.

use crate::commands::solve;
use crate::config::load_config;
use crate::{log_line, Failure};
use mfglab_core::io::{fmt_f64, write_csv, write_json};
use mfglab_core::lq::{riccati_solve, LqParams};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Refinement of the reference integrator relative to the solver grid.
const ORACLE_DT_REFINE: f64 = 10.0;

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub p: f64,
    pub p_bar: f64,
    pub q: f64,
    pub q_bar: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_nodes: usize,
    /// Largest per-component absolute error over all table nodes.
    pub max_abs_error: f64,
}

pub fn run(config_path: &Path, out: &Path) -> Result<OracleReport, Failure> {
    let (_, cfg) = load_config(config_path)?;
    if cfg.problem.family != "lq" {
        return Err(Failure::new(
            5,
            format!(
                "oracle comparison needs the lq family, got {:?}",
                cfg.problem.family
            ),
        ));
    }
    let outcome = solve::run(config_path, out)?;
    let p = *cfg.problem.params.get("p").unwrap_or(&1.0);
    let p_bar = *cfg.problem.params.get("p_bar").unwrap_or(&0.0);
    let q = *cfg.problem.params.get("q").unwrap_or(&1.0);
    let q_bar = *cfg.problem.params.get("q_bar").unwrap_or(&0.0);
    let params = LqParams {
        p,
        p_bar,
        q,
        q_bar,
        horizon: outcome.scenario.horizon,
    };
    let path = riccati_solve(&params, outcome.scenario.dt / ORACLE_DT_REFINE)
        .map_err(Failure::from)?;
    log_line("comparing table nodes against the closed form");

    let field = &outcome.field;
    let header: Vec<String> = ["flow", "k", "t", "j", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut max_abs_error = 0.0f64;
    let mut n_nodes = 0usize;
    for (i, flow) in field.flows.iter().enumerate() {
        for (k, &t) in field.times.iter().enumerate() {
            let (a, b) = path.eval(t);
            for (j, x) in field.stencil_points.iter().enumerate() {
                let mut err = 0.0f64;
                for c in 0..field.dim {
                    let oracle = a * x[c] + b * flow.mean[k][c];
                    err = err.max((flow.values[k][j][c] - oracle).abs());
                }
                max_abs_error = max_abs_error.max(err);
                n_nodes += 1;
                rows.push(vec![
                    i.to_string(),
                    k.to_string(),
                    fmt_f64(t),
                    j.to_string(),
                    fmt_f64(err),
                ]);
            }
        }
    }
    write_csv(&out.join("comparison.csv"), Some(&header), &rows).map_err(Failure::from)?;

    // Closed-form coefficient pair at the solver's grid times.
    let coeff_header: Vec<String> = ["t", "a", "b"].iter().map(|s| s.to_string()).collect();
    let coeff_rows: Vec<Vec<String>> = field
        .times
        .iter()
        .map(|&t| {
            let (a, b) = path.eval(t);
            vec![fmt_f64(t), fmt_f64(a), fmt_f64(b)]
        })
        .collect();
    write_csv(&out.join("riccati.csv"), Some(&coeff_header), &coeff_rows)
        .map_err(Failure::from)?;

    let report = OracleReport {
        p,
        p_bar,
        q,
        q_bar,
        converged: outcome.field.converged,
        iterations: outcome.field.iteration_count,
        n_nodes,
        max_abs_error,
    };
    write_json(&out.join("report.json"), &report).map_err(Failure::from)?;

    println!(
        "oracle-compare: nodes={} max_abs_error={} converged={}",
        report.n_nodes,
        fmt_f64(report.max_abs_error),
        report.converged,
    );
    Ok(report)
}
