//! `verify-estimates`: fit stability response exponents by re-solving
//! under perturbed terminal data and initial measures.
//!
//! Requires a completed solve in the output directory (its manifest pins
//! the configuration the estimates refer to); `--solve-first` runs one.
//! Writes `estimates.json` with both fitted and predicted exponents,
//! plus one response-ratio CSV per perturbation kind.

use crate::commands::{sha256_hex, solve, Manifest};
use crate::config::{load_config, scenario_from_config};
use crate::{log_line, Failure};
use mfglab_core::io::{fmt_f64, read_json, write_csv, write_json};
use mfglab_core::solver::harness::{
    measure_stability_harness, stability_harness, EstimateReport,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct Estimates {
    pub deltas: Vec<f64>,
    pub config_sha256: String,
    /// Response to constant shifts of the terminal map.
    pub terminal: EstimateReport,
    /// Response to translations of the initial measure.
    pub measure: EstimateReport,
}

pub fn run(
    config_path: &Path,
    out: &Path,
    deltas: &[f64],
    solve_first: bool,
) -> Result<(), Failure> {
    let (config_bytes, cfg) = load_config(config_path)?;
    let manifest_path = out.join("manifest.json");
    if !manifest_path.exists() {
        if solve_first {
            solve::run(config_path, out)?;
        } else {
            return Err(Failure::new(
                4,
                format!(
                    "no manifest.json in {}; run `mfglab solve` first or pass --solve-first",
                    out.display()
                ),
            ));
        }
    }
    let manifest: Manifest = read_json(&manifest_path).map_err(Failure::from)?;
    let config_sha256 = sha256_hex(&config_bytes);
    if manifest.config_sha256 != config_sha256 {
        return Err(Failure::config(
            "configuration does not match the solve recorded in manifest.json",
        ));
    }

    let (cs, scenario, options) = scenario_from_config(&cfg)?;
    log_line("fitting terminal-perturbation response");
    let terminal =
        stability_harness(&cs, &scenario, deltas, &options).map_err(Failure::from)?;
    log_line("fitting measure-translation response");
    let measure =
        measure_stability_harness(&cs, &scenario, deltas, &options).map_err(Failure::from)?;

    let estimates = Estimates {
        deltas: deltas.to_vec(),
        config_sha256,
        terminal,
        measure,
    };
    write_json(&out.join("estimates.json"), &estimates).map_err(Failure::from)?;
    write_report_csv(&out.join("estimates_terminal.csv"), &estimates.terminal)?;
    write_report_csv(&out.join("estimates_measure.csv"), &estimates.measure)?;

    let show = |v: Option<f64>| v.map_or("none".to_string(), |e| format!("{e:.4}"));
    println!(
        "verify-estimates: terminal_w={} terminal_x={} measure_w={} measure_x={} predicted_w={} predicted_x={}",
        show(estimates.terminal.fitted_w_exponent),
        show(estimates.terminal.fitted_x_exponent),
        show(estimates.measure.fitted_w_exponent),
        show(estimates.measure.fitted_x_exponent),
        show(estimates.terminal.predicted_w_exponent),
        show(estimates.terminal.predicted_x_exponent),
    );
    Ok(())
}

/// One row per perturbation size: the field and state response ratios plus
/// the fitted exponents (blank when a fit needs more than one size).
fn write_report_csv(path: &Path, report: &EstimateReport) -> Result<(), Failure> {
    let header: Vec<String> = [
        "perturbation_size",
        "ratio_w",
        "ratio_x",
        "fitted_w_exponent",
        "fitted_x_exponent",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let fit = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.delta),
                fmt_f64(r.sup_dw / r.data_distance),
                fmt_f64(r.sup_dx / r.data_distance),
                fit(report.fitted_w_exponent),
                fit(report.fitted_x_exponent),
            ]
        })
        .collect();
    write_csv(path, Some(&header), &rows).map_err(Failure::from)
}
