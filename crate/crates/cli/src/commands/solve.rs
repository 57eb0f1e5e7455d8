//! `solve`: run the fixed-point solver and write its outputs.
//!
//! Output directory layout:
//! - `config.toml`: byte copy of the input configuration.
//! - `manifest.json`: provenance and convergence summary.
//! - `flow_{i}.csv`: table values, one row per (time node, stencil state).
//! - `flow_meta_{i}.csv`: per-node flow statistics (mean, sqrt E2).
//! - `history.csv`: sup table increment per fixed-point iteration.
//! - `propagation_report.json`: monotonicity scan of the solved field.

use crate::commands::{ensure_out_dir, sha256_hex, Manifest};
use crate::config::{load_config, scenario_from_config, AppConfig};
use crate::{log_line, Failure};
use mfglab_core::coefficients::probes::SamplerSpec;
use mfglab_core::coefficients::CoefficientSet;
use mfglab_core::diagnostics::propagation_check;
use mfglab_core::io::{fmt_f64, write_csv, write_json};
use mfglab_core::solver::picard::picard_solve;
use mfglab_core::solver::{DecouplingField, PicardOptions, SolverScenario};
use std::path::Path;

/// Everything a follow-up command may want from a completed solve.
pub struct SolveOutcome {
    pub manifest: Manifest,
    pub field: DecouplingField,
    pub cs: CoefficientSet,
    pub scenario: SolverScenario,
    pub options: PicardOptions,
    pub config: AppConfig,
}

pub fn run(config_path: &Path, out: &Path) -> Result<SolveOutcome, Failure> {
    let (config_bytes, cfg) = load_config(config_path)?;
    let (cs, scenario, options) = scenario_from_config(&cfg)?;
    ensure_out_dir(out)?;
    log_line(&format!(
        "solving: dim={} steps={} particles={} replicas={} stencil={}",
        scenario.dim,
        scenario.steps(),
        scenario.n_particles,
        scenario.n_replicas,
        scenario.stencil.points_per_axis,
    ));

    let field = picard_solve(&cs, &scenario, &options).map_err(Failure::from)?;
    log_line(&format!(
        "solved: converged={} iterations={} increment={}",
        field.converged, field.iteration_count, field.final_increment
    ));

    std::fs::write(out.join("config.toml"), &config_bytes)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "solve".to_string(),
        config_sha256: sha256_hex(&config_bytes),
        seed: scenario.seed,
        dim: scenario.dim,
        steps: scenario.steps(),
        n_flows: field.flows.len(),
        converged: field.converged,
        iterations: field.iteration_count,
        final_increment: field.final_increment,
        max_std_err: field.max_std_err,
    };
    write_json(&out.join("manifest.json"), &manifest).map_err(Failure::from)?;
    write_tables(out, &field)?;
    write_history(out, &field)?;

    let sampler = SamplerSpec::standard(scenario.dim, cfg.diagnostics.propagation_cloud);
    let report = propagation_check(
        &field,
        &field.times,
        &sampler,
        cfg.diagnostics.propagation_pairs,
        scenario.seed,
    )
    .map_err(Failure::from)?;
    write_json(&out.join("propagation_report.json"), &report).map_err(Failure::from)?;

    println!(
        "solve: converged={} iterations={} final_increment={} max_std_err={} monotone={}",
        manifest.converged,
        manifest.iterations,
        fmt_f64(manifest.final_increment),
        fmt_f64(manifest.max_std_err),
        report.passed,
    );
    Ok(SolveOutcome {
        manifest,
        field,
        cs,
        scenario,
        options,
        config: cfg,
    })
}

/// One CSV per reference flow: row `(k, t, j, x.., w.., std_err)` where
/// `t = k dt` is horizon-to-go and `j` indexes the stencil state `x`.
fn write_tables(out: &Path, field: &DecouplingField) -> Result<(), Failure> {
    let d = field.dim;
    let mut header: Vec<String> = vec!["k".into(), "t".into(), "j".into()];
    header.extend((0..d).map(|c| format!("x{c}")));
    header.extend((0..d).map(|c| format!("w{c}")));
    header.push("std_err".into());

    for (i, flow) in field.flows.iter().enumerate() {
        let mut rows = Vec::new();
        for (k, &t) in field.times.iter().enumerate() {
            for (j, x) in field.stencil_points.iter().enumerate() {
                let mut row = vec![k.to_string(), fmt_f64(t), j.to_string()];
                row.extend(x.iter().map(|&v| fmt_f64(v)));
                row.extend(flow.values[k][j].iter().map(|&v| fmt_f64(v)));
                row.push(fmt_f64(flow.std_err[k][j]));
                rows.push(row);
            }
        }
        write_csv(&out.join(format!("flow_{i}.csv")), Some(&header), &rows)
            .map_err(Failure::from)?;

        let mut meta_header: Vec<String> = vec!["k".into(), "t".into()];
        meta_header.extend((0..d).map(|c| format!("mean{c}")));
        meta_header.push("sqrt_e2".into());
        let meta_rows: Vec<Vec<String>> = field
            .times
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let mut row = vec![k.to_string(), fmt_f64(t)];
                row.extend(flow.mean[k].iter().map(|&v| fmt_f64(v)));
                row.push(fmt_f64(flow.sqrt_e2[k]));
                row
            })
            .collect();
        write_csv(
            &out.join(format!("flow_meta_{i}.csv")),
            Some(&meta_header),
            &meta_rows,
        )
        .map_err(Failure::from)?;
    }
    Ok(())
}

/// Fixed-point increments: the first sweep has no predecessor, so rows
/// start at iteration 2.
fn write_history(out: &Path, field: &DecouplingField) -> Result<(), Failure> {
    let rows: Vec<Vec<String>> = field
        .increment_history
        .iter()
        .enumerate()
        .map(|(idx, &inc)| vec![(idx + 2).to_string(), fmt_f64(inc)])
        .collect();
    write_csv(
        &out.join("history.csv"),
        Some(&["iter".to_string(), "increment".to_string()]),
        &rows,
    )
    .map_err(Failure::from)
}
