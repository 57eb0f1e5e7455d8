//! `regularize`: sweep regularization levels for a family's terminal map
//! and certify the per-level bounds.
//!
//! Writes `sweep.csv` (one row per level) and `certificates.json`, which
//! compares each observed Lipschitz quotient against `1 / epsilon` and
//! each observed growth ratio against `(1 + C) / (1 - C epsilon)`.

use crate::commands::ensure_out_dir;
use crate::{log_line, Failure};
use mfglab_core::coefficients::FamilyRegistry;
use mfglab_core::io::{fmt_f64, write_csv, write_json};
use mfglab_core::yosida::{convergence_sweep, SweepRow};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// Slack on certified inequalities to absorb floating-point roundoff.
const CERT_SLACK: f64 = 1e-6;

pub struct Request {
    pub family: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    pub epsilons: Vec<f64>,
    pub out: PathBuf,
    pub eval_clouds: usize,
    pub pairs: usize,
    pub cloud_size: usize,
    pub radius: f64,
    pub seed: u64,
    pub skip_growth: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LevelCertificate {
    pub epsilon: f64,
    pub sup_error: f64,
    pub lipschitz_observed: f64,
    pub lipschitz_bound: f64,
    pub lipschitz_ok: bool,
    pub growth_observed: f64,
    /// Absent when the growth certificate is skipped.
    pub growth_bound: Option<f64>,
    pub growth_ok: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Certificates {
    pub family: String,
    pub dim: usize,
    pub growth_constant: f64,
    pub seed: u64,
    /// True when the sup approximation error never increases as the level
    /// decreases.
    pub approximation_decreasing: bool,
    pub all_passed: bool,
    pub levels: Vec<LevelCertificate>,
}

pub fn run(req: &Request) -> Result<(), Failure> {
    let registry = FamilyRegistry::with_builtins();
    let cs = registry
        .build(&req.family, &req.params, req.dim)
        .map_err(Failure::from)?;
    ensure_out_dir(&req.out)?;
    log_line(&format!(
        "regularizing family={} dim={} levels={:?}",
        req.family, req.dim, req.epsilons
    ));

    let growth_constant = (!req.skip_growth).then_some(cs.growth_constant);
    let rows = convergence_sweep(
        cs.w0.clone(),
        req.dim,
        &req.epsilons,
        growth_constant,
        req.eval_clouds,
        req.pairs,
        req.cloud_size,
        req.radius,
        req.seed,
    )
    .map_err(Failure::from)?;

    write_sweep(&req.out, &rows)?;

    let levels: Vec<LevelCertificate> = rows
        .iter()
        .map(|r| {
            let lipschitz_bound = 1.0 / r.epsilon;
            let growth_bound = growth_constant.map(|c| (1.0 + c) / (1.0 - c * r.epsilon));
            LevelCertificate {
                epsilon: r.epsilon,
                sup_error: r.sup_error,
                lipschitz_observed: r.lipschitz_quotient,
                lipschitz_bound,
                lipschitz_ok: r.lipschitz_quotient <= lipschitz_bound + CERT_SLACK,
                growth_observed: r.growth_ratio,
                growth_bound,
                growth_ok: growth_bound.map(|b| r.growth_ratio <= b + CERT_SLACK),
            }
        })
        .collect();
    let approximation_decreasing = rows.windows(2).all(|w| w[1].sup_error <= w[0].sup_error);
    let all_passed = approximation_decreasing
        && levels
            .iter()
            .all(|l| l.lipschitz_ok && l.growth_ok.unwrap_or(true));
    let certs = Certificates {
        family: req.family.clone(),
        dim: req.dim,
        growth_constant: cs.growth_constant,
        seed: req.seed,
        approximation_decreasing,
        all_passed,
        levels,
    };
    write_json(&req.out.join("certificates.json"), &certs).map_err(Failure::from)?;

    println!(
        "regularize: levels={} approximation_decreasing={} all_passed={}",
        certs.levels.len(),
        certs.approximation_decreasing,
        certs.all_passed,
    );
    Ok(())
}

fn write_sweep(out: &std::path::Path, rows: &[SweepRow]) -> Result<(), Failure> {
    let header: Vec<String> = ["epsilon", "sup_error", "lipschitz_quotient", "growth_ratio"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.epsilon),
                fmt_f64(r.sup_error),
                fmt_f64(r.lipschitz_quotient),
                fmt_f64(r.growth_ratio),
            ]
        })
        .collect();
    write_csv(&out.join("sweep.csv"), Some(&header), &body).map_err(Failure::from)
}
