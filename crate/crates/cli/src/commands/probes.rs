//! `probe-monotonicity`: sample structural quotients for the configured
//! coefficient family and write `probes.json`.
//!
//! With `--require-monotone`, a failed terminal or joint monotonicity
//! probe exits with code 3 so pipelines can gate on it.

use crate::commands::ensure_out_dir;
use crate::config::load_config;
use crate::{log_line, Failure};
use mfglab_core::coefficients::probes::{
    certify_growth, fit_weak_strong, probe_joint_monotone, probe_l2_monotone,
    probe_terminal_coercivity, GrowthReport, MonotoneDirection, MonotonicityReport,
    SamplerSpec, WeakStrongFit,
};
use mfglab_core::coefficients::Regime;
use mfglab_core::io::write_json;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
pub struct ProbeBundle {
    pub family: String,
    pub dim: usize,
    pub n_pairs: usize,
    pub seed: u64,
    /// Regime the family declares for itself.
    pub declared_regime: Regime,
    pub declared_gamma: f64,
    /// Lifted monotonicity quotients of the terminal map.
    pub terminal: MonotonicityReport,
    /// Terminal increments controlled by state increments.
    pub coercivity: MonotonicityReport,
    /// Joint quotients of the drift/cost pair.
    pub joint: MonotonicityReport,
    pub weak_strong_x: WeakStrongFit,
    pub weak_strong_w: WeakStrongFit,
    pub growth: GrowthReport,
    pub monotone_certified: bool,
}

pub fn run(
    config_path: &Path,
    out: &Path,
    n_pairs: usize,
    require_monotone: bool,
) -> Result<(), Failure> {
    let (_, cfg) = load_config(config_path)?;
    let registry = mfglab_core::coefficients::FamilyRegistry::with_builtins();
    let cs = registry
        .build(&cfg.problem.family, &cfg.problem.params, cfg.problem.dim)
        .map_err(Failure::from)?;
    ensure_out_dir(out)?;
    let dim = cfg.problem.dim;
    let seed = cfg.solver.seed;
    let sampler = SamplerSpec::standard(dim, cfg.diagnostics.propagation_cloud);
    log_line(&format!(
        "probing family={} dim={dim} pairs={n_pairs}",
        cfg.problem.family
    ));

    let terminal =
        probe_l2_monotone(cs.w0.as_ref(), dim, &sampler, n_pairs, seed).map_err(Failure::from)?;
    let coercivity = probe_terminal_coercivity(cs.w0.as_ref(), dim, &sampler, n_pairs, seed)
        .map_err(Failure::from)?;
    let joint = probe_joint_monotone(cs.f.as_ref(), cs.g.as_ref(), dim, &sampler, n_pairs, seed)
        .map_err(Failure::from)?;
    let weak_strong_x = fit_weak_strong(
        cs.f.as_ref(),
        cs.g.as_ref(),
        dim,
        &sampler,
        n_pairs,
        seed,
        MonotoneDirection::InX,
    )
    .map_err(Failure::from)?;
    let weak_strong_w = fit_weak_strong(
        cs.f.as_ref(),
        cs.g.as_ref(),
        dim,
        &sampler,
        n_pairs,
        seed,
        MonotoneDirection::InW,
    )
    .map_err(Failure::from)?;
    let growth = certify_growth(&cs, &sampler, n_pairs, seed).map_err(Failure::from)?;

    let monotone_certified = terminal.passed && joint.passed;
    let bundle = ProbeBundle {
        family: cfg.problem.family.clone(),
        dim,
        n_pairs,
        seed,
        declared_regime: cs.regime,
        declared_gamma: cs.gamma,
        terminal,
        coercivity,
        joint,
        weak_strong_x,
        weak_strong_w,
        growth,
        monotone_certified,
    };
    write_json(&out.join("probes.json"), &bundle).map_err(Failure::from)?;

    println!(
        "probe-monotonicity: terminal={} joint={} growth={} weak_strong_x_alpha={:.4}",
        bundle.terminal.passed, bundle.joint.passed, bundle.growth.passed, bundle.weak_strong_x.alpha,
    );
    if require_monotone && !monotone_certified {
        return Err(Failure::new(
            3,
            format!(
                "monotonicity gate failed: terminal min quotient {}, joint min quotient {}",
                bundle.terminal.min_quotient, bundle.joint.min_quotient
            ),
        ));
    }
    Ok(())
}
