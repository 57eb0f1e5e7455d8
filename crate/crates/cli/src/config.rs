//! TOML configuration schema and its translation into solver inputs.

use crate::Failure;
use mfglab_core::coefficients::{CoefficientSet, FamilyRegistry};
use mfglab_core::measures::EmpiricalMeasure;
use mfglab_core::rng::{stream_rng, tag};
use mfglab_core::solver::{PicardOptions, SolverScenario, StencilSpec};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Largest number of atoms a `grid` initial condition may expand to.
const MAX_GRID_ATOMS: usize = 200_000;

/// Stream label for sampling Gaussian initial conditions, distinct from
/// every label the solver core uses.
const INITIAL_SAMPLE_STREAM: u64 = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub problem: ProblemConfig,
    pub initial: InitialConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Coefficient family name registered with the solver core.
    pub family: String,
    pub dim: usize,
    /// Family parameter overrides; missing keys use family defaults.
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// Initial measure description. `kind` selects the variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConfig {
    /// `n_atoms` independent draws from an isotropic Gaussian.
    Gaussian {
        mean: Vec<f64>,
        std: f64,
        n_atoms: usize,
    },
    /// Explicit atoms, uniformly weighted unless weights are given.
    Atoms {
        points: Vec<Vec<f64>>,
        weights: Option<Vec<f64>>,
    },
    /// Uniform atoms on a product grid over the box `[lo, hi]`.
    Grid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        points_per_axis: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Particles per reference flow.
    pub n_particles: usize,
    /// Monte Carlo replicas per table node.
    pub n_replicas: usize,
    pub sigma_x: f64,
    pub seed: u64,
    /// Fixed-point stopping tolerance on the sup table increment.
    pub tol: f64,
    pub max_iter: usize,
    pub stencil_center: Vec<f64>,
    pub stencil_half_width: f64,
    pub points_per_axis: usize,
    /// Initial-mean shifts, one reference flow each. Default: one flow
    /// with no shift.
    #[serde(default)]
    pub flow_offsets: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Coupled cloud pairs sampled by the propagation check.
    pub propagation_pairs: usize,
    /// Atoms per sampled cloud.
    pub propagation_cloud: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            propagation_pairs: 128,
            propagation_cloud: 32,
        }
    }
}

/// Reads, parses, and validates a configuration file, returning the raw
/// bytes (hashed into manifests) alongside the parsed value.
pub fn load_config(path: &Path) -> Result<(Vec<u8>, AppConfig), Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Failure::config(format!("config is not valid utf-8: {e}")))?;
    let cfg: AppConfig =
        toml::from_str(text).map_err(|e| Failure::config(format!("invalid config: {e}")))?;
    if cfg.problem.dim == 0 {
        return Err(Failure::config("problem.dim must be positive"));
    }
    if cfg.diagnostics.propagation_pairs == 0 || cfg.diagnostics.propagation_cloud < 2 {
        return Err(Failure::config(
            "diagnostics needs at least one pair and clouds of at least two atoms",
        ));
    }
    Ok((bytes, cfg))
}

/// Materializes the initial measure described by the configuration.
pub fn build_initial_measure(
    initial: &InitialConfig,
    dim: usize,
    seed: u64,
) -> Result<EmpiricalMeasure, Failure> {
    match initial {
        InitialConfig::Gaussian { mean, std, n_atoms } => {
            if mean.len() != dim {
                return Err(Failure::config(format!(
                    "initial.mean has {} components, problem.dim is {dim}",
                    mean.len()
                )));
            }
            if !(std.is_finite() && *std >= 0.0) {
                return Err(Failure::config(format!(
                    "initial.std must be nonnegative, got {std}"
                )));
            }
            if *n_atoms == 0 {
                return Err(Failure::config("initial.n_atoms must be positive"));
            }
            let mut rng = stream_rng(seed, &[tag::MEASURE_SAMPLE, INITIAL_SAMPLE_STREAM]);
            let points = (0..*n_atoms)
                .map(|_| {
                    mean.iter()
                        .map(|&m| m + std * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            EmpiricalMeasure::uniform(points).map_err(Failure::from)
        }
        InitialConfig::Atoms { points, weights } => match weights {
            Some(w) => {
                EmpiricalMeasure::new(points.clone(), w.clone()).map_err(Failure::from)
            }
            None => EmpiricalMeasure::uniform(points.clone()).map_err(Failure::from),
        },
        InitialConfig::Grid {
            lo,
            hi,
            points_per_axis,
        } => {
            if lo.len() != dim || hi.len() != dim {
                return Err(Failure::config(format!(
                    "initial.lo/hi must each have {dim} components"
                )));
            }
            let m = *points_per_axis;
            if m < 2 {
                return Err(Failure::config(
                    "initial.points_per_axis must be at least 2",
                ));
            }
            let total = m.checked_pow(dim as u32).filter(|&t| t <= MAX_GRID_ATOMS);
            let Some(total) = total else {
                return Err(Failure::config(format!(
                    "grid initial condition would exceed {MAX_GRID_ATOMS} atoms"
                )));
            };
            for c in 0..dim {
                if !(lo[c] < hi[c]) {
                    return Err(Failure::config(format!(
                        "initial.lo[{c}] must be below initial.hi[{c}]"
                    )));
                }
            }
            let mut points = Vec::with_capacity(total);
            let mut index = vec![0usize; dim];
            loop {
                points.push(
                    (0..dim)
                        .map(|c| {
                            lo[c] + (hi[c] - lo[c]) * index[c] as f64 / (m - 1) as f64
                        })
                        .collect(),
                );
                let mut axis = 0;
                loop {
                    if axis == dim {
                        return EmpiricalMeasure::uniform(points).map_err(Failure::from);
                    }
                    index[axis] += 1;
                    if index[axis] < m {
                        break;
                    }
                    index[axis] = 0;
                    axis += 1;
                }
            }
        }
    }
}

/// Builds the coefficient set, solver scenario, and stopping rule from a
/// parsed configuration.
pub fn scenario_from_config(
    cfg: &AppConfig,
) -> Result<(CoefficientSet, SolverScenario, PicardOptions), Failure> {
    let registry = FamilyRegistry::with_builtins();
    let cs = registry
        .build(&cfg.problem.family, &cfg.problem.params, cfg.problem.dim)
        .map_err(Failure::from)?;
    let mu0 = build_initial_measure(&cfg.initial, cfg.problem.dim, cfg.solver.seed)?;
    let scenario = SolverScenario {
        dim: cfg.problem.dim,
        horizon: cfg.solver.horizon,
        dt: cfg.solver.dt,
        n_particles: cfg.solver.n_particles,
        n_replicas: cfg.solver.n_replicas,
        sigma_x: cfg.solver.sigma_x,
        stencil: StencilSpec {
            center: cfg.solver.stencil_center.clone(),
            half_width: cfg.solver.stencil_half_width,
            points_per_axis: cfg.solver.points_per_axis,
        },
        flow_offsets: cfg
            .solver
            .flow_offsets
            .clone()
            .unwrap_or_else(|| vec![vec![0.0; cfg.problem.dim]]),
        mu0,
        seed: cfg.solver.seed,
    };
    scenario.validate().map_err(Failure::from)?;
    let options = PicardOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
    };
    options.validate().map_err(Failure::from)?;
    Ok((cs, scenario, options))
}
