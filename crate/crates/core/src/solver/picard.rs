//! Fixed-point iteration on field tables.

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::field::{Field, TerminalField};
use crate::solver::psi::{psi_tabulate, simulate_reference_flow};
use crate::solver::{table_distance, DecouplingField, PicardOptions, SolverScenario};

/// One sweep: simulates every reference flow under `w_in` and re-tabulates
/// the field. The result carries no iteration bookkeeping; the caller owns
/// convergence state.
pub fn psi_apply(
    cs: &CoefficientSet,
    w_in: &dyn Field,
    scenario: &SolverScenario,
) -> Result<DecouplingField> {
    scenario.validate()?;
    if cs.dim != scenario.dim {
        return Err(Error::DimensionMismatch {
            expected: scenario.dim,
            got: cs.dim,
        });
    }
    let steps = scenario.steps();
    let mut flows = Vec::with_capacity(scenario.flow_offsets.len());
    for flow_idx in 0..scenario.flow_offsets.len() {
        let flow = simulate_reference_flow(cs, w_in, scenario, flow_idx)?;
        flows.push(psi_tabulate(cs, w_in, &flow, scenario, flow_idx)?);
    }
    let max_std_err = flows.iter().map(|f| f.max_std_err()).fold(0.0f64, f64::max);
    Ok(DecouplingField {
        dim: scenario.dim,
        times: (0..=steps).map(|k| k as f64 * scenario.dt).collect(),
        stencil_points: scenario.stencil.generate(scenario.dim)?,
        flows,
        w0: cs.w0.clone(),
        iteration_count: 0,
        final_increment: f64::INFINITY,
        converged: false,
        increment_history: Vec::new(),
        max_std_err,
    })
}

/// Iterates sweeps from the terminal map as initial guess.
pub fn picard_solve(
    cs: &CoefficientSet,
    scenario: &SolverScenario,
    options: &PicardOptions,
) -> Result<DecouplingField> {
    let init = TerminalField::new(cs.w0.clone(), cs.dim, scenario.horizon);
    picard_solve_with_init(cs, scenario, options, &init)
}

/// Iterates sweeps from a caller-supplied initial field (for warm starts).
///
/// Node noise and flow particle noise are frozen across sweeps, so the
/// sweep is a deterministic map on tables and the increments measure true
/// contraction rather than sampling jitter. The tolerance must exceed three
/// times the largest node standard error; exhausting `max_iter` returns the
/// last iterate marked unconverged rather than an error.
pub fn picard_solve_with_init(
    cs: &CoefficientSet,
    scenario: &SolverScenario,
    options: &PicardOptions,
    init: &dyn Field,
) -> Result<DecouplingField> {
    options.validate()?;
    let mut current = psi_apply(cs, init, scenario)?;
    if options.tol <= 3.0 * current.max_std_err {
        return Err(Error::InvalidArgument(format!(
            "tolerance {} is below the Monte Carlo noise floor 3 * {}; \
             raise the tolerance or the replica count",
            options.tol, current.max_std_err
        )));
    }
    current.iteration_count = 1;
    for iter in 2..=options.max_iter {
        let mut next = psi_apply(cs, &current, scenario)?;
        let increment = table_distance(&current.flows, &next.flows);
        next.iteration_count = iter;
        next.increment_history = current.increment_history;
        next.increment_history.push(increment);
        next.final_increment = increment;
        next.max_std_err = next.max_std_err.max(current.max_std_err);
        next.converged = increment < options.tol;
        current = next;
        if current.converged {
            return Ok(current);
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Regime;
    use crate::lq::{riccati_solve, LqParams};
    use crate::measures::EmpiricalMeasure;
    use crate::rng::{stream_rng, tag};
    use crate::solver::StencilSpec;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn lq_set(p: f64, p_bar: f64, q: f64, q_bar: f64) -> CoefficientSet {
        CoefficientSet {
            dim: 1,
            f: Arc::new(|_x, _mu, u, out| out.copy_from_slice(u)),
            g: Arc::new(move |x, mu, _u, out| {
                out[0] = q * x[0] + q_bar * mu.mean[0];
            }),
            w0: Arc::new(move |x, mu, out| {
                out[0] = p * x[0] + p_bar * mu.mean[0];
            }),
            growth_constant: (q.abs() + q_bar.abs()).max(p.abs() + p_bar.abs()).max(1.0),
            regime: Regime::WeakStrongInX { alpha: q, l: 0.0 },
            gamma: 1.0,
            a0: Some(p),
        }
    }

    fn gaussian_cloud(n: usize, mean: f64, std: f64, seed: u64) -> EmpiricalMeasure {
        let mut rng = stream_rng(seed, &[tag::MEASURE_SAMPLE, 77]);
        EmpiricalMeasure::uniform(
            (0..n)
                .map(|_| vec![mean + std * rng.sample::<f64, _>(StandardNormal)])
                .collect(),
        )
        .unwrap()
    }

    fn small_scenario(sigma_x: f64, seed: u64) -> SolverScenario {
        SolverScenario {
            dim: 1,
            horizon: 0.5,
            dt: 0.025,
            n_particles: 2_000,
            n_replicas: 200,
            sigma_x,
            stencil: StencilSpec {
                center: vec![0.5],
                half_width: 2.5,
                points_per_axis: 9,
            },
            flow_offsets: vec![vec![0.0]],
            mu0: gaussian_cloud(2_000, 0.5, 0.4, seed),
            seed,
        }
    }

    #[test]
    fn noiseless_solve_matches_the_closed_form() {
        let params = LqParams {
            p: 1.0,
            p_bar: 0.25,
            q: 1.0,
            q_bar: 0.25,
            horizon: 0.5,
        };
        let cs = lq_set(params.p, params.p_bar, params.q, params.q_bar);
        let scenario = small_scenario(0.0, 21);
        let options = PicardOptions {
            tol: 1e-6,
            max_iter: 40,
        };
        let field = picard_solve(&cs, &scenario, &options).unwrap();
        assert!(field.converged, "increment {}", field.final_increment);

        let path = riccati_solve(&params, 1e-5).unwrap();
        let stencil = scenario.stencil.generate(1).unwrap();
        let mut worst = 0.0f64;
        let table = &field.flows[0];
        for (k, row) in table.values.iter().enumerate() {
            let (a, b) = path.eval(k as f64 * scenario.dt);
            for (j, v) in row.iter().enumerate() {
                let exact = a * stencil[j][0] + b * table.mean[k][0];
                worst = worst.max((v[0] - exact).abs());
            }
        }
        // Euler bias at dt = 0.025 over horizon 0.5.
        assert!(worst < 4e-2, "worst node error {worst}");
    }

    #[test]
    fn increments_contract_geometrically() {
        // p = 2 starts the iteration away from the fixed point.
        let cs = lq_set(2.0, 0.0, 1.0, 0.0);
        let scenario = small_scenario(0.0, 22);
        let options = PicardOptions {
            tol: 1e-10,
            max_iter: 60,
        };
        let field = picard_solve(&cs, &scenario, &options).unwrap();
        assert!(field.converged);
        let h = &field.increment_history;
        assert!(h.len() >= 3);
        // Later increments must be much smaller than early ones.
        assert!(h[h.len() - 1] < 1e-2 * h[0].max(1e-300));
    }

    #[test]
    fn tolerance_below_noise_floor_is_rejected() {
        let cs = lq_set(1.0, 0.0, 1.0, 0.0);
        let mut scenario = small_scenario(0.5, 23);
        scenario.n_particles = 200;
        scenario.n_replicas = 50;
        let options = PicardOptions {
            tol: 1e-9,
            max_iter: 5,
        };
        let err = picard_solve(&cs, &scenario, &options).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err:?}");
    }

    #[test]
    fn exhausted_budget_returns_unconverged_field() {
        let cs = lq_set(2.0, 0.0, 1.0, 0.0);
        let scenario = small_scenario(0.0, 24);
        let options = PicardOptions {
            tol: 1e-13,
            max_iter: 3,
        };
        let field = picard_solve(&cs, &scenario, &options).unwrap();
        assert!(!field.converged);
        assert_eq!(field.iteration_count, 3);
        assert_eq!(field.increment_history.len(), 2);
    }

    #[test]
    fn solves_are_bitwise_reproducible() {
        let cs = lq_set(1.0, 0.25, 1.0, 0.25);
        let mut scenario = small_scenario(0.2, 25);
        scenario.n_particles = 400;
        scenario.n_replicas = 100;
        scenario.dt = 0.05;
        let options = PicardOptions {
            tol: 0.3,
            max_iter: 20,
        };
        let a = picard_solve(&cs, &scenario, &options).unwrap();
        let b = picard_solve(&cs, &scenario, &options).unwrap();
        assert_eq!(a.iteration_count, b.iteration_count);
        for (fa, fb) in a.flows.iter().zip(&b.flows) {
            assert_eq!(fa.values, fb.values);
        }
    }

    #[test]
    fn warm_start_from_the_answer_converges_immediately() {
        let cs = lq_set(2.0, 0.0, 1.0, 0.0);
        let scenario = small_scenario(0.0, 26);
        let options = PicardOptions {
            tol: 1e-8,
            max_iter: 50,
        };
        let cold = picard_solve(&cs, &scenario, &options).unwrap();
        let warm = picard_solve_with_init(&cs, &scenario, &options, &cold).unwrap();
        assert!(warm.iteration_count < cold.iteration_count);
    }
}
