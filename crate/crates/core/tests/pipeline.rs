//! End-to-end run of the solver and every downstream consumer on one small
//! coupled problem: solve, check the fixed point, compare against the
//! closed form, scan monotonicity, measure backward residuals, and wrap
//! the field in the shifted-variable form.

use mfglab_core::coefficients::probes::SamplerSpec;
use mfglab_core::coefficients::FamilyRegistry;
use mfglab_core::diagnostics::propagation_check;
use mfglab_core::dynamics::{common_noise_wrap, simulate_mckean};
use mfglab_core::field::Field;
use mfglab_core::lq::{riccati_solve, LqParams};
use mfglab_core::measures::EmpiricalMeasure;
use mfglab_core::rng::stream_rng;
use mfglab_core::solver::fbsde::fbsde_residuals;
use mfglab_core::solver::picard::{picard_solve, psi_apply};
use mfglab_core::solver::{table_distance, PicardOptions, SolverScenario, StencilSpec};
use rand::Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::sync::Arc;

#[test]
fn solve_diagnose_and_wrap_one_coupled_problem() {
    let params = LqParams {
        p: 2.0,
        p_bar: 0.25,
        q: 1.0,
        q_bar: 0.25,
        horizon: 0.3,
    };
    let mut raw = BTreeMap::new();
    raw.insert("p".to_string(), params.p);
    raw.insert("p_bar".to_string(), params.p_bar);
    raw.insert("q".to_string(), params.q);
    raw.insert("q_bar".to_string(), params.q_bar);
    let cs = FamilyRegistry::with_builtins().build("lq", &raw, 1).unwrap();

    let mut rng = stream_rng(99, &[0xE0]);
    let mu0 = EmpiricalMeasure::uniform(
        (0..400)
            .map(|_| vec![1.5 + 0.4 * rng.sample::<f64, _>(StandardNormal)])
            .collect(),
    )
    .unwrap();
    let scenario = SolverScenario {
        dim: 1,
        horizon: params.horizon,
        dt: 0.03,
        n_particles: 400,
        n_replicas: 80,
        sigma_x: 1e-5,
        stencil: StencilSpec {
            center: vec![1.0],
            half_width: 3.0,
            points_per_axis: 7,
        },
        flow_offsets: vec![vec![0.0]],
        mu0: mu0.clone(),
        seed: 99,
    };
    let options = PicardOptions {
        tol: 5e-3,
        max_iter: 25,
    };

    let field = picard_solve(&cs, &scenario, &options).unwrap();
    assert!(field.converged);
    assert!(field.iteration_count >= 2);
    assert!(field.final_increment <= options.tol);

    // The sweep is a deterministic map under frozen noise: applying it once
    // more moves the converged table by less than the stop increment.
    let once_more = psi_apply(&cs, &field, &scenario).unwrap();
    assert!(table_distance(&once_more.flows, &field.flows) <= options.tol);

    // The tables track the closed form at first order in the step.
    let path = riccati_solve(&params, scenario.dt / 10.0).unwrap();
    let mut worst = 0.0f64;
    for flow in &field.flows {
        for (k, &t) in field.times.iter().enumerate() {
            let (a, b) = path.eval(t);
            for (j, x) in field.stencil_points.iter().enumerate() {
                let oracle = a * x[0] + b * flow.mean[k][0];
                worst = worst.max((flow.values[k][j][0] - oracle).abs());
            }
        }
    }
    assert!(worst <= 0.1, "closed-form deviation {worst:.3e}");

    // Monotone data keeps the pair functional nonnegative along the flow.
    let scan = propagation_check(
        &field,
        &field.times,
        &SamplerSpec::standard(1, 16),
        200,
        2_024,
    )
    .unwrap();
    assert!(scan.passed, "min pair value {:.3e}", scan.min_value);

    // Backward residuals of the solved field stay inside their error bars
    // plus a first-order discretization allowance.
    let report = fbsde_residuals(
        &field,
        &cs,
        &mu0,
        params.horizon,
        scenario.dt,
        4_000,
        0.25,
        2_025,
    )
    .unwrap();
    assert_eq!(report.rows.len(), 10);
    for row in &report.rows {
        assert!(
            row.mean_residual.abs() <= 4.5 * row.std_err + 0.05,
            "t = {}: residual {} vs se {}",
            row.time,
            row.mean_residual,
            row.std_err
        );
    }

    // The flow driven by the solved field keeps second moments bounded.
    let flow = simulate_mckean(
        &cs,
        &field,
        &mu0,
        params.horizon,
        scenario.dt,
        400,
        0.25,
        2_026,
    )
    .unwrap();
    let e2_start = mu0.moment(2.0);
    for k in 0..=flow.steps() {
        assert!(flow.at(k).moment(2.0) <= 10.0 * (1.0 + e2_start));
    }

    // Wrapping with a zero shift reproduces the bare field at the nodes.
    let wrapped = common_noise_wrap(Arc::new(field.clone()));
    for &t in &[0.0, 0.09, 0.3] {
        for &x in &[-1.0, 0.5, 2.0] {
            let bare = field.eval(t, &[x], &mu0);
            let shifted = wrapped.eval(t, &[x], &[0.0], &mu0).unwrap();
            assert!((bare[0] - shifted[0]).abs() <= 1e-14);
        }
    }
}
