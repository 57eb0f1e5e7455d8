//! One table sweep: reference flows and Monte Carlo node values.
//!
//! Given an input field, each sweep (a) simulates the interacting particle
//! flow driven by that field and (b) re-tabulates every node `(t_k, x_j)`
//! as the Monte Carlo mean of the path functional
//!
//! ```text
//! w0(X_0, m_0) + sum over steps of g(X, m, u) dt
//! ```
//!
//! along `n_replicas` trajectories started at `x_j` with `t_k` of horizon
//! left, stepping against the frozen flow. Replica noise is indexed by
//! (flow, replica, horizon-to-go), so all nodes share trailing noise
//! segments and successive sweeps reuse identical draws: the sweep is a
//! deterministic function of the input table.

use crate::coefficients::CoefficientSet;
use crate::dynamics::{simulate_mckean, MeasureFlow};
use crate::error::{Error, Result};
use crate::field::{Field, FieldSlice, MeasureView};
use crate::measures::EmpiricalMeasure;
use crate::rng::{stream_id, stream_rng, tag};
use crate::solver::{fit_affine_row, FlowTable, SolverScenario};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Seed for flow `f`'s particle streams, distinct per flow and scenario.
pub(crate) fn flow_seed(seed: u64, flow_idx: usize) -> u64 {
    stream_id(&[seed, tag::FLOW_PARTICLE, flow_idx as u64])
}

/// Simulates the reference flow for one initial-mean offset, driven by the
/// current field iterate.
pub fn simulate_reference_flow(
    cs: &CoefficientSet,
    w: &dyn Field,
    scenario: &SolverScenario,
    flow_idx: usize,
) -> Result<MeasureFlow> {
    let offset = &scenario.flow_offsets[flow_idx];
    let mu0 = scenario.mu0.pushforward_shift(offset)?;
    simulate_mckean(
        cs,
        w,
        &mu0,
        scenario.horizon,
        scenario.dt,
        scenario.n_particles,
        scenario.sigma_x,
        flow_seed(scenario.seed, flow_idx),
    )
}

/// Pregenerated replica noise, indexed `[replica][(k - 1) * dim + c]` for
/// the step taken at horizon-to-go `k dt`. Shared by every node, so nodes
/// with more horizon extend shorter nodes' paths instead of resampling.
fn replica_noise(
    scenario: &SolverScenario,
    flow_idx: usize,
    steps: usize,
    m_eff: usize,
) -> Vec<Vec<f64>> {
    let d = scenario.dim;
    (0..m_eff)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(
                scenario.seed,
                &[tag::NODE_REPLICA, flow_idx as u64, r as u64],
            );
            let mut z = vec![0.0; steps * d];
            // Draw in descending horizon order so every (k, c) position is
            // a fixed prefix of the stream.
            for k in (1..=steps).rev() {
                for c in 0..d {
                    z[(k - 1) * d + c] = rng.sample(StandardNormal);
                }
            }
            z
        })
        .collect()
}

/// Tabulates every `(t_k, x_j)` node of one flow against the input field.
pub fn psi_tabulate(
    cs: &CoefficientSet,
    w_in: &dyn Field,
    flow: &MeasureFlow,
    scenario: &SolverScenario,
    flow_idx: usize,
) -> Result<FlowTable> {
    let d = scenario.dim;
    let steps = flow.steps();
    let dt = scenario.dt;
    let stencil = scenario.stencil.generate(d)?;
    let n_nodes = (steps + 1) * stencil.len();

    // Row k is horizon-to-go k dt = forward time (steps - k) dt.
    let clouds: Vec<&EmpiricalMeasure> = (0..=steps).map(|k| flow.at(steps - k)).collect();
    let views: Vec<MeasureView> = clouds.iter().map(|c| MeasureView::new(c)).collect();
    let slices: Vec<Box<dyn FieldSlice>> = (0..=steps)
        .map(|k| w_in.slice(k as f64 * dt, clouds[k]))
        .collect();

    let m_eff = if scenario.sigma_x > 0.0 {
        scenario.n_replicas
    } else {
        1
    };
    let noise = if scenario.sigma_x > 0.0 {
        replica_noise(scenario, flow_idx, steps, m_eff)
    } else {
        Vec::new()
    };
    let idio_scale = (2.0 * scenario.sigma_x * dt).sqrt();

    let nodes: Vec<Result<(Vec<f64>, f64)>> = (0..n_nodes)
        .into_par_iter()
        .map(|node| {
            let k = node / stencil.len();
            let j = node % stencil.len();
            let x0 = &stencil[j];
            let mut mean = vec![0.0; d];
            let mut m2 = vec![0.0; d];
            for r in 0..m_eff {
                let mut x = x0.clone();
                let mut acc = vec![0.0; d];
                let mut u = vec![0.0; d];
                let mut drift = vec![0.0; d];
                let mut g = vec![0.0; d];
                for i in (1..=k).rev() {
                    slices[i].eval(&x, &mut u);
                    (cs.f)(&x, &views[i], &u, &mut drift);
                    (cs.g)(&x, &views[i], &u, &mut g);
                    for c in 0..d {
                        acc[c] += g[c] * dt;
                        x[c] -= dt * drift[c];
                        if idio_scale > 0.0 {
                            x[c] += idio_scale * noise[r][(i - 1) * d + c];
                        }
                    }
                }
                let mut w_end = vec![0.0; d];
                (cs.w0)(&x, &views[0], &mut w_end);
                for c in 0..d {
                    let v = w_end[c] + acc[c];
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            time: k as f64 * dt,
                            particle: j,
                        });
                    }
                    // Streaming mean and squared deviation (Welford).
                    let delta = v - mean[c];
                    mean[c] += delta / (r + 1) as f64;
                    m2[c] += delta * (v - mean[c]);
                }
            }
            let se = if m_eff > 1 {
                (0..d)
                    .map(|c| (m2[c] / (m_eff * (m_eff - 1)) as f64).sqrt())
                    .fold(0.0f64, f64::max)
            } else {
                0.0
            };
            Ok((mean, se))
        })
        .collect();

    let mut values = vec![Vec::new(); steps + 1];
    let mut std_err = vec![Vec::new(); steps + 1];
    for (node, res) in nodes.into_iter().enumerate() {
        let (v, se) = res?;
        values[node / stencil.len()].push(v);
        std_err[node / stencil.len()].push(se);
    }

    let affine = if d >= 2 {
        Some(
            values
                .iter()
                .map(|row| fit_affine_row(&stencil, row, d))
                .collect(),
        )
    } else {
        None
    };

    Ok(FlowTable {
        offset: scenario.flow_offsets[flow_idx].clone(),
        mean: views.iter().map(|v| v.mean.clone()).collect(),
        sqrt_e2: views.iter().map(|v| v.sqrt_e2).collect(),
        values,
        std_err,
        affine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::Regime;
    use crate::field::{StateMap, TerminalField};
    use crate::solver::StencilSpec;
    use std::sync::Arc;

    fn scenario_1d(seed: u64) -> SolverScenario {
        SolverScenario {
            dim: 1,
            horizon: 1.0,
            dt: 0.25,
            n_particles: 8,
            n_replicas: 16,
            sigma_x: 0.0,
            stencil: StencilSpec {
                center: vec![0.0],
                half_width: 2.0,
                points_per_axis: 5,
            },
            flow_offsets: vec![vec![0.0]],
            mu0: EmpiricalMeasure::uniform(vec![
                vec![-1.0],
                vec![-0.25],
                vec![0.5],
                vec![1.0],
                vec![0.0],
                vec![0.25],
                vec![-0.5],
                vec![0.75],
            ])
            .unwrap(),
            seed,
        }
    }

    fn trivial_set(dim: usize) -> CoefficientSet {
        CoefficientSet {
            dim,
            f: Arc::new(|_x, _mu, _u, out| out.fill(0.0)),
            g: Arc::new(|_x, _mu, _u, out| out.fill(0.0)),
            w0: Arc::new(|x, _mu, out| out.copy_from_slice(x)),
            growth_constant: 1.0,
            regime: Regime::JointMonotone,
            gamma: 1.0,
            a0: Some(1.0),
        }
    }

    #[test]
    fn zero_dynamics_tabulates_the_terminal_map() {
        // F = G = 0, sigma = 0: every node equals w0 at its own state.
        let cs = trivial_set(1);
        let scenario = scenario_1d(3);
        let w_guess: Arc<StateMap> = Arc::new(|x, _mu, out| out.copy_from_slice(x));
        let field = TerminalField::new(w_guess, 1, 1.0);
        let flow = simulate_reference_flow(&cs, &field, &scenario, 0).unwrap();
        let table = psi_tabulate(&cs, &field, &flow, &scenario, 0).unwrap();
        let stencil = scenario.stencil.generate(1).unwrap();
        for row in &table.values {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(v[0], stencil[j][0]);
            }
        }
        assert_eq!(table.max_std_err(), 0.0);
    }

    #[test]
    fn running_cost_accumulates_over_horizon() {
        // F = 0, G = 1, w0 = 0: node value is exactly t_k.
        let cs = CoefficientSet {
            g: Arc::new(|_x, _mu, _u, out| out.fill(1.0)),
            w0: Arc::new(|_x, _mu, out| out.fill(0.0)),
            ..trivial_set(1)
        };
        let scenario = scenario_1d(4);
        let field = TerminalField::new(Arc::new(|_x, _mu, out: &mut [f64]| out.fill(0.0)), 1, 1.0);
        let flow = simulate_reference_flow(&cs, &field, &scenario, 0).unwrap();
        let table = psi_tabulate(&cs, &field, &flow, &scenario, 0).unwrap();
        for (k, row) in table.values.iter().enumerate() {
            for v in row {
                assert!((v[0] - k as f64 * 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn node_noise_is_frozen_across_repeat_sweeps() {
        let cs = trivial_set(1);
        let mut scenario = scenario_1d(5);
        scenario.sigma_x = 0.3;
        let field = TerminalField::new(
            Arc::new(|x: &[f64], _mu: &MeasureView, out: &mut [f64]| out.copy_from_slice(x)),
            1,
            1.0,
        );
        let flow = simulate_reference_flow(&cs, &field, &scenario, 0).unwrap();
        let t1 = psi_tabulate(&cs, &field, &flow, &scenario, 0).unwrap();
        let t2 = psi_tabulate(&cs, &field, &flow, &scenario, 0).unwrap();
        assert_eq!(t1.values, t2.values);
        assert!(t1.max_std_err() > 0.0);
    }

    #[test]
    fn terminal_row_is_noise_free() {
        let cs = trivial_set(1);
        let mut scenario = scenario_1d(6);
        scenario.sigma_x = 0.5;
        let field = TerminalField::new(
            Arc::new(|x: &[f64], _mu: &MeasureView, out: &mut [f64]| out.copy_from_slice(x)),
            1,
            1.0,
        );
        let flow = simulate_reference_flow(&cs, &field, &scenario, 0).unwrap();
        let table = psi_tabulate(&cs, &field, &flow, &scenario, 0).unwrap();
        for se in &table.std_err[0] {
            assert_eq!(*se, 0.0);
        }
    }
}
