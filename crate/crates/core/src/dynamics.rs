//! Forward particle systems driven by a decoupling field.
//!
//! The controlled state follows
//!
//! ```text
//! dX_s = -F(X_s, m_s, u_s) ds + sqrt(2 sigma_x) dB_s,
//! u_s  = W(T - s, X_s, m_s),
//! ```
//!
//! where `m_s` is the empirical law of the particle cloud itself and the
//! field is indexed by horizon-to-go. The conditional variant adds a shared
//! increment `sqrt(2 beta) dB0_s` to every particle, producing the flow of
//! conditional laws given one common-noise path.

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::field::{Field, MeasureView};
use crate::lq::grid_steps;
use crate::measures::EmpiricalMeasure;
use crate::rng::{stream_rng, tag};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// A particle approximation of a measure path on a uniform forward grid.
/// Atom `i` of every snapshot is the same particle, so consecutive
/// snapshots are couplings along trajectories.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    /// Forward times `0 = s_0 < ... < s_K = T`.
    pub times: Vec<f64>,
    pub measures: Vec<EmpiricalMeasure>,
    pub seed: u64,
}

impl MeasureFlow {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }

    pub fn len_particles(&self) -> usize {
        self.measures[0].len()
    }

    pub fn at(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k]
    }

    pub fn final_measure(&self) -> &EmpiricalMeasure {
        self.measures.last().unwrap()
    }

    /// The path `k -> E_q(m_{s_k})` of absolute moments along the flow.
    pub fn moment_path(&self, q: f64) -> Vec<f64> {
        self.measures.iter().map(|m| m.moment(q)).collect()
    }

    /// Writes one `cloud_NNNN.csv` per grid time (weight, x_1..x_d rows)
    /// plus `flow_manifest.json`. Values round-trip bitwise.
    pub fn write_dir(&self, dir: &Path, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (k, m) in self.measures.iter().enumerate() {
            let file = std::fs::File::create(dir.join(format!("cloud_{k:04}.csv")))?;
            m.write_csv(std::io::BufWriter::new(file))?;
        }
        let manifest = FlowDirManifest {
            times: self.times.clone(),
            seed: self.seed,
            dim: self.dim(),
            n_particles: self.len_particles(),
            config_hash: config_hash.to_string(),
        };
        crate::io::write_json(&dir.join("flow_manifest.json"), &manifest)
    }

    /// Reads the layout produced by [`Self::write_dir`], validating every
    /// cloud against the manifest.
    pub fn read_dir(dir: &Path) -> Result<(Self, FlowDirManifest)> {
        let manifest: FlowDirManifest = crate::io::read_json(&dir.join("flow_manifest.json"))?;
        if manifest.times.is_empty() {
            return Err(Error::InvalidArgument("manifest lists no times".into()));
        }
        if manifest.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "manifest times must increase strictly".into(),
            ));
        }
        let mut measures = Vec::with_capacity(manifest.times.len());
        for k in 0..manifest.times.len() {
            let file = std::fs::File::open(dir.join(format!("cloud_{k:04}.csv")))?;
            let m = EmpiricalMeasure::read_csv(std::io::BufReader::new(file))?;
            if m.dim() != manifest.dim {
                return Err(Error::DimensionMismatch {
                    expected: manifest.dim,
                    got: m.dim(),
                });
            }
            if m.len() != manifest.n_particles {
                return Err(Error::InvalidArgument(format!(
                    "cloud {k} has {} atoms, manifest says {}",
                    m.len(),
                    manifest.n_particles
                )));
            }
            measures.push(m);
        }
        let flow = MeasureFlow {
            times: manifest.times.clone(),
            measures,
            seed: manifest.seed,
        };
        Ok((flow, manifest))
    }
}

/// Companion manifest of a serialized [`MeasureFlow`] directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowDirManifest {
    pub times: Vec<f64>,
    pub seed: u64,
    pub dim: usize,
    pub n_particles: usize,
    /// Provenance of the run that produced the flow; opaque to the reader.
    pub config_hash: String,
}

/// One realized common-noise path on the same grid as its flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommonNoisePath {
    pub times: Vec<f64>,
    /// Cumulative shared shift applied up to each grid time; starts at zero.
    pub cumulative: Vec<Vec<f64>>,
}

/// Simulates the interacting particle system without common noise.
///
/// When `mu0` already has `n` uniform atoms they seed the particles
/// directly; otherwise `n` initial states are drawn from `mu0` by weight.
pub fn simulate_mckean(
    cs: &CoefficientSet,
    w: &dyn Field,
    mu0: &EmpiricalMeasure,
    horizon: f64,
    dt: f64,
    n: usize,
    sigma_x: f64,
    seed: u64,
) -> Result<MeasureFlow> {
    simulate_flow_core(cs, w, mu0, horizon, dt, n, sigma_x, 0.0, seed).map(|(flow, _)| flow)
}

/// Simulates the conditional particle system given one common-noise path
/// of intensity `beta`, returning the flow together with the realized path.
/// `beta = 0` reproduces `simulate_mckean` bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn simulate_conditional_common_noise(
    cs: &CoefficientSet,
    w: &dyn Field,
    mu0: &EmpiricalMeasure,
    horizon: f64,
    dt: f64,
    n: usize,
    sigma_x: f64,
    beta: f64,
    seed: u64,
) -> Result<(MeasureFlow, CommonNoisePath)> {
    let (flow, path) = simulate_flow_core(cs, w, mu0, horizon, dt, n, sigma_x, beta, seed)?;
    Ok((flow, path))
}

#[allow(clippy::too_many_arguments)]
fn simulate_flow_core(
    cs: &CoefficientSet,
    w: &dyn Field,
    mu0: &EmpiricalMeasure,
    horizon: f64,
    dt: f64,
    n: usize,
    sigma_x: f64,
    beta: f64,
    seed: u64,
) -> Result<(MeasureFlow, CommonNoisePath)> {
    let d = cs.dim;
    if mu0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: mu0.dim(),
        });
    }
    if w.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: w.dim(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if !(sigma_x.is_finite() && sigma_x >= 0.0) || !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise intensities must be nonnegative, got sigma_x = {sigma_x}, beta = {beta}"
        )));
    }
    let steps = grid_steps(horizon, dt)?;
    if w.horizon() + 1e-12 * horizon.max(1.0) < horizon {
        return Err(Error::InvalidArgument(format!(
            "field horizon {} shorter than requested horizon {horizon}",
            w.horizon()
        )));
    }

    let mut states = initial_states(mu0, n, d, seed)?;
    let mut particle_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| stream_rng(seed, &[tag::FLOW_PARTICLE, i as u64]))
        .collect();
    let mut common_rng = stream_rng(seed, &[tag::COMMON_NOISE]);

    let mut times = Vec::with_capacity(steps + 1);
    let mut measures = Vec::with_capacity(steps + 1);
    let mut cumulative = vec![vec![0.0; d]];
    let idio_scale = (2.0 * sigma_x * dt).sqrt();
    let common_scale = (2.0 * beta * dt).sqrt();

    for k in 0..=steps {
        let time = k as f64 * dt;
        let measure = EmpiricalMeasure::uniform(states.clone())?;
        times.push(time);
        if k == steps {
            measures.push(measure);
            break;
        }
        let common_shift: Vec<f64> = if beta > 0.0 {
            (0..d)
                .map(|_| common_scale * common_rng.sample::<f64, _>(StandardNormal))
                .collect()
        } else {
            vec![0.0; d]
        };

        let first_bad = {
            let view = MeasureView::new(&measure);
            let to_go = (steps - k) as f64 * dt;
            let slice = w.slice(to_go, &measure);
            states
                .par_iter_mut()
                .zip(particle_rngs.par_iter_mut())
                .enumerate()
                .map(|(i, (x, rng))| {
                    let mut u = vec![0.0; d];
                    slice.eval(x, &mut u);
                    let mut drift = vec![0.0; d];
                    (cs.f)(x, &view, &u, &mut drift);
                    let mut ok = true;
                    for c in 0..d {
                        let noise: f64 = if sigma_x > 0.0 {
                            idio_scale * rng.sample::<f64, _>(StandardNormal)
                        } else {
                            0.0
                        };
                        x[c] += -dt * drift[c] + noise;
                        if beta > 0.0 {
                            x[c] += common_shift[c];
                        }
                        ok &= x[c].is_finite();
                    }
                    if ok {
                        None
                    } else {
                        Some(i)
                    }
                })
                .flatten()
                .min()
        };
        if let Some(i) = first_bad {
            return Err(Error::NonFinite {
                time: time + dt,
                particle: i,
            });
        }
        measures.push(measure);

        let prev = cumulative.last().unwrap().clone();
        cumulative.push(
            prev.iter()
                .zip(&common_shift)
                .map(|(p, s)| p + s)
                .collect(),
        );
    }

    let flow = MeasureFlow {
        times: times.clone(),
        measures,
        seed,
    };
    Ok((flow, CommonNoisePath { times, cumulative }))
}

fn initial_states(
    mu0: &EmpiricalMeasure,
    n: usize,
    d: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if mu0.len() == n && mu0.is_uniform() {
        return Ok(mu0.points().to_vec());
    }
    let mut rng = stream_rng(seed, &[tag::MEASURE_SAMPLE, 0]);
    let mut states = Vec::with_capacity(n);
    for _ in 0..n {
        // Inverse-CDF draw over atom weights.
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut idx = mu0.len() - 1;
        for (j, &wj) in mu0.weights().iter().enumerate() {
            acc += wj;
            if u < acc {
                idx = j;
                break;
            }
        }
        states.push(mu0.point(idx).to_vec());
    }
    debug_assert!(states.iter().all(|p| p.len() == d));
    Ok(states)
}

/// Drift and volatility families for the scalar environment process.
fn theta_coefficient(name: &str, scale: f64) -> Result<Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>> {
    match name {
        "zero" => Ok(Arc::new(|theta: &[f64]| vec![0.0; theta.len()])),
        "constant" => Ok(Arc::new(move |theta: &[f64]| vec![scale; theta.len()])),
        "linear" => Ok(Arc::new(move |theta: &[f64]| {
            theta.iter().map(|&t| scale * t).collect()
        })),
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

/// One realized path of the environment process `theta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ThetaPath {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k]
    }
}

/// Simulates `d theta = b(theta) ds + sigma(theta) dB0_s` with named
/// coefficient families ("zero", "constant", "linear"), each scaled.
#[allow(clippy::too_many_arguments)]
pub fn simulate_theta(
    b_name: &str,
    b_scale: f64,
    sigma_name: &str,
    sigma_scale: f64,
    theta0: &[f64],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<ThetaPath> {
    let b = theta_coefficient(b_name, b_scale)?;
    let sigma = theta_coefficient(sigma_name, sigma_scale)?;
    let steps = grid_steps(horizon, dt)?;
    let d = theta0.len();
    if d == 0 {
        return Err(Error::InvalidArgument("theta must have a dimension".into()));
    }
    let mut rng = stream_rng(seed, &[tag::THETA]);
    let sqrt_dt = dt.sqrt();
    let mut values = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    let mut theta = theta0.to_vec();
    for k in 0..=steps {
        times.push(k as f64 * dt);
        values.push(theta.clone());
        if k == steps {
            break;
        }
        let drift = b(&theta);
        let vol = sigma(&theta);
        for c in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            theta[c] += drift[c] * dt + vol[c] * sqrt_dt * z;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time: (k + 1) as f64 * dt,
                particle: 0,
            });
        }
    }
    Ok(ThetaPath { times, values })
}

/// Field transformation for a realized environment shift: evaluates the
/// inner field at the shifted state and the shifted measure,
/// `W~(t, x, theta, mu) = W(t, x + theta, (id + theta) # mu)`.
pub struct CommonNoiseWrap {
    inner: Arc<dyn Field>,
}

impl CommonNoiseWrap {
    pub fn new(inner: Arc<dyn Field>) -> Self {
        CommonNoiseWrap { inner }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn eval(
        &self,
        t: f64,
        x: &[f64],
        theta: &[f64],
        mu: &EmpiricalMeasure,
    ) -> Result<Vec<f64>> {
        let d = self.inner.dim();
        if x.len() != d || theta.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if x.len() != d { x.len() } else { theta.len() },
            });
        }
        let shifted_x: Vec<f64> = x.iter().zip(theta).map(|(a, b)| a + b).collect();
        let shifted_mu = mu.pushforward_shift(theta)?;
        Ok(self.inner.eval(t, &shifted_x, &shifted_mu))
    }
}

pub fn common_noise_wrap(inner: Arc<dyn Field>) -> CommonNoiseWrap {
    CommonNoiseWrap::new(inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{FamilyRegistry, Regime};
    use crate::field::{StateMap, TerminalField};
    use std::collections::BTreeMap;

    fn zero_field(dim: usize, horizon: f64) -> TerminalField {
        let map: Arc<StateMap> = Arc::new(|_x, _mu, out| out.fill(0.0));
        TerminalField::new(map, dim, horizon)
    }

    fn custom_set(f: Arc<crate::field::CoefMap>, dim: usize) -> CoefficientSet {
        CoefficientSet {
            dim,
            f,
            g: Arc::new(|_x, _mu, _u, out| out.fill(0.0)),
            w0: Arc::new(|_x, _mu, out| out.fill(0.0)),
            growth_constant: 1.0,
            regime: Regime::JointMonotone,
            gamma: 1.0,
            a0: None,
        }
    }

    #[test]
    fn zero_drift_zero_noise_is_frozen() {
        let cs = custom_set(Arc::new(|_x, _mu, _u, out| out.fill(0.0)), 1);
        let mu0 = EmpiricalMeasure::uniform(vec![vec![-1.0], vec![0.5], vec![2.0]]).unwrap();
        let w = zero_field(1, 1.0);
        let flow = simulate_mckean(&cs, &w, &mu0, 1.0, 0.25, 3, 0.0, 9).unwrap();
        assert_eq!(flow.steps(), 4);
        for m in &flow.measures {
            assert_eq!(m.points(), mu0.points());
        }
    }

    #[test]
    fn linear_drift_mean_decays_exponentially() {
        // F = x gives d mean / ds = -mean; Euler tracks (1 - dt)^k.
        let cs = custom_set(
            Arc::new(|x, _mu, _u, out| out.copy_from_slice(x)),
            1,
        );
        let n = 20_000;
        let mu0 = EmpiricalMeasure::dirac(vec![1.0]).unwrap();
        let w = zero_field(1, 1.0);
        let flow = simulate_mckean(&cs, &w, &mu0, 1.0, 1e-3, n, 0.5, 42).unwrap();
        let mean_end = flow.final_measure().mean()[0];
        assert!(
            (mean_end - (-1.0f64).exp()).abs() < 0.02,
            "mean {mean_end} vs {}",
            (-1.0f64).exp()
        );
    }

    #[test]
    fn pure_diffusion_variance_grows_linearly() {
        let cs = custom_set(Arc::new(|_x, _mu, _u, out| out.fill(0.0)), 1);
        let n = 40_000;
        let mu0 = EmpiricalMeasure::dirac(vec![0.0]).unwrap();
        let w = zero_field(1, 0.5);
        let sigma_x = 0.7;
        let flow = simulate_mckean(&cs, &w, &mu0, 0.5, 1e-2, n, sigma_x, 7).unwrap();
        let var = flow.final_measure().moment(2.0);
        let expect = 2.0 * sigma_x * 0.5;
        assert!(
            (var - expect).abs() / expect < 0.05,
            "var {var} vs {expect}"
        );
    }

    #[test]
    fn field_feedback_enters_the_drift() {
        // F = u and W(t, x) = x: drift -x, so the dirac contracts.
        let cs = custom_set(
            Arc::new(|_x, _mu, u, out| out.copy_from_slice(u)),
            1,
        );
        let map: Arc<StateMap> = Arc::new(|x, _mu, out| out.copy_from_slice(x));
        let w = TerminalField::new(map, 1, 1.0);
        let mu0 = EmpiricalMeasure::dirac(vec![1.0]).unwrap();
        let flow = simulate_mckean(&cs, &w, &mu0, 1.0, 1e-3, 1, 0.0, 3).unwrap();
        let x_end = flow.final_measure().point(0)[0];
        assert!((x_end - (-1.0f64).exp()).abs() < 1e-3, "{x_end}");
    }

    #[test]
    fn zero_beta_matches_plain_simulation_bitwise() {
        let registry = FamilyRegistry::with_builtins();
        let cs = registry.build("lq", &BTreeMap::new(), 1).unwrap();
        let oracle = crate::lq::oracle_field(
            &crate::lq::LqParams {
                p: 1.0,
                p_bar: 0.0,
                q: 1.0,
                q_bar: 0.0,
                horizon: 0.5,
            },
            1e-3,
        )
        .unwrap();
        let mu0 =
            EmpiricalMeasure::uniform(vec![vec![0.0], vec![1.0], vec![-1.0], vec![0.4]])
                .unwrap();
        let plain = simulate_mckean(&cs, &oracle, &mu0, 0.5, 0.05, 4, 0.3, 11).unwrap();
        let (cond, path) =
            simulate_conditional_common_noise(&cs, &oracle, &mu0, 0.5, 0.05, 4, 0.3, 0.0, 11)
                .unwrap();
        for (a, b) in plain.measures.iter().zip(&cond.measures) {
            assert_eq!(a.points(), b.points());
        }
        assert!(path.cumulative.iter().all(|v| v[0] == 0.0));
    }

    #[test]
    fn common_shift_moves_the_whole_cloud() {
        // Zero drift and zero idiosyncratic noise: every particle moves by
        // exactly the cumulative common path.
        let cs = custom_set(Arc::new(|_x, _mu, _u, out| out.fill(0.0)), 1);
        let mu0 = EmpiricalMeasure::uniform(vec![vec![-1.0], vec![1.0]]).unwrap();
        let w = zero_field(1, 1.0);
        let (flow, path) =
            simulate_conditional_common_noise(&cs, &w, &mu0, 1.0, 0.25, 2, 0.0, 0.8, 5)
                .unwrap();
        for (k, m) in flow.measures.iter().enumerate() {
            let shift = path.cumulative[k][0];
            assert!((m.point(0)[0] - (-1.0 + shift)).abs() < 1e-14);
            assert!((m.point(1)[0] - (1.0 + shift)).abs() < 1e-14);
        }
        assert!(path.cumulative.last().unwrap()[0] != 0.0);
    }

    #[test]
    fn nonfinite_states_report_first_particle_and_time() {
        let cs = custom_set(
            Arc::new(|x, _mu, _u, out| {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = -(v * v).exp() * v.signum() * 1e30;
                }
            }),
            1,
        );
        let mu0 = EmpiricalMeasure::uniform(vec![vec![2.0], vec![3.0]]).unwrap();
        let w = zero_field(1, 1.0);
        let err = simulate_mckean(&cs, &w, &mu0, 1.0, 0.25, 2, 0.0, 1).unwrap_err();
        match err {
            Error::NonFinite { time, particle } => {
                assert!(time > 0.0 && time <= 1.0);
                assert!(particle < 2);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn theta_families_and_registry_errors() {
        let path = simulate_theta("zero", 0.0, "zero", 0.0, &[0.3], 1.0, 0.25, 2).unwrap();
        assert_eq!(path.values.len(), 5);
        assert!(path.values.iter().all(|v| v[0] == 0.3));

        let drifted =
            simulate_theta("constant", 2.0, "zero", 0.0, &[0.0], 1.0, 0.25, 2).unwrap();
        assert!((drifted.values.last().unwrap()[0] - 2.0).abs() < 1e-12);

        let err = simulate_theta("cubic", 1.0, "zero", 0.0, &[0.0], 1.0, 0.25, 2).unwrap_err();
        assert!(matches!(err, Error::UnknownFamily(name) if name == "cubic"));
    }

    #[test]
    fn wrap_shifts_state_and_measure_together() {
        // W(t, x, mu) = x + mean: the wrapped value gains 2 theta.
        let map: Arc<StateMap> = Arc::new(|x, mu, out| {
            for ((o, &xc), &mc) in out.iter_mut().zip(x).zip(&mu.mean) {
                *o = xc + mc;
            }
        });
        let field: Arc<dyn Field> = Arc::new(TerminalField::new(map, 1, 1.0));
        let wrap = common_noise_wrap(field.clone());
        let mu = EmpiricalMeasure::uniform(vec![vec![1.0], vec![3.0]]).unwrap();
        let base = field.eval(0.2, &[0.5], &mu);
        let wrapped = wrap.eval(0.2, &[0.5], &[0.7], &mu).unwrap();
        assert!((wrapped[0] - (base[0] + 2.0 * 0.7)).abs() < 1e-12);
        let zero = wrap.eval(0.2, &[0.5], &[0.0], &mu).unwrap();
        assert_eq!(zero[0], base[0]);
    }

    #[test]
    fn sampled_initial_states_follow_weights() {
        let mu0 = EmpiricalMeasure::new(
            vec![vec![0.0], vec![10.0]],
            vec![0.9, 0.1],
        )
        .unwrap();
        let cs = custom_set(Arc::new(|_x, _mu, _u, out| out.fill(0.0)), 1);
        let w = zero_field(1, 0.1);
        let flow = simulate_mckean(&cs, &w, &mu0, 0.1, 0.05, 5000, 0.0, 13).unwrap();
        let frac_high = flow
            .at(0)
            .points()
            .iter()
            .filter(|p| p[0] > 5.0)
            .count() as f64
            / 5000.0;
        assert!((frac_high - 0.1).abs() < 0.02, "{frac_high}");
    }
}
