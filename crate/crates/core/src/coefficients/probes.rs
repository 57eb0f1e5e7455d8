//! Sampling probes that certify declared coefficient structure.
//!
//! All probes draw paired particle clouds from a [`SamplerSpec`], evaluate
//! coefficient differences along the paired atoms, and reduce lifted inner
//! products `E[<a_i, b_i>]`. Each pair index owns an independent random
//! stream, so reports are reproducible and parallelism-invariant.

use crate::error::{Error, Result};
use crate::field::{CoefMap, MeasureView, StateMap};
use crate::measures::EmpiricalMeasure;
use crate::rng::{stream_rng, tag};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Quotients above `-DEFAULT_PROBE_TOL` count as monotone; the slack absorbs
/// float rounding in the lifted reductions.
pub const DEFAULT_PROBE_TOL: f64 = 1e-9;

/// Lifted pairs with squared norm below this are resampled.
pub const DEGENERATE_PAIR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mixture sampler for probe inputs: a Gaussian mixture plus an optional
/// heavy-tailed (Student-t, 3 degrees of freedom) component so superlinear
/// growth cannot hide in the bulk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub dim: usize,
    pub cloud_size: usize,
    pub components: Vec<GaussianComponent>,
    pub heavy_tail_weight: f64,
    pub heavy_tail_scale: f64,
}

impl SamplerSpec {
    /// General-purpose default: a centered bulk, two displaced lobes, and a
    /// 10% heavy tail.
    pub fn standard(dim: usize, cloud_size: usize) -> Self {
        let comp = |mean: f64, std: f64, weight: f64| GaussianComponent {
            weight,
            mean: vec![mean; dim],
            std: vec![std; dim],
        };
        Self {
            dim,
            cloud_size,
            components: vec![comp(0.0, 1.0, 0.6), comp(2.0, 2.0, 0.2), comp(-2.0, 2.0, 0.2)],
            heavy_tail_weight: 0.1,
            heavy_tail_scale: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.cloud_size == 0 {
            return Err(Error::InvalidArgument(
                "sampler needs positive dim and cloud size".into(),
            ));
        }
        if self.components.is_empty() {
            return Err(Error::InvalidArgument("sampler needs components".into()));
        }
        if !(0.0..1.0).contains(&self.heavy_tail_weight) {
            return Err(Error::InvalidArgument(
                "heavy tail weight must lie in [0, 1)".into(),
            ));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if total <= 0.0 || self.components.iter().any(|c| c.weight < 0.0) {
            return Err(Error::InvalidArgument("component weights invalid".into()));
        }
        for c in &self.components {
            if c.mean.len() != self.dim || c.std.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: c.mean.len().max(c.std.len()),
                });
            }
        }
        Ok(())
    }

    fn sample_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        if self.heavy_tail_weight > 0.0 && rng.gen::<f64>() < self.heavy_tail_weight {
            let t = StudentT::new(3.0).expect("valid dof");
            return (0..self.dim)
                .map(|_| self.heavy_tail_scale * t.sample(rng))
                .collect();
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            if pick < c.weight {
                chosen = c;
                break;
            }
            pick -= c.weight;
        }
        chosen
            .mean
            .iter()
            .zip(&chosen.std)
            .map(|(&m, &s)| {
                let n = Normal::new(m, s.max(0.0)).expect("valid normal");
                n.sample(rng)
            })
            .collect()
    }

    /// A uniform cloud of `cloud_size` atoms.
    pub fn sample_cloud(&self, rng: &mut ChaCha8Rng) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform((0..self.cloud_size).map(|_| self.sample_point(rng)).collect())
    }

    /// `n` loose points, used for control values.
    pub fn sample_values(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_point(rng)).collect()
    }

    /// A cloud paired with one control value per atom.
    pub fn sample_lifted(&self, rng: &mut ChaCha8Rng) -> Result<LiftedSample> {
        let x_cloud = self.sample_cloud(rng)?;
        let n = x_cloud.len();
        LiftedSample::new(x_cloud, self.sample_values(rng, n))
    }
}

/// A discretized pair of coupled random variables: a state cloud plus one
/// control value per atom, in atom order.
#[derive(Debug, Clone)]
pub struct LiftedSample {
    x_cloud: EmpiricalMeasure,
    u_values: Vec<Vec<f64>>,
}

impl LiftedSample {
    pub fn new(x_cloud: EmpiricalMeasure, u_values: Vec<Vec<f64>>) -> Result<Self> {
        if u_values.len() != x_cloud.len() {
            return Err(Error::InvalidArgument(format!(
                "{} control values for {} atoms",
                u_values.len(),
                x_cloud.len()
            )));
        }
        if u_values.iter().any(|u| u.len() != x_cloud.dim()) {
            return Err(Error::DimensionMismatch {
                expected: x_cloud.dim(),
                got: u_values.iter().map(Vec::len).find(|&l| l != x_cloud.dim()).unwrap_or(0),
            });
        }
        Ok(Self { x_cloud, u_values })
    }

    pub fn cloud(&self) -> &EmpiricalMeasure {
        &self.x_cloud
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.u_values
    }
}

/// Outcome of a monotonicity probe. `worst_pair_seed` is the substream
/// index of the minimizing pair under the probe's root seed, so the witness
/// can be regenerated deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub min_quotient: f64,
    pub n_pairs: usize,
    pub worst_pair_seed: u64,
    pub passed: bool,
}

fn lifted_dot(a: &[Vec<f64>], b: &[Vec<f64>], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((ai, bi), &wi) in a.iter().zip(b).zip(w) {
        let mut dot = 0.0;
        for (x, y) in ai.iter().zip(bi) {
            dot += x * y;
        }
        acc += wi * dot;
    }
    acc
}

fn paired_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

fn report_from_quotients(quotients: Vec<f64>) -> MonotonicityReport {
    let mut min_q = f64::INFINITY;
    let mut worst = 0usize;
    for (i, &q) in quotients.iter().enumerate() {
        if q < min_q {
            min_q = q;
            worst = i;
        }
    }
    MonotonicityReport {
        min_quotient: min_q,
        n_pairs: quotients.len(),
        worst_pair_seed: worst as u64,
        passed: min_q >= -DEFAULT_PROBE_TOL,
    }
}

/// Smallest lifted Rayleigh quotient
/// `E[<W0(X) - W0(Y), X - Y>] / E[|X - Y|^2]`
/// over `n_pairs` independently sampled paired clouds. Degenerate pairs are
/// resampled from the same stream.
pub fn probe_l2_monotone(
    w0: &StateMap,
    dim: usize,
    sampler: &SamplerSpec,
    n_pairs: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    validate_probe(dim, sampler, n_pairs)?;
    let quotients: Vec<Result<f64>> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, &[tag::PROBE_PAIR, 1, i as u64]);
            for _attempt in 0..100 {
                let x = sampler.sample_cloud(&mut rng)?;
                let y = sampler.sample_cloud(&mut rng)?;
                let dx = paired_diff(x.points(), y.points());
                let denom = lifted_dot(&dx, &dx, x.weights());
                if denom < DEGENERATE_PAIR_TOL {
                    continue;
                }
                let wx = eval_state_map(w0, &x)?;
                let wy = eval_state_map(w0, &y)?;
                let dw = paired_diff(&wx, &wy);
                return Ok(lifted_dot(&dw, &dx, x.weights()) / denom);
            }
            Err(Error::InvalidArgument(
                "sampler keeps producing degenerate pairs".into(),
            ))
        })
        .collect();
    Ok(report_from_quotients(
        quotients.into_iter().collect::<Result<Vec<f64>>>()?,
    ))
}

/// Terminal coercivity: smallest quotient
/// `E[<W0(X) - W0(Y), X - Y>] / E[|W0(X) - W0(Y)|^2]`.
/// A positive minimum certifies the constant relating terminal increments
/// back to state increments.
pub fn probe_terminal_coercivity(
    w0: &StateMap,
    dim: usize,
    sampler: &SamplerSpec,
    n_pairs: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    validate_probe(dim, sampler, n_pairs)?;
    let quotients: Vec<Result<f64>> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, &[tag::PROBE_PAIR, 2, i as u64]);
            for _attempt in 0..100 {
                let x = sampler.sample_cloud(&mut rng)?;
                let y = sampler.sample_cloud(&mut rng)?;
                let wx = eval_state_map(w0, &x)?;
                let wy = eval_state_map(w0, &y)?;
                let dw = paired_diff(&wx, &wy);
                let denom = lifted_dot(&dw, &dw, x.weights());
                if denom < DEGENERATE_PAIR_TOL {
                    continue;
                }
                let dx = paired_diff(x.points(), y.points());
                return Ok(lifted_dot(&dw, &dx, x.weights()) / denom);
            }
            Err(Error::InvalidArgument(
                "sampler keeps producing degenerate pairs".into(),
            ))
        })
        .collect();
    Ok(report_from_quotients(
        quotients.into_iter().collect::<Result<Vec<f64>>>()?,
    ))
}

/// Joint monotonicity of `(F, G)` on state-control pairs:
/// `(E[<dF, dU>] + E[<dG, dX>]) / (E[|dX|^2] + E[|dU|^2])`.
///
/// Every fifth pair shares controls (`dU = 0`) and every fifth shares states
/// (`dX = 0`) so both degenerate faces of the quotient are explored.
pub fn probe_joint_monotone(
    f: &CoefMap,
    g: &CoefMap,
    dim: usize,
    sampler: &SamplerSpec,
    n_pairs: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    validate_probe(dim, sampler, n_pairs)?;
    let samples = joint_samples(f, g, dim, sampler, n_pairs, seed, 3)?;
    Ok(report_from_quotients(
        samples
            .into_iter()
            .map(|s| s.product / (s.dx2 + s.du2))
            .collect(),
    ))
}

/// Direction of a weak-strong fit: which increment carries the coercivity
/// term and which carries the slack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonotoneDirection {
    InX,
    InW,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakStrongFit {
    pub alpha: f64,
    pub l: f64,
    pub direction: MonotoneDirection,
    pub n_pairs: usize,
    /// True when some `(alpha > 0, l)` satisfies every sample.
    pub feasible: bool,
}

struct JointSample {
    dx2: f64,
    du2: f64,
    product: f64,
}

fn joint_samples(
    f: &CoefMap,
    g: &CoefMap,
    dim: usize,
    sampler: &SamplerSpec,
    n_pairs: usize,
    seed: u64,
    kind: u64,
) -> Result<Vec<JointSample>> {
    let samples: Vec<Result<JointSample>> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, &[tag::PROBE_PAIR, kind, i as u64]);
            for _attempt in 0..100 {
                let left = sampler.sample_lifted(&mut rng)?;
                let raw = sampler.sample_lifted(&mut rng)?;
                // Degenerate directions probe the pure-state and pure-control
                // faces of the quotient.
                let right = match i % 5 {
                    0 => LiftedSample::new(raw.cloud().clone(), left.values().to_vec())?,
                    1 => LiftedSample::new(left.cloud().clone(), raw.values().to_vec())?,
                    _ => raw,
                };
                let (x, u) = (left.cloud(), left.values());
                let (y, v) = (right.cloud(), right.values());
                let dx = paired_diff(x.points(), y.points());
                let du = paired_diff(u, v);
                let dx2 = lifted_dot(&dx, &dx, x.weights());
                let du2 = lifted_dot(&du, &du, x.weights());
                if dx2 + du2 < DEGENERATE_PAIR_TOL {
                    continue;
                }
                let view_x = MeasureView::new(x);
                let view_y = MeasureView::new(y);
                let eval_pair = |map: &CoefMap| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
                    let mut fx = vec![vec![0.0; dim]; x.len()];
                    let mut fy = vec![vec![0.0; dim]; x.len()];
                    for idx in 0..x.len() {
                        map(x.point(idx), &view_x, &u[idx], &mut fx[idx]);
                        map(y.point(idx), &view_y, &v[idx], &mut fy[idx]);
                    }
                    (fx, fy)
                };
                let (fx, fy) = eval_pair(f);
                let (gx, gy) = eval_pair(g);
                let df = paired_diff(&fx, &fy);
                let dg = paired_diff(&gx, &gy);
                let product =
                    lifted_dot(&df, &du, x.weights()) + lifted_dot(&dg, &dx, x.weights());
                return Ok(JointSample { dx2, du2, product });
            }
            Err(Error::InvalidArgument(
                "sampler keeps producing degenerate pairs".into(),
            ))
        })
        .collect();
    samples.into_iter().collect()
}

/// Fits the largest coercivity constant, then the smallest slack, such that
/// every sampled pair satisfies
/// `<dF, dU> + <dG, dX> >= alpha |dX|^2 - l |dU|^2` (direction `InX`;
/// `InW` swaps the two squared norms). Returns `alpha = 0` when no positive
/// coercivity is consistent with the samples.
pub fn fit_weak_strong(
    f: &CoefMap,
    g: &CoefMap,
    dim: usize,
    sampler: &SamplerSpec,
    n_pairs: usize,
    seed: u64,
    direction: MonotoneDirection,
) -> Result<WeakStrongFit> {
    validate_probe(dim, sampler, n_pairs)?;
    let samples = joint_samples(f, g, dim, sampler, n_pairs, seed, 4)?;
    // (a, b, c): alpha multiplies a, l relaxes along b, c is the product.
    let abc: Vec<(f64, f64, f64)> = samples
        .iter()
        .map(|s| match direction {
            MonotoneDirection::InX => (s.dx2, s.du2, s.product),
            MonotoneDirection::InW => (s.du2, s.dx2, s.product),
        })
        .collect();
    let alpha_at = |l: f64| -> f64 {
        let mut alpha = f64::INFINITY;
        for &(a, b, c) in &abc {
            if a > DEGENERATE_PAIR_TOL {
                alpha = alpha.min((c + l * b) / a);
            } else if c + l * b < -DEFAULT_PROBE_TOL {
                // Constraint with no alpha involvement is violated outright.
                alpha = f64::NEG_INFINITY;
            }
        }
        alpha
    };
    // alpha(l) is nondecreasing; samples with b = 0 cap it, so it saturates.
    let grid: Vec<f64> = (0..=64).map(|k| k as f64 * 0.125).collect();
    let alpha_max = alpha_at(*grid.last().unwrap());
    if !alpha_max.is_finite() || alpha_max <= DEFAULT_PROBE_TOL {
        return Ok(WeakStrongFit {
            alpha: 0.0,
            l: 0.0,
            direction,
            n_pairs,
            feasible: false,
        });
    }
    let target = alpha_max - 0.01 * (1.0 + alpha_max.abs());
    let mut best_l = *grid.last().unwrap();
    let mut best_alpha = alpha_max;
    for &l in &grid {
        let a = alpha_at(l);
        if a >= target {
            best_l = l;
            best_alpha = a;
            break;
        }
    }
    Ok(WeakStrongFit {
        alpha: best_alpha.max(0.0),
        l: best_l,
        direction,
        n_pairs,
        feasible: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub passed: bool,
    /// Largest observed `|value| / (c (1 + |x| + |u| + sqrt(E2)))`.
    pub worst_ratio: f64,
    pub n_samples: usize,
}

/// Checks the declared linear growth bound on sampled `(x, mu, u)` triples:
/// `|F|, |G| <= c (1 + |x| + |u| + sqrt(E2(mu)))` and
/// `|W0| <= c (1 + |x| + sqrt(E2(mu)))`.
pub fn certify_growth(
    cs: &super::CoefficientSet,
    sampler: &SamplerSpec,
    n_samples: usize,
    seed: u64,
) -> Result<GrowthReport> {
    validate_probe(cs.dim, sampler, n_samples)?;
    let c = cs.growth_constant;
    let ratios: Vec<Result<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, &[tag::PROBE_PAIR, 5, i as u64]);
            let mu = sampler.sample_cloud(&mut rng)?;
            let x = sampler.sample_values(&mut rng, 1).remove(0);
            let u = sampler.sample_values(&mut rng, 1).remove(0);
            let view = MeasureView::new(&mu);
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let mut out = vec![0.0; cs.dim];
            (cs.f)(&x, &view, &u, &mut out);
            let envelope_xu = 1.0 + norm(&x) + norm(&u) + view.sqrt_e2;
            let mut worst = norm(&out) / (c * envelope_xu);
            (cs.g)(&x, &view, &u, &mut out);
            worst = worst.max(norm(&out) / (c * envelope_xu));
            (cs.w0)(&x, &view, &mut out);
            let envelope_x = 1.0 + norm(&x) + view.sqrt_e2;
            worst = worst.max(norm(&out) / (c * envelope_x));
            Ok(worst)
        })
        .collect();
    let ratios = ratios.into_iter().collect::<Result<Vec<f64>>>()?;
    let worst_ratio = ratios.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(GrowthReport {
        passed: worst_ratio <= 1.0 + 1e-12,
        worst_ratio,
        n_samples,
    })
}

/// The interpolation envelope `max(a, a^gamma)` used to compare increments
/// across scales: linear for `a >= 1`, Holder below.
pub fn holder_norm_gamma(a: f64, gamma: f64) -> Result<f64> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "argument must be nonnegative, got {a}"
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exponent must lie in (0, 1], got {gamma}"
        )));
    }
    Ok(a.max(a.powf(gamma)))
}

fn validate_probe(dim: usize, sampler: &SamplerSpec, n: usize) -> Result<()> {
    sampler.validate()?;
    if sampler.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: sampler.dim,
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    Ok(())
}

fn eval_state_map(map: &StateMap, cloud: &EmpiricalMeasure) -> Result<Vec<Vec<f64>>> {
    let view = MeasureView::new(cloud);
    let mut out = vec![vec![0.0; cloud.dim()]; cloud.len()];
    for (i, row) in out.iter_mut().enumerate() {
        map(cloud.point(i), &view, row);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "map returned non-finite value at atom {i}"
            )));
        }
    }
    Ok(out)
}
