//! Closed-form linear-quadratic ground truth in one dimension.
//!
//! For coefficients `F = u`, `G = q x + q_bar mean`, `W0 = p x + p_bar mean`
//! the decoupling field stays affine, `W(t, x, mu) = a(t) x + b(t) mean(mu)`,
//! and the coefficient paths solve
//!
//! ```text
//! a' = q - a^2,              a(0) = p,
//! b' = q_bar - 2 a b - b^2,  b(0) = p_bar.
//! ```
//!
//! Because the field is affine in `x` its second spatial derivative
//! vanishes, and its measure derivative is constant, so the diffusion level
//! never enters the paths: the same oracle covers every `sigma_x`.
//! [`pde_residual`] re-validates this derivation numerically with nothing
//! but finite differences of field evaluations.

use crate::error::{Error, Result};
use crate::field::{Field, FieldSlice};
use crate::measures::EmpiricalMeasure;
use serde::{Deserialize, Serialize};

/// Magnitude treated as a finite-time blow-up of the coefficient ODEs.
pub const BLOWUP_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub p: f64,
    pub p_bar: f64,
    pub q: f64,
    pub q_bar: f64,
    pub horizon: f64,
}

impl LqParams {
    /// Both quadratic forms `r |dX|^2 + r_bar |E dX|^2` are nonnegative on
    /// lifted increments exactly when `r >= 0` and `r + r_bar >= 0`; the
    /// pair `(F, G)` and the terminal map are monotone exactly when this
    /// holds for `(q, q_bar)` and `(p, p_bar)`.
    pub fn monotone(&self) -> bool {
        self.p >= 0.0
            && self.p + self.p_bar >= 0.0
            && self.q >= 0.0
            && self.q + self.q_bar >= 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.p, self.p_bar, self.q, self.q_bar, self.horizon] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument("non-finite parameter".into()));
            }
        }
        if self.horizon <= 0.0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficient paths on a uniform grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiccatiPath {
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl RiccatiPath {
    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Piecewise-linear evaluation, clamped to the grid range.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let t = t.clamp(self.times[0], *self.times.last().unwrap());
        let dt = self.dt();
        let pos = (t - self.times[0]) / dt;
        let k = (pos.floor() as usize).min(self.times.len() - 2);
        let theta = (pos - k as f64).clamp(0.0, 1.0);
        (
            (1.0 - theta) * self.a[k] + theta * self.a[k + 1],
            (1.0 - theta) * self.b[k] + theta * self.b[k + 1],
        )
    }
}

/// Checks that `dt` tiles `[0, horizon]` and returns the step count.
pub fn grid_steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let k = (horizon / dt).round();
    if k < 1.0 || (k * dt - horizon).abs() > 1e-12 * horizon.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} does not divide horizon = {horizon}"
        )));
    }
    Ok(k as usize)
}

/// Fourth-order Runge-Kutta integration of the coefficient ODEs. Fails with
/// [`Error::BlowUp`] when a path magnitude exceeds [`BLOWUP_LIMIT`].
pub fn riccati_solve(params: &LqParams, dt: f64) -> Result<RiccatiPath> {
    params.validate()?;
    let steps = grid_steps(params.horizon, dt)?;
    let fa = |a: f64| params.q - a * a;
    let fb = |a: f64, b: f64| params.q_bar - 2.0 * a * b - b * b;
    let mut a = params.p;
    let mut b = params.p_bar;
    let mut path = RiccatiPath {
        times: Vec::with_capacity(steps + 1),
        a: Vec::with_capacity(steps + 1),
        b: Vec::with_capacity(steps + 1),
    };
    path.times.push(0.0);
    path.a.push(a);
    path.b.push(b);
    for k in 0..steps {
        let (ka1, kb1) = (fa(a), fb(a, b));
        let (ka2, kb2) = (
            fa(a + 0.5 * dt * ka1),
            fb(a + 0.5 * dt * ka1, b + 0.5 * dt * kb1),
        );
        let (ka3, kb3) = (
            fa(a + 0.5 * dt * ka2),
            fb(a + 0.5 * dt * ka2, b + 0.5 * dt * kb2),
        );
        let (ka4, kb4) = (fa(a + dt * ka3), fb(a + dt * ka3, b + dt * kb3));
        a += dt / 6.0 * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4);
        b += dt / 6.0 * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4);
        let t = (k + 1) as f64 * dt;
        if !a.is_finite() || !b.is_finite() || a.abs() > BLOWUP_LIMIT || b.abs() > BLOWUP_LIMIT {
            return Err(Error::BlowUp {
                time: t,
                limit: BLOWUP_LIMIT,
            });
        }
        path.times.push(t);
        path.a.push(a);
        path.b.push(b);
    }
    Ok(path)
}

/// The affine reference field `W(t, x, mu) = a(t) x + b(t) mean(mu)`.
#[derive(Debug, Clone)]
pub struct LqOracleField {
    pub params: LqParams,
    pub path: RiccatiPath,
}

/// Solves the coefficient ODEs and wraps them as a field. One-dimensional.
pub fn oracle_field(params: &LqParams, dt: f64) -> Result<LqOracleField> {
    let path = riccati_solve(params, dt)?;
    Ok(LqOracleField {
        params: *params,
        path,
    })
}

struct LqSlice {
    a: f64,
    b_mean: f64,
}

impl FieldSlice for LqSlice {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0] + self.b_mean;
    }
}

impl Field for LqOracleField {
    fn dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        self.params.horizon
    }
    fn slice<'a>(&'a self, t: f64, mu: &'a EmpiricalMeasure) -> Box<dyn FieldSlice + 'a> {
        let (a, b) = self.path.eval(t);
        let mean = mu.mean()[0];
        Box::new(LqSlice { a, b_mean: b * mean })
    }
}

/// One closed-form application of the value-update map: given input
/// coefficient paths `(a_in, b_in)` on the grid, returns the output paths
/// obtained by driving a tagged state and the population mean with the
/// input field, then collecting terminal and running rewards.
///
/// For each target time `tau` the tagged state and mean are affine in the
/// initial data, with factors solving
///
/// ```text
/// Phi' = -a_in(tau - s) Phi                     Phi(0) = 1
/// M'   = -(a_in + b_in)(tau - s) M              M(0) = 1
/// xi'  = -a_in(tau - s) xi - b_in(tau - s) M    xi(0) = 0
/// ```
///
/// and the output coefficients are
/// `a_out(tau) = p Phi(tau) + q int Phi` and
/// `b_out(tau) = p xi(tau) + p_bar M(tau) + int (q xi + q_bar M)`.
pub fn riccati_picard_sweep(
    params: &LqParams,
    input: &RiccatiPath,
    dt: f64,
) -> Result<RiccatiPath> {
    params.validate()?;
    let steps = grid_steps(params.horizon, dt)?;
    let mut out = RiccatiPath {
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        a: Vec::with_capacity(steps + 1),
        b: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps {
        let tau = k as f64 * dt;
        // State vector y = (Phi, M, xi, int Phi, int xi, int M).
        let rhs = |s: f64, y: &[f64; 6]| -> [f64; 6] {
            let (a_in, b_in) = input.eval(tau - s);
            [
                -a_in * y[0],
                -(a_in + b_in) * y[1],
                -a_in * y[2] - b_in * y[1],
                y[0],
                y[2],
                y[1],
            ]
        };
        let mut y = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let mut s = 0.0;
        for _ in 0..k {
            let k1 = rhs(s, &y);
            let mut y2 = y;
            add_scaled(&mut y2, &k1, 0.5 * dt);
            let k2 = rhs(s + 0.5 * dt, &y2);
            let mut y3 = y;
            add_scaled(&mut y3, &k2, 0.5 * dt);
            let k3 = rhs(s + 0.5 * dt, &y3);
            let mut y4 = y;
            add_scaled(&mut y4, &k3, dt);
            let k4 = rhs(s + dt, &y4);
            for i in 0..6 {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            s += dt;
        }
        let [phi, m, xi, int_phi, int_xi, int_m] = y;
        out.a.push(params.p * phi + params.q * int_phi);
        out.b
            .push(params.p * xi + params.p_bar * m + params.q * int_xi + params.q_bar * int_m);
    }
    Ok(out)
}

fn add_scaled(y: &mut [f64; 6], k: &[f64; 6], h: f64) {
    for i in 0..6 {
        y[i] += h * k[i];
    }
}

/// Finite-difference residual of the evolution equation satisfied by a
/// field under the dynamics `dX = -F ds + sqrt(2 sigma_x) dB`:
///
/// ```text
/// dW/dt + F dW/dx - sigma_x d2W/dx2
///       + int F(y, mu, W(t, y, mu)) DmW(t, x, mu)(y) mu(dy) - G = 0
/// ```
///
/// All terms come from field evaluations only: spatial derivatives by
/// central differences, the time derivative by differencing adjacent grid
/// nodes (evaluated at segment midpoints), and the measure derivative by
/// shifting one atom at a time. Returns the largest absolute residual over
/// the product grid.
pub fn pde_residual(
    field: &dyn Field,
    params: &LqParams,
    sigma_x: f64,
    probe_times: &[f64],
    probe_states: &[f64],
    probe_means: &[f64],
) -> Result<f64> {
    if field.dim() != 1 {
        return Err(Error::InvalidArgument(
            "residual probe is one-dimensional".into(),
        ));
    }
    let h = 1e-4;
    let dt_fd = 5e-4;
    let mut worst = 0.0f64;
    for &mean in probe_means {
        // A two-atom cloud with the requested mean; spread keeps the atom
        // shift well-conditioned.
        let cloud = EmpiricalMeasure::new(
            vec![vec![mean - 0.5], vec![mean + 0.5]],
            vec![0.5, 0.5],
        )?;
        for &t in probe_times {
            if t - dt_fd < 0.0 || t + dt_fd > field.horizon() {
                continue;
            }
            for &x in probe_states {
                let w = |tt: f64, xx: f64, m: &EmpiricalMeasure| field.eval(tt, &[xx], m)[0];
                let w0 = w(t, x, &cloud);
                let dw_dt = (w(t + dt_fd, x, &cloud) - w(t - dt_fd, x, &cloud)) / (2.0 * dt_fd);
                let dw_dx = (w(t, x + h, &cloud) - w(t, x - h, &cloud)) / (2.0 * h);
                let d2w_dx2 =
                    (w(t, x + h, &cloud) - 2.0 * w0 + w(t, x - h, &cloud)) / (h * h);
                // Flat measure derivative at each atom: shift that atom.
                let mut transport = 0.0;
                for j in 0..cloud.len() {
                    let shift = |delta: f64| -> EmpiricalMeasure {
                        let mut pts: Vec<Vec<f64>> = cloud.points().to_vec();
                        pts[j][0] += delta;
                        EmpiricalMeasure::new(pts, cloud.weights().to_vec()).expect("valid cloud")
                    };
                    let dm = (w(t, x, &shift(h)) - w(t, x, &shift(-h)))
                        / (2.0 * h * cloud.weight(j));
                    let y = cloud.point(j)[0];
                    // F = u evaluated along the field at the atom.
                    let fy = w(t, y, &cloud);
                    transport += cloud.weight(j) * fy * dm;
                }
                let f_here = w0;
                let g_here = params.q * x + params.q_bar * mean;
                let residual =
                    dw_dt + f_here * dw_dx - sigma_x * d2w_dx2 + transport - g_here;
                worst = worst.max(residual.abs());
            }
        }
    }
    Ok(worst)
}
