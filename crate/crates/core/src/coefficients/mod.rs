//! Coefficient triples `(F, G, W0)` describing one control problem:
//! a state drift direction `F(x, mu, u)`, a running driver `G(x, mu, u)`,
//! and a terminal condition `W0(x, mu)`, together with declared structural
//! metadata (growth constant, monotonicity regime, Holder exponent).
//!
//! Declarations are cheap and unverified; [`probes`] contains the sampling
//! machinery that certifies them numerically.

pub mod probes;

pub use probes::{
    certify_growth, fit_weak_strong, holder_norm_gamma, probe_joint_monotone,
    probe_l2_monotone, probe_terminal_coercivity, GaussianComponent, LiftedSample,
    MonotoneDirection, MonotonicityReport, SamplerSpec,
};

use crate::error::{Error, Result};
use crate::field::{CoefMap, StateMap};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Declared monotonicity structure of a coefficient pair `(F, G)`.
///
/// The quadratic form tested on lifted pairs is
/// `<dF, dU> + <dG, dX>` and the regimes assert lower bounds of the shape
/// `alpha |dX|^2 - l |dU|^2` (in-X variants) or with the roles of `dX` and
/// `dU` swapped (in-W variants). `Strong*` variants have no slack term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Regime {
    JointMonotone,
    WeakStrongInX { alpha: f64, l: f64 },
    StrongInX { alpha: f64 },
    WeakStrongInW { alpha: f64, l: f64 },
    StrongInW { alpha: f64 },
}

impl Regime {
    pub fn validate(&self) -> Result<()> {
        let (alpha, l) = match *self {
            Regime::JointMonotone => return Ok(()),
            Regime::WeakStrongInX { alpha, l } | Regime::WeakStrongInW { alpha, l } => (alpha, l),
            Regime::StrongInX { alpha } | Regime::StrongInW { alpha } => (alpha, 0.0),
        };
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regime coercivity must be positive, got {alpha}"
            )));
        }
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "regime slack must be nonnegative, got {l}"
            )));
        }
        Ok(())
    }
}

/// One control problem: coefficients plus declared analytic metadata.
#[derive(Clone)]
pub struct CoefficientSet {
    pub dim: usize,
    pub f: Arc<CoefMap>,
    pub g: Arc<CoefMap>,
    pub w0: Arc<StateMap>,
    /// Linear growth constant: all three maps are declared bounded by
    /// `c (1 + |x| + |u| + sqrt(E2(mu)))` componentwise in norm.
    pub growth_constant: f64,
    pub regime: Regime,
    /// Holder exponent of the terminal condition, in `(0, 1]`.
    pub gamma: f64,
    /// Terminal coercivity constant when certified separately.
    pub a0: Option<f64>,
}

impl std::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("growth_constant", &self.growth_constant)
            .field("regime", &self.regime)
            .field("gamma", &self.gamma)
            .field("a0", &self.a0)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(self.growth_constant.is_finite() && self.growth_constant > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "growth constant must be positive, got {}",
                self.growth_constant
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "holder exponent must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        self.regime.validate()
    }
}

/// Named coefficient families constructible from a flat parameter table.
/// Names and parameters round-trip through configuration files, which is
/// how solved fields are re-attached to their terminal condition on load.
pub struct FamilyRegistry {
    #[allow(clippy::type_complexity)]
    builders: BTreeMap<
        String,
        Arc<dyn Fn(&BTreeMap<String, f64>, usize) -> Result<CoefficientSet> + Send + Sync>,
    >,
}

impl FamilyRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self {
            builders: BTreeMap::new(),
        };
        r.register("lq", |params, dim| build_lq(params, dim));
        r.register("zero", |params, dim| build_zero(params, dim));
        r.register("cubic_clipped", |params, dim| build_cubic(params, dim));
        r.register("holder", |params, dim| build_holder(params, dim));
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        builder: impl Fn(&BTreeMap<String, f64>, usize) -> Result<CoefficientSet> + Send + Sync + 'static,
    ) {
        self.builders.insert(name.to_string(), Arc::new(builder));
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(|s| s.as_str()).collect()
    }

    pub fn build(
        &self,
        name: &str,
        params: &BTreeMap<String, f64>,
        dim: usize,
    ) -> Result<CoefficientSet> {
        let b = self
            .builders
            .get(name)
            .ok_or_else(|| Error::UnknownFamily(name.to_string()))?;
        let cs = b(params, dim)?;
        cs.validate()?;
        Ok(cs)
    }
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Linear-quadratic family: `F = u`, `G = q x + q_bar mean`,
/// `W0 = p x + p_bar mean`.
fn build_lq(params: &BTreeMap<String, f64>, dim: usize) -> Result<CoefficientSet> {
    let p = param(params, "p", 1.0);
    let p_bar = param(params, "p_bar", 0.0);
    let q = param(params, "q", 1.0);
    let q_bar = param(params, "q_bar", 0.0);
    let f: Arc<CoefMap> = Arc::new(|_x, _mu, u, out| out.copy_from_slice(u));
    let g: Arc<CoefMap> = Arc::new(move |x, mu, _u, out| {
        for ((o, &xc), &mc) in out.iter_mut().zip(x).zip(&mu.mean) {
            *o = q * xc + q_bar * mc;
        }
    });
    let w0: Arc<StateMap> = Arc::new(move |x, mu, out| {
        for ((o, &xc), &mc) in out.iter_mut().zip(x).zip(&mu.mean) {
            *o = p * xc + p_bar * mc;
        }
    });
    // Monotone iff both quadratic forms r I + r_bar (1 1^T)/n-style are
    // nonnegative on lifted pairs: r >= 0 and r + r_bar >= 0.
    let monotone = p >= 0.0 && p + p_bar >= 0.0 && q >= 0.0 && q + q_bar >= 0.0;
    let alpha = q.min(q + q_bar);
    let regime = if monotone && alpha > 0.0 {
        Regime::WeakStrongInX { alpha, l: 0.0 }
    } else {
        Regime::JointMonotone
    };
    Ok(CoefficientSet {
        dim,
        f,
        g,
        w0,
        growth_constant: (1.0f64)
            .max(q.abs() + q_bar.abs())
            .max(p.abs() + p_bar.abs()),
        regime,
        gamma: 1.0,
        a0: if monotone { Some(p.min(p + p_bar)) } else { None },
    })
}

fn build_zero(_params: &BTreeMap<String, f64>, dim: usize) -> Result<CoefficientSet> {
    let zero: Arc<CoefMap> = Arc::new(|_x, _mu, _u, out| out.fill(0.0));
    let w0: Arc<StateMap> = Arc::new(|_x, _mu, out| out.fill(0.0));
    Ok(CoefficientSet {
        dim,
        f: zero.clone(),
        g: zero,
        w0,
        growth_constant: 1.0,
        regime: Regime::JointMonotone,
        gamma: 1.0,
        a0: Some(0.0),
    })
}

/// Componentwise clipped cubic terminal map: `x^3` inside `[-clip, clip]`,
/// continued linearly with the boundary slope outside. `F = u`, `G = q x`.
fn build_cubic(params: &BTreeMap<String, f64>, dim: usize) -> Result<CoefficientSet> {
    let clip = param(params, "clip", 10.0);
    let q = param(params, "q", 1.0);
    if clip <= 0.0 {
        return Err(Error::InvalidArgument("clip must be positive".into()));
    }
    let slope = 3.0 * clip * clip;
    let cube = move |v: f64| -> f64 {
        if v.abs() <= clip {
            v * v * v
        } else {
            v.signum() * (clip * clip * clip + slope * (v.abs() - clip))
        }
    };
    let f: Arc<CoefMap> = Arc::new(|_x, _mu, u, out| out.copy_from_slice(u));
    let g: Arc<CoefMap> = Arc::new(move |x, _mu, _u, out| {
        for (o, &xc) in out.iter_mut().zip(x) {
            *o = q * xc;
        }
    });
    let w0: Arc<StateMap> = Arc::new(move |x, _mu, out| {
        for (o, &xc) in out.iter_mut().zip(x) {
            *o = cube(xc);
        }
    });
    Ok(CoefficientSet {
        dim,
        f,
        g,
        w0,
        // The boundary slope dominates both the Lipschitz and the linear
        // growth behavior of the clipped cubic.
        growth_constant: slope.max(q.abs()).max(1.0),
        regime: Regime::WeakStrongInX {
            alpha: q.max(f64::MIN_POSITIVE),
            l: 0.0,
        },
        gamma: 1.0,
        a0: Some(0.0),
    })
}

/// Rough terminal map with exact Holder exponent `gamma`:
/// componentwise `sign(x) |x|^gamma`. `F = u`, `G = q x`.
fn build_holder(params: &BTreeMap<String, f64>, dim: usize) -> Result<CoefficientSet> {
    let gamma = param(params, "gamma", 0.5);
    let q = param(params, "q", 1.0);
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holder exponent must lie in (0, 1], got {gamma}"
        )));
    }
    let f: Arc<CoefMap> = Arc::new(|_x, _mu, u, out| out.copy_from_slice(u));
    let g: Arc<CoefMap> = Arc::new(move |x, _mu, _u, out| {
        for (o, &xc) in out.iter_mut().zip(x) {
            *o = q * xc;
        }
    });
    let w0: Arc<StateMap> = Arc::new(move |x, _mu, out| {
        for (o, &xc) in out.iter_mut().zip(x) {
            *o = xc.signum() * xc.abs().powf(gamma);
        }
    });
    Ok(CoefficientSet {
        dim,
        f,
        g,
        w0,
        growth_constant: q.abs().max(1.0),
        regime: Regime::StrongInX {
            alpha: q.max(f64::MIN_POSITIVE),
        },
        gamma,
        a0: Some(0.0),
    })
}
