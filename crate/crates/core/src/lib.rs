//! Particle-based machinery for mean-field control problems.
//!
//! The crate revolves around one object: a time-indexed decoupling field
//! `W(t, x, mu)` mapping a horizon-to-go, a state, and an empirical measure to
//! a control value. Everything else supports building, regularizing, probing,
//! or validating such fields:
//!
//! * [`measures`]: weighted particle clouds with exact optimal transport in
//!   low dimension and kernel estimators for entropy and Fisher information.
//! * [`coefficients`]: drift/driver/terminal coefficient triples together
//!   with sampling probes that certify monotonicity and growth numerically.
//! * [`yosida`]: measure-coupled resolvent regularization for rough
//!   coefficients, with Lipschitz and growth certificates.
//! * [`lq`]: a closed-form linear-quadratic solution used as ground truth.
//! * [`dynamics`]: Euler-Maruyama particle systems, with and without a
//!   common noise channel.
//! * [`solver`]: the fixed-point iteration producing tabulated decoupling
//!   fields, plus forward/backward consistency and stability harnesses.
//! * [`diagnostics`]: monotonicity-propagation and entropy-penalized
//!   functionals evaluated on solved fields.
//!
//! All randomness flows through [`rng`], which derives one independent
//! counter-based stream per logical work item. Results are bitwise
//! reproducible for a fixed seed regardless of thread count.

pub mod coefficients;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod io;
pub mod lq;
pub mod measures;
pub mod rng;
pub mod solver;
pub mod yosida;

pub use error::{Error, Result};
