//! Weighted particle clouds on `R^d` and the operations the rest of the
//! crate needs on them: moments, shift pushforwards, product-space
//! marginals, exact and approximate quadratic optimal transport, and kernel
//! estimators for differential entropy and Fisher information.

mod kde;
mod transport;

pub use kde::{entropy_kde, fisher_kde, silverman_bandwidth};
pub use transport::{transport_plan, wasserstein2, W2Method, W2Result};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Coupling marginals must match the input weights within this tolerance.
pub const MARGINAL_TOL: f64 = 1e-10;

/// A finitely supported probability measure: atoms with nonnegative weights
/// summing to one. The atom order is meaningful (it is preserved by
/// serialization and used for paired couplings) but carries no probabilistic
/// content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct EmpiricalMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dim: usize,
}

/// Unvalidated wire form of [`EmpiricalMeasure`].
#[derive(Serialize, Deserialize)]
struct RawMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dim: usize,
}

impl TryFrom<RawMeasure> for EmpiricalMeasure {
    type Error = Error;
    fn try_from(raw: RawMeasure) -> Result<Self> {
        EmpiricalMeasure::new(raw.points, raw.weights)
    }
}

impl From<EmpiricalMeasure> for RawMeasure {
    fn from(m: EmpiricalMeasure) -> Self {
        RawMeasure {
            points: m.points,
            weights: m.weights,
            dim: m.dim,
        }
    }
}

impl EmpiricalMeasure {
    /// Builds a measure, validating every invariant: at least one atom, one
    /// weight per atom, finite coordinates, nonnegative finite weights
    /// summing to one within [`WEIGHT_SUM_TOL`], and a common dimension.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} atoms but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidMeasure("zero-dimensional atoms".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMeasure(format!("non-finite atom {i}")));
            }
        }
        // Compensated summation: the tolerance must test the weights, not
        // the accumulation error of a naive sum over many atoms.
        let mut sum = 0.0;
        let mut carry = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidMeasure(format!("invalid weight {w} at {i}")));
            }
            let y = w - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            points,
            weights,
            dim,
        })
    }

    /// Uniform measure on the given atoms.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let w = 1.0 / n as f64;
        let mut weights = vec![w; n];
        // Compensate the last weight so the sum is exactly 1 even when 1/n
        // is not representable.
        let partial: f64 = w * (n as f64 - 1.0);
        weights[n - 1] = 1.0 - partial;
        Self::new(points, weights)
    }

    /// Point mass at `point`.
    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least one atom
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// True when every weight equals 1/n up to tiny rounding.
    pub fn is_uniform(&self) -> bool {
        let n = self.len() as f64;
        self.weights.iter().all(|&w| (w * n - 1.0).abs() <= 1e-9)
    }

    /// q-th absolute moment `sum_i w_i |x_i|^q` with the Euclidean norm.
    /// `q = 0` returns 1 by the convention `0^0 = 1`.
    pub fn moment(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (p, &w) in self.points.iter().zip(&self.weights) {
            let norm = p.iter().map(|c| c * c).sum::<f64>().sqrt();
            acc += w * norm.powf(q);
        }
        acc
    }

    /// Weighted mean vector.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            for (mc, &pc) in m.iter_mut().zip(p) {
                *mc += w * pc;
            }
        }
        m
    }

    /// Image measure under `x -> x + theta`. Weights are unchanged.
    pub fn pushforward_shift(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: theta.len(),
            });
        }
        let points = self
            .points
            .iter()
            .map(|p| p.iter().zip(theta).map(|(a, b)| a + b).collect())
            .collect();
        Ok(Self {
            points,
            weights: self.weights.clone(),
            dim: self.dim,
        })
    }

    /// Marginal of a product-space measure on `R^d x R^d`. `first` selects
    /// the leading block of coordinates, otherwise the trailing block.
    /// Requires an even dimension.
    pub fn marginal(&self, first: bool) -> Result<Self> {
        if self.dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "marginal requires even dimension, got {}",
                self.dim
            )));
        }
        let d = self.dim / 2;
        let range = if first { 0..d } else { d..self.dim };
        let points = self
            .points
            .iter()
            .map(|p| p[range.clone()].to_vec())
            .collect();
        Ok(Self {
            points,
            weights: self.weights.clone(),
            dim: d,
        })
    }

    /// Writes `weight, x_1, ..., x_d` per row. Values round-trip exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        let mut row: Vec<String> = Vec::with_capacity(self.dim + 1);
        for (p, &wt) in self.points.iter().zip(&self.weights) {
            row.clear();
            row.push(format!("{wt}"));
            row.extend(p.iter().map(|c| format!("{c}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`Self::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::InvalidMeasure("row with fewer than 2 fields".into()));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidMeasure(format!("bad float {s:?}: {e}")))
            };
            weights.push(parse(&rec[0])?);
            points.push(
                rec.iter()
                    .skip(1)
                    .map(parse)
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Self::new(points, weights)
    }
}

/// A coupling of two measures: a joint weight matrix whose row sums equal
/// the left weights and whose column sums equal the right weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coupling {
    pub left: EmpiricalMeasure,
    pub right: EmpiricalMeasure,
    /// `plan[i][j]` is the mass moved from left atom `i` to right atom `j`.
    pub plan: Vec<Vec<f64>>,
}

impl Coupling {
    /// Checks marginal consistency within [`MARGINAL_TOL`].
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.left.len(), self.right.len());
        if self.plan.len() != n || self.plan.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidMeasure("plan shape mismatch".into()));
        }
        for (i, row) in self.plan.iter().enumerate() {
            if row.iter().any(|&v| !v.is_finite() || v < -MARGINAL_TOL) {
                return Err(Error::InvalidMeasure(format!("negative mass in row {i}")));
            }
            let s: f64 = row.iter().sum();
            if (s - self.left.weight(i)).abs() > MARGINAL_TOL {
                return Err(Error::InvalidMeasure(format!(
                    "row {i} sums to {s}, expected {}",
                    self.left.weight(i)
                )));
            }
        }
        for j in 0..m {
            let s: f64 = self.plan.iter().map(|r| r[j]).sum();
            if (s - self.right.weight(j)).abs() > MARGINAL_TOL {
                return Err(Error::InvalidMeasure(format!(
                    "column {j} sums to {s}, expected {}",
                    self.right.weight(j)
                )));
            }
        }
        Ok(())
    }

    /// Transport cost `sum_ij plan[i][j] |x_i - y_j|^2`.
    pub fn quadratic_cost(&self) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.plan.iter().enumerate() {
            let xi = self.left.point(i);
            for (j, &mass) in row.iter().enumerate() {
                if mass > 0.0 {
                    acc += mass * squared_distance(xi, self.right.point(j));
                }
            }
        }
        acc
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
