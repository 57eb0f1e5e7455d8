//! Quadratic optimal transport between particle clouds.
//!
//! Three tiers, chosen automatically:
//! * dimension 1: exact quantile coupling for arbitrary weights;
//! * equal-size uniform clouds with at most [`ASSIGNMENT_LIMIT`] atoms:
//!   exact optimal assignment by shortest augmenting paths;
//! * everything else: entropic regularization (Sinkhorn), flagged
//!   approximate in the result.
//!
//! Exact tiers accumulate the final cost as `sum_i c(i, match(i))` over the
//! left atom index in ascending order, which keeps the value bit-identical
//! to a brute-force enumeration of assignments.

use super::{squared_distance, Coupling, EmpiricalMeasure};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Largest equal-size uniform problem solved by exact assignment.
pub const ASSIGNMENT_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum W2Method {
    /// Exact one-dimensional quantile coupling.
    Sorted1d,
    /// Exact optimal assignment between equal-size uniform clouds.
    Assignment,
    /// Entropic approximation; `exact` is false.
    Sinkhorn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Result {
    pub distance: f64,
    pub exact: bool,
    pub method: W2Method,
}

fn pick_method(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> W2Method {
    if mu.dim() == 1 {
        W2Method::Sorted1d
    } else if mu.len() == nu.len()
        && mu.len() <= ASSIGNMENT_LIMIT
        && mu.is_uniform()
        && nu.is_uniform()
    {
        W2Method::Assignment
    } else {
        W2Method::Sinkhorn
    }
}

fn check_dims(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

/// Quadratic Wasserstein distance with automatic tier selection.
pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<W2Result> {
    let method = pick_method(mu, nu);
    wasserstein2_with_method(mu, nu, method)
}

/// Quadratic Wasserstein distance with an explicitly forced tier. The
/// assignment tier requires equal-size uniform clouds.
pub fn wasserstein2_with_method(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    method: W2Method,
) -> Result<W2Result> {
    check_dims(mu, nu)?;
    let (cost2, exact) = match method {
        W2Method::Sorted1d => {
            if mu.dim() != 1 {
                return Err(Error::InvalidArgument(
                    "sorted tier requires dimension 1".into(),
                ));
            }
            (sorted_cost(mu, nu), true)
        }
        W2Method::Assignment => {
            require_assignment_shape(mu, nu)?;
            let cost = cost_matrix(mu, nu);
            let perm = solve_assignment(&cost);
            let w = 1.0 / mu.len() as f64;
            let mut acc = 0.0;
            for (i, &j) in perm.iter().enumerate() {
                acc += w * cost[i][j];
            }
            (acc, true)
        }
        W2Method::Sinkhorn => (sinkhorn(mu, nu)?.0, false),
    };
    Ok(W2Result {
        distance: cost2.max(0.0).sqrt(),
        exact,
        method,
    })
}

/// An optimal (or, in the Sinkhorn tier, near-optimal) coupling realizing
/// the transport cost. Marginals satisfy the coupling tolerance.
pub fn transport_plan(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<Coupling> {
    check_dims(mu, nu)?;
    let plan = match pick_method(mu, nu) {
        W2Method::Sorted1d => sorted_plan(mu, nu),
        W2Method::Assignment => {
            require_assignment_shape(mu, nu)?;
            let cost = cost_matrix(mu, nu);
            let perm = solve_assignment(&cost);
            let mut plan = vec![vec![0.0; nu.len()]; mu.len()];
            for (i, &j) in perm.iter().enumerate() {
                plan[i][j] = mu.weight(i);
            }
            plan
        }
        W2Method::Sinkhorn => sinkhorn(mu, nu)?.1,
    };
    let coupling = Coupling {
        left: mu.clone(),
        right: nu.clone(),
        plan,
    };
    coupling.validate()?;
    Ok(coupling)
}

fn require_assignment_shape(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<()> {
    if mu.len() != nu.len() || !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::InvalidArgument(
            "assignment tier requires equal-size uniform clouds".into(),
        ));
    }
    Ok(())
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Vec<Vec<f64>> {
    mu.points()
        .iter()
        .map(|x| nu.points().iter().map(|y| squared_distance(x, y)).collect())
        .collect()
}

fn sorted_indices_1d(m: &EmpiricalMeasure) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m.len()).collect();
    idx.sort_by(|&a, &b| m.point(a)[0].total_cmp(&m.point(b)[0]));
    idx
}

/// Monotone rearrangement in one dimension. For equal-size uniform clouds
/// the pairing is a permutation and the cost is summed over the original
/// left index in ascending order; otherwise mass is merged quantile by
/// quantile.
fn sorted_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    if mu.len() == nu.len() && mu.is_uniform() && nu.is_uniform() {
        let ia = sorted_indices_1d(mu);
        let ib = sorted_indices_1d(nu);
        let mut matched = vec![0usize; mu.len()];
        for (a, b) in ia.iter().zip(&ib) {
            matched[*a] = *b;
        }
        let w = 1.0 / mu.len() as f64;
        let mut acc = 0.0;
        for (i, &j) in matched.iter().enumerate() {
            acc += w * squared_distance(mu.point(i), nu.point(j));
        }
        return acc;
    }
    let mut acc = 0.0;
    merge_quantiles(mu, nu, |i, j, mass| {
        acc += mass * squared_distance(mu.point(i), nu.point(j));
    });
    acc
}

fn sorted_plan(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Vec<Vec<f64>> {
    let mut plan = vec![vec![0.0; nu.len()]; mu.len()];
    merge_quantiles(mu, nu, |i, j, mass| plan[i][j] += mass);
    plan
}

fn merge_quantiles(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    mut visit: impl FnMut(usize, usize, f64),
) {
    let ia = sorted_indices_1d(mu);
    let ib = sorted_indices_1d(nu);
    let (mut a, mut b) = (0usize, 0usize);
    let mut rem_a = mu.weight(ia[0]);
    let mut rem_b = nu.weight(ib[0]);
    loop {
        let mass = rem_a.min(rem_b);
        if mass > 0.0 {
            visit(ia[a], ib[b], mass);
        }
        rem_a -= mass;
        rem_b -= mass;
        // Advance whichever side is exhausted; ties advance both.
        let adv_a = rem_a <= 0.0 && a + 1 < ia.len();
        let adv_b = rem_b <= 0.0 && b + 1 < ib.len();
        if !adv_a && !adv_b {
            // Flush any residual mass caused by rounding onto the last pair.
            let residual = rem_a.max(rem_b);
            if residual > 0.0 {
                visit(ia[a], ib[b], residual);
            }
            break;
        }
        if adv_a {
            a += 1;
            rem_a = mu.weight(ia[a]);
        }
        if adv_b {
            b += 1;
            rem_b = nu.weight(ib[b]);
        }
    }
}

/// Minimum-cost perfect matching on a square float cost matrix via shortest
/// augmenting paths with dual potentials. Returns `perm` with row `i`
/// matched to column `perm[i]`.
pub(crate) fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // Column n is a virtual source; p[j] = row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![n; n + 1];
    let mut way = vec![n; n + 1];
    for i in 0..n {
        p[n] = i;
        let mut j0 = n;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let cur = cost[i0][j] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == n {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 0..n {
        perm[p[j]] = j;
    }
    perm
}

/// Log-domain Sinkhorn iteration. Returns the (regularized) quadratic cost
/// and the dense plan. Approximate by construction.
fn sinkhorn(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(f64, Vec<Vec<f64>>)> {
    let (n, m) = (mu.len(), nu.len());
    let cost = cost_matrix(mu, nu);
    let max_c = cost
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &b| a.max(b));
    if max_c == 0.0 {
        // Identical supports: the independent coupling is optimal at cost 0.
        let plan = (0..n)
            .map(|i| (0..m).map(|j| mu.weight(i) * nu.weight(j)).collect())
            .collect();
        return Ok((0.0, plan));
    }
    let eps = 5e-3 * max_c;
    let log_a: Vec<f64> = mu.weights().iter().map(|&w| w.ln()).collect();
    let log_b: Vec<f64> = nu.weights().iter().map(|&w| w.ln()).collect();
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let lse = |terms: &mut dyn Iterator<Item = f64>| -> f64 {
        let vals: Vec<f64> = terms.collect();
        let hi = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if hi == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        hi + vals.iter().map(|&t| (t - hi).exp()).sum::<f64>().ln()
    };
    let max_iter = 2000;
    let mut err = f64::INFINITY;
    for _ in 0..max_iter {
        for i in 0..n {
            f[i] = if mu.weight(i) == 0.0 {
                f64::NEG_INFINITY
            } else {
                eps * log_a[i] - eps * lse(&mut (0..m).map(|j| (g[j] - cost[i][j]) / eps))
            };
        }
        for j in 0..m {
            g[j] = if nu.weight(j) == 0.0 {
                f64::NEG_INFINITY
            } else {
                eps * log_b[j] - eps * lse(&mut (0..n).map(|i| (f[i] - cost[i][j]) / eps))
            };
        }
        // Row constraints hold exactly after the f-update; check columns.
        err = 0.0;
        for j in 0..m {
            let col: f64 = (0..n)
                .map(|i| plan_entry(f[i], g[j], cost[i][j], eps))
                .sum();
            err = err.max((col - nu.weight(j)).abs());
        }
        if err < 1e-12 {
            break;
        }
    }
    if !err.is_finite() {
        return Err(Error::NoConvergence {
            iterations: max_iter,
            residual: err,
        });
    }
    let mut plan = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            plan[i][j] = plan_entry(f[i], g[j], cost[i][j], eps);
        }
    }
    round_to_polytope(&mut plan, mu.weights(), nu.weights());
    let mut total = 0.0;
    for (i, row) in plan.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            total += p * cost[i][j];
        }
    }
    Ok((total, plan))
}

/// Projects an approximate plan onto the transport polytope: rows and
/// columns are scaled down to their targets and the missing mass is added
/// back as a rank-one outer product of the marginal deficits. Marginals then
/// match to float rounding.
fn round_to_polytope(plan: &mut [Vec<f64>], a: &[f64], b: &[f64]) {
    let (n, m) = (a.len(), b.len());
    for i in 0..n {
        let s: f64 = plan[i].iter().sum();
        if s > a[i] && s > 0.0 {
            let scale = a[i] / s;
            plan[i].iter_mut().for_each(|p| *p *= scale);
        }
    }
    for j in 0..m {
        let s: f64 = plan.iter().map(|r| r[j]).sum();
        if s > b[j] && s > 0.0 {
            let scale = b[j] / s;
            plan.iter_mut().for_each(|r| r[j] *= scale);
        }
    }
    let def_a: Vec<f64> = (0..n)
        .map(|i| (a[i] - plan[i].iter().sum::<f64>()).max(0.0))
        .collect();
    let def_b: Vec<f64> = (0..m)
        .map(|j| (b[j] - plan.iter().map(|r| r[j]).sum::<f64>()).max(0.0))
        .collect();
    let total: f64 = def_a.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            if def_a[i] == 0.0 {
                continue;
            }
            for j in 0..m {
                plan[i][j] += def_a[i] * def_b[j] / total;
            }
        }
    }
}

fn plan_entry(f: f64, g: f64, c: f64, eps: f64) -> f64 {
    let e = (f + g - c) / eps;
    if e == f64::NEG_INFINITY {
        0.0
    } else {
        e.exp()
    }
}
