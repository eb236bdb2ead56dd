//! Fractional relaxation of the liquid-welfare allocation problem and the
//! dense-tableau simplex that solves it.
//!
//! The program maximizes sum_{i,j} v_ij * z_ij subject to per-bidder budget
//! rows (sum_j v_ij z_ij <= B_i), unit item supply (sum_i z_ij <= 1) and
//! z >= 0. All constraints are `<=` with nonnegative right-hand sides, so the
//! slack basis is feasible and a primal simplex with Bland's rule terminates
//! without a phase-one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameInstance, Valuation};

const PIVOT_TOL: f64 = 1e-9;

/// An optimal fractional allocation `y[i][j]` with its objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlpSolution {
    pub y: Vec<Vec<f64>>,
    pub objective: f64,
}

impl LlpSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("LLP solution serializes")
    }
}

/// Solves the liquid linear program for an additive instance.
pub fn solve_llp(g: &GameInstance) -> Result<LlpSolution> {
    let n = g.num_bidders();
    let m = g.num_items;
    let mut values = Vec::with_capacity(n);
    for (i, bidder) in g.bidders.iter().enumerate() {
        match &bidder.valuation {
            Valuation::Additive { values: v } => values.push(v.clone()),
            Valuation::Xos { .. } => {
                return Err(Error::UnsupportedValuation(format!(
                    "LLP requires additive valuations; bidder {i} is XOS"
                )))
            }
        }
    }

    let vars = n * m;
    let rows = n + m;
    let mut objective = vec![0.0; vars];
    let mut a = vec![vec![0.0; vars]; rows];
    let mut b = vec![0.0; rows];
    for i in 0..n {
        for j in 0..m {
            objective[i * m + j] = values[i][j];
            a[i][i * m + j] = values[i][j];
        }
        b[i] = g.bidders[i].budget;
    }
    for j in 0..m {
        for i in 0..n {
            a[n + j][i * m + j] = 1.0;
        }
        b[n + j] = 1.0;
    }

    let solution = simplex_max(&objective, &a, &b)?;
    let mut y = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            y[i][j] = solution.x[i * m + j].clamp(0.0, 1.0);
        }
    }
    Ok(LlpSolution { y, objective: solution.objective })
}

struct SimplexResult {
    x: Vec<f64>,
    objective: f64,
}

/// Maximizes `c.x` subject to `A x <= b`, `x >= 0` with `b >= 0`, using a
/// dense tableau and Bland's anti-cycling rule.
fn simplex_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<SimplexResult> {
    let vars = c.len();
    let rows = a.len();
    debug_assert!(b.iter().all(|&v| v >= -PIVOT_TOL), "simplex needs b >= 0");
    let cols = vars + rows + 1; // structural + slack + rhs
    let mut t = vec![vec![0.0; cols]; rows + 1];
    for (r, row) in a.iter().enumerate() {
        t[r][..vars].copy_from_slice(row);
        t[r][vars + r] = 1.0;
        t[r][cols - 1] = b[r].max(0.0);
    }
    for (j, &cj) in c.iter().enumerate() {
        t[rows][j] = -cj;
    }
    let mut basis: Vec<usize> = (vars..vars + rows).collect();

    // Bland: entering variable = lowest index with a negative reduced cost
    while let Some(pivot_col) = (0..vars + rows).find(|&j| t[rows][j] < -PIVOT_TOL) {
        // ratio test; ties again to the lowest basis variable index
        let mut pivot_row: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..rows {
            if t[r][pivot_col] > PIVOT_TOL {
                let ratio = t[r][cols - 1] / t[r][pivot_col];
                let better = ratio < best_ratio - PIVOT_TOL
                    || ((ratio - best_ratio).abs() <= PIVOT_TOL
                        && pivot_row.is_none_or(|pr| basis[r] < basis[pr]));
                if better {
                    best_ratio = ratio;
                    pivot_row = Some(r);
                }
            }
        }
        let Some(pr) = pivot_row else {
            // every structural variable is bounded by the supply rows
            return Err(Error::Input("LLP reported unbounded; instance is malformed".into()));
        };
        let piv = t[pr][pivot_col];
        for v in t[pr].iter_mut() {
            *v /= piv;
        }
        for r in 0..=rows {
            if r != pr {
                let factor = t[r][pivot_col];
                if factor != 0.0 {
                    for jx in 0..cols {
                        t[r][jx] -= factor * t[pr][jx];
                    }
                }
            }
        }
        basis[pr] = pivot_col;
    }

    let mut x = vec![0.0; vars];
    for (r, &var) in basis.iter().enumerate() {
        if var < vars {
            x[var] = t[r][cols - 1];
        }
    }
    let objective = c.iter().zip(&x).map(|(cj, xj)| cj * xj).sum();
    Ok(SimplexResult { x, objective })
}

/// Invariant checks on a solution: supply, budgets, and the objective
/// identity. Returns violations.
pub fn validate_llp_solution(g: &GameInstance, sol: &LlpSolution, tol: f64) -> Vec<String> {
    let mut report = Vec::new();
    let n = g.num_bidders();
    let m = g.num_items;
    if sol.y.len() != n || sol.y.iter().any(|row| row.len() != m) {
        report.push("solution dimensions do not match the instance".into());
        return report;
    }
    for j in 0..m {
        let supply: f64 = (0..n).map(|i| sol.y[i][j]).sum();
        if supply > 1.0 + tol {
            report.push(format!("item {j}: supply {supply} exceeds 1"));
        }
    }
    let mut objective = 0.0;
    for (i, bidder) in g.bidders.iter().enumerate() {
        let Valuation::Additive { values } = &bidder.valuation else {
            report.push(format!("bidder {i} is not additive"));
            continue;
        };
        let spend: f64 = (0..m).map(|j| values[j] * sol.y[i][j]).sum();
        objective += spend;
        if spend > bidder.budget + tol {
            report.push(format!("bidder {i}: value {spend} exceeds budget {}", bidder.budget));
        }
    }
    if (objective - sol.objective).abs() > tol {
        report.push(format!("objective {} != recomputed {objective}", sol.objective));
    }
    report
}
