//! Implied equalities.
//!
//! Two inequality rows `a x ≤ b₁` and `−a x ≤ b₂` with `b₁ + b₂ = 0` pin
//! `a x = b₁` and leave the feasible set without an interior, which stalls
//! the interior-point method. Such pairs are moved into the equality block
//! (dropping rows that are linear combinations of earlier equalities) and
//! the solution is mapped back afterwards.

use std::collections::HashMap;

use crate::linalg::norm_inf;
use crate::qp::{csr_from_rows, QuadraticProgram};

use super::PrimalDualSolution;

const PAIR_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-9;

pub(super) enum Presolve {
    /// No implied equalities; solve the problem as is.
    Unchanged,
    /// A pair `a x ≤ b₁`, `−a x ≤ b₂` with `b₁ + b₂ < 0`.
    Infeasible,
    Reduced(Reduction),
}

pub(super) struct Reduction {
    pub qp: QuadraticProgram,
    /// Original index of each remaining inequality row.
    kept: Vec<usize>,
    /// `(row, opposite row)` for each equality appended to the block.
    appended: Vec<(usize, usize)>,
}

type RowKey = Vec<(usize, u64)>;

fn key(row: &[(usize, f64)], sign: f64) -> RowKey {
    // Adding 0.0 maps −0.0 to +0.0 so negated zeros hash alike.
    row.iter()
        .map(|&(c, v)| (c, (sign * v + 0.0).to_bits()))
        .collect()
}

fn rows_of(m: &sprs::CsMat<f64>) -> Vec<Vec<(usize, f64)>> {
    m.outer_iterator()
        .map(|r| r.iter().map(|(c, &v)| (c, v)).collect())
        .collect()
}

/// Incremental row-space basis by modified Gram–Schmidt.
struct RowSpace {
    n: usize,
    basis: Vec<Vec<f64>>,
}

impl RowSpace {
    /// Adds `row` if it is independent of the rows seen so far.
    fn insert(&mut self, row: &[(usize, f64)]) -> bool {
        let mut v = vec![0.0; self.n];
        for &(c, x) in row {
            v[c] += x;
        }
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for q in &self.basis {
                let p: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, q)| *x -= p * q);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= RANK_TOL * norm0 {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        self.basis.push(v);
        true
    }
}

pub(super) fn presolve(qp: &QuadraticProgram) -> Presolve {
    let a_rows = rows_of(&qp.a);
    let mut index: HashMap<RowKey, Vec<usize>> = HashMap::new();
    for (i, row) in a_rows.iter().enumerate() {
        index.entry(key(row, 1.0)).or_default().push(i);
    }
    let scale = 1.0 + norm_inf(&qp.b);
    let mut paired = vec![false; a_rows.len()];
    let mut pairs = Vec::new();
    for (i, row) in a_rows.iter().enumerate() {
        if paired[i] || row.is_empty() {
            continue;
        }
        let Some(opposites) = index.get(&key(row, -1.0)) else {
            continue;
        };
        for &j in opposites {
            if paired[j] || j == i {
                continue;
            }
            let gap = qp.b[i] + qp.b[j];
            if gap < -PAIR_TOL * scale {
                return Presolve::Infeasible;
            }
            if gap <= PAIR_TOL * scale {
                paired[i] = true;
                paired[j] = true;
                pairs.push((i, j));
                break;
            }
        }
    }
    if pairs.is_empty() {
        return Presolve::Unchanged;
    }

    let mut g_rows = rows_of(&qp.g);
    let mut h = qp.h.clone();
    let mut space = RowSpace {
        n: qp.n(),
        basis: Vec::new(),
    };
    for row in &g_rows {
        space.insert(row);
    }
    let mut appended = Vec::new();
    for &(i, j) in &pairs {
        if space.insert(&a_rows[i]) {
            g_rows.push(a_rows[i].clone());
            h.push(qp.b[i]);
            appended.push((i, j));
        }
    }
    let kept: Vec<usize> = (0..a_rows.len()).filter(|&i| !paired[i]).collect();
    let a = csr_from_rows(qp.n(), &kept.iter().map(|&i| a_rows[i].clone()).collect::<Vec<_>>());
    let b = kept.iter().map(|&i| qp.b[i]).collect();
    let g = csr_from_rows(qp.n(), &g_rows);
    let reduced = QuadraticProgram::new(qp.p.clone(), qp.q.clone(), qp.r, a, b, g, h)
        .expect("presolved dimensions are consistent");
    Presolve::Reduced(Reduction {
        qp: reduced,
        kept,
        appended,
    })
}

impl Reduction {
    /// Maps a solution of the reduced problem back to the original rows.
    /// Each appended equality's dual goes to whichever of its two rows has
    /// the matching sign, and that row joins the basis.
    pub fn restore(&self, original: &QuadraticProgram, sol: PrimalDualSolution) -> PrimalDualSolution {
        let p = original.p_eq();
        let mut mu = vec![0.0; original.m()];
        for (k, &i) in self.kept.iter().enumerate() {
            mu[i] = sol.mu[k];
        }
        let mut basis: Vec<usize> = sol.basis.iter().map(|&k| self.kept[k]).collect();
        for (e, &(i, j)) in self.appended.iter().enumerate() {
            let w = sol.w[p + e];
            let row = if w >= 0.0 { i } else { j };
            mu[row] = w.abs();
            if !sol.basis.is_empty() {
                basis.push(row);
            }
        }
        basis.sort_unstable();
        let w = sol.w[..p].to_vec();
        PrimalDualSolution {
            residuals: if sol.status == super::SolveStatus::Optimal {
                super::residuals(original, &sol.x, &mu, &w)
            } else {
                sol.residuals
            },
            objective: sol.objective,
            x: sol.x,
            mu,
            w,
            status: sol.status,
            iterations: sol.iterations,
            basis,
        }
    }
}
