//! Reduced KKT systems for a fixed binding pattern.
//!
//! With the binding rows `A_τ` treated as equalities the optimality
//! conditions become the symmetric indefinite linear system
//!
//! ```text
//! [ P   A_τᵀ  Gᵀ ] [x]   [−q ]
//! [ A_τ  0    0  ] [v] = [b_τ]
//! [ G    0    0  ] [w]   [ h ]
//! ```
//!
//! [`fast_solve`] assembles it for new demands, factors it, and checks the
//! answer against every inequality so a wrong pattern is caught.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::KktError;
use crate::linalg::{csr_mul, dot, factor, norm_inf, solve_refined, LdlFactor, QuasiDefinite};
use crate::qp::{LoadVector, QuadraticProgram};
use crate::solver::BindingPattern;

/// Pivot tolerance relative to `‖M‖∞`.
pub const PIVOT_TOL: f64 = 1e-10;
/// Relative tolerance of the inequality check, `A_i x ≤ b_i + tol·(1 + |b_i|)`.
pub const FEAS_TOL: f64 = 1e-7;
/// Relative tolerance below which a binding-row dual counts as negative.
pub const DUAL_TOL: f64 = 1e-7;

/// Index ranges of `(x, v, w)` inside the KKT unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KktLayout {
    pub x: Range<usize>,
    pub v: Range<usize>,
    pub w: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct KktSystem {
    dim: usize,
    /// Lower triangle of `M`, column-major.
    lower: Vec<f64>,
    pub rhs: Vec<f64>,
    pub layout: KktLayout,
    /// Inequality rows of `A_τ`, ascending.
    pub rows: Vec<usize>,
}

impl KktSystem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Full symmetric matrix `M`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |r, c| {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            self.lower[r + c * n]
        })
    }

    /// Maximum absolute row sum of `M`.
    pub fn norm_inf(&self) -> f64 {
        let n = self.dim;
        let mut sums = vec![0.0; n];
        for c in 0..n {
            for r in c..n {
                let v = self.lower[r + c * n].abs();
                sums[r] += v;
                if r != c {
                    sums[c] += v;
                }
            }
        }
        norm_inf(&sums)
    }

    /// `‖M z − rhs‖∞`.
    pub fn residual(&self, z: &[f64]) -> f64 {
        let mz = crate::linalg::sym_lower_mul(&self.lower, self.dim, z);
        mz.iter()
            .zip(&self.rhs)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    fn factor(&self) -> Result<LdlFactor, KktError> {
        let tol = PIVOT_TOL * self.norm_inf();
        factor(self.lower.clone(), self.dim, tol).map_err(|_| KktError::Singular {
            condition_estimate: f64::INFINITY,
        })
    }
}

/// Nonzeros of the lower triangle of `M` as `(row, col, value)` plus the
/// right-hand side, for binding rows `rows` and demands `d`.
struct Entries {
    dim: usize,
    lower: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    layout: KktLayout,
}

fn entries(qp: &QuadraticProgram, rows: &[usize], d: &LoadVector) -> Result<Entries, KktError> {
    let data = qp.load_data(d).map_err(|_| KktError::DimensionMismatch {
        expected: qp.n_loads(),
        got: d.len(),
    })?;
    let n = qp.n();
    let t = rows.len();
    let p = qp.p_eq();
    let dim = n + t + p;
    let mut lower = Vec::new();
    for c in 0..n {
        for r in c..n {
            let v = qp.p[(r, c)];
            if v != 0.0 {
                lower.push((r, c, v));
            }
        }
    }
    let mut rhs = Vec::with_capacity(dim);
    rhs.extend(data.q.iter().map(|v| -v));
    for (k, &row) in rows.iter().enumerate() {
        let view = qp.a.outer_view(row).expect("row index in range");
        lower.extend(view.iter().map(|(c, &v)| (n + k, c, v)));
        rhs.push(qp.b[row]);
    }
    let indptr = qp.g.indptr();
    let indices = qp.g.indices();
    for j in 0..p {
        lower.extend(indptr.outer_inds_sz(j).map(|e| (n + t + j, indices[e], data.g_data[e])));
    }
    rhs.extend_from_slice(&data.h);
    Ok(Entries {
        dim,
        lower,
        rhs,
        layout: KktLayout {
            x: 0..n,
            v: n..n + t,
            w: n + t..dim,
        },
    })
}

fn check_pattern(qp: &QuadraticProgram, tau: &BindingPattern) -> Result<(), KktError> {
    if tau.len() != qp.m() {
        return Err(KktError::DimensionMismatch {
            expected: qp.m(),
            got: tau.len(),
        });
    }
    Ok(())
}

/// Assembles the reduced system for pattern `tau` with demands `d` written
/// into `q`, `G` and `h` as the builder would.
pub fn assemble(
    qp: &QuadraticProgram,
    tau: &BindingPattern,
    d: &LoadVector,
) -> Result<KktSystem, KktError> {
    check_pattern(qp, tau)?;
    let rows = tau.indices();
    let e = entries(qp, &rows, d)?;
    let dim = e.dim;
    let mut lower = vec![0.0; dim * dim];
    for &(r, c, v) in &e.lower {
        lower[r + c * dim] += v;
    }
    Ok(KktSystem {
        dim,
        lower,
        rhs: e.rhs,
        layout: e.layout,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonsingularCheck {
    pub nonsingular: bool,
    /// Ratio of largest to smallest pivot magnitude; infinite when singular.
    pub condition_estimate: f64,
}

/// Factors `M` with Bunch–Kaufman pivoting and rejects pivots at or below
/// `PIVOT_TOL·‖M‖∞`.
pub fn check_nonsingular(kkt: &KktSystem) -> NonsingularCheck {
    match kkt.factor() {
        Ok(f) => NonsingularCheck {
            nonsingular: true,
            condition_estimate: f.condition_estimate(),
        },
        Err(_) => NonsingularCheck {
            nonsingular: false,
            condition_estimate: f64::INFINITY,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktSolution {
    pub x: Vec<f64>,
    /// Duals of the binding rows, in the order of [`KktSystem::rows`].
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    /// `‖M z − rhs‖∞` of the returned solution.
    pub residual: f64,
    pub condition_estimate: f64,
}

fn solve_factored(kkt: &KktSystem, fact: &LdlFactor) -> KktSolution {
    let z = solve_refined(fact, &kkt.lower, &kkt.rhs, 2);
    KktSolution {
        residual: kkt.residual(&z),
        x: z[kkt.layout.x.clone()].to_vec(),
        v: z[kkt.layout.v.clone()].to_vec(),
        w: z[kkt.layout.w.clone()].to_vec(),
        condition_estimate: fact.condition_estimate(),
    }
}

pub fn solve_kkt(kkt: &KktSystem) -> Result<KktSolution, KktError> {
    let fact = kkt.factor()?;
    Ok(solve_factored(kkt, &fact))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FastSolveReport {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    /// Objective including the constant term; NaN when singular.
    pub objective: f64,
    /// Every inequality holds within `FEAS_TOL`.
    pub feasible: bool,
    /// Largest `A_i x − b_i` over all inequality rows.
    pub max_violation: f64,
    pub max_violation_row: Option<usize>,
    pub max_violation_label: Option<String>,
    /// Some binding row has a dual below `−DUAL_TOL·(1 + ‖v‖∞)`.
    pub negative_dual: bool,
    pub singular: bool,
    pub residual: f64,
    pub condition_estimate: f64,
}

impl FastSolveReport {
    /// The pattern cannot be trusted for these demands.
    pub fn needs_fallback(&self) -> bool {
        self.singular || !self.feasible || self.negative_dual
    }
}

fn singular_report() -> FastSolveReport {
    FastSolveReport {
        x: Vec::new(),
        v: Vec::new(),
        w: Vec::new(),
        objective: f64::NAN,
        feasible: false,
        max_violation: f64::INFINITY,
        max_violation_row: None,
        max_violation_label: None,
        negative_dual: false,
        singular: true,
        residual: f64::INFINITY,
        condition_estimate: f64::INFINITY,
    }
}

/// Solves the reduced system for pattern `tau` and demands `d`, then checks
/// all inequalities and the signs of the binding-row duals.
///
/// The system is first factored sparsely after regularizing it to a
/// quasi-definite matrix, with iterative refinement against the exact
/// matrix. When refinement stalls or the matrix looks singular, the dense
/// Bunch–Kaufman factorization decides, with the same pivot test as
/// [`check_nonsingular`].
pub fn fast_solve(
    qp: &QuadraticProgram,
    tau: &BindingPattern,
    d: &LoadVector,
) -> Result<FastSolveReport, KktError> {
    check_pattern(qp, tau)?;
    let rows = tau.indices();
    let e = entries(qp, &rows, d)?;
    let target = 1e-9 * (1.0 + norm_inf(&e.rhs));
    let sparse = QuasiDefinite::new(e.dim, qp.n(), &e.lower)
        .filter(|f| !f.looks_singular())
        .and_then(|f| {
            let (z, residual) = f.solve(&e.rhs, target)?;
            Some((z, f.pivot_ratio(), residual))
        });
    let (z, condition_estimate, residual) = match sparse {
        Some(found) => found,
        None => {
            let mut lower = vec![0.0; e.dim * e.dim];
            for &(r, c, v) in &e.lower {
                lower[r + c * e.dim] += v;
            }
            let kkt = KktSystem {
                dim: e.dim,
                lower,
                rhs: e.rhs.clone(),
                layout: e.layout.clone(),
                rows: rows.clone(),
            };
            let Ok(fact) = kkt.factor() else {
                return Ok(singular_report());
            };
            let sol = solve_factored(&kkt, &fact);
            let z: Vec<f64> = sol.x.iter().chain(&sol.v).chain(&sol.w).copied().collect();
            (z, sol.condition_estimate, sol.residual)
        }
    };
    Ok(verify(qp, &e, z, condition_estimate, residual))
}

fn verify(
    qp: &QuadraticProgram,
    e: &Entries,
    z: Vec<f64>,
    condition_estimate: f64,
    residual: f64,
) -> FastSolveReport {
    let x = z[e.layout.x.clone()].to_vec();
    let v = z[e.layout.v.clone()].to_vec();
    let w = z[e.layout.w.clone()].to_vec();
    let ax = csr_mul(&qp.a, &x);
    let mut worst: Option<(usize, f64)> = None;
    let mut feasible = true;
    for (i, (axi, bi)) in ax.iter().zip(&qp.b).enumerate() {
        let viol = axi - bi;
        if viol > FEAS_TOL * (1.0 + bi.abs()) || !viol.is_finite() {
            feasible = false;
        }
        if worst.is_none_or(|(_, w)| viol > w) {
            worst = Some((i, viol));
        }
    }
    let v_tol = DUAL_TOL * (1.0 + norm_inf(&v));
    let negative_dual = v.iter().any(|vi| *vi < -v_tol);
    // The x-block of the right-hand side is −q with the new demands.
    let px = &qp.p * nalgebra::DVector::from_column_slice(&x);
    let objective = 0.5 * dot(&x, px.as_slice()) - dot(&e.rhs[e.layout.x.clone()], &x) + qp.r;
    FastSolveReport {
        objective,
        feasible,
        max_violation: worst.map_or(0.0, |w| w.1),
        max_violation_row: worst.map(|w| w.0),
        max_violation_label: worst.map(|w| qp.ineq_labels[w.0].clone()),
        negative_dual,
        singular: false,
        residual,
        condition_estimate,
        x,
        v,
        w,
    }
}
