//! Full QP solve with primal and dual outputs, and binding-status
//! classification from complementary slackness.

mod binding;
mod crossover;
mod ipm;
mod presolve;

use serde::{Deserialize, Serialize};

use crate::linalg::{csr_mul, csr_mul_t, dot, norm_inf};
use crate::qp::{csr_from_rows, QuadraticProgram};

pub use binding::{binding_status, binding_status_with, BindingPattern, BindingReport, BindingSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_comp: f64,
    pub max_iter: usize,
    /// Move to an optimal vertex and report its basis. Without it the
    /// interior-point iterate is returned as is.
    pub crossover: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_comp: 1e-8,
            max_iter: 100,
            crossover: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIterations => "max_iterations",
        })
    }
}

/// Infinity norms of the KKT residuals at the reported point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max(0, A x − b)` and `G x − h`.
    pub primal: f64,
    /// `P x + q + Aᵀμ + Gᵀw`.
    pub dual: f64,
    /// `|μᵀ(b − A x)|`.
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDualSolution {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
    /// Includes the constant `r`.
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: Residuals,
    /// Inequality rows of the optimal basis found by crossover (ascending).
    /// Empty when crossover was disabled or did not complete.
    pub basis: Vec<usize>,
}

pub fn residuals(qp: &QuadraticProgram, x: &[f64], mu: &[f64], w: &[f64]) -> Residuals {
    let ax = csr_mul(&qp.a, x);
    let gx = csr_mul(&qp.g, x);
    let ineq = ax
        .iter()
        .zip(&qp.b)
        .map(|(ax, b)| (ax - b).max(0.0))
        .fold(0.0, f64::max);
    let eq = gx
        .iter()
        .zip(&qp.h)
        .map(|(gx, h)| (gx - h).abs())
        .fold(0.0, f64::max);
    let px = &qp.p * nalgebra::DVector::from_column_slice(x);
    let atmu = csr_mul_t(&qp.a, mu);
    let gtw = csr_mul_t(&qp.g, w);
    let dual = (0..qp.n())
        .map(|i| (px[i] + qp.q[i] + atmu[i] + gtw[i]).abs())
        .fold(0.0, f64::max);
    let slack: Vec<f64> = ax.iter().zip(&qp.b).map(|(ax, b)| b - ax).collect();
    Residuals {
        primal: ineq.max(eq),
        dual,
        complementarity: dot(mu, &slack).abs(),
    }
}

fn failed(qp: &QuadraticProgram, status: SolveStatus, iterations: usize, x: Vec<f64>) -> PrimalDualSolution {
    PrimalDualSolution {
        objective: qp.objective(&x),
        residuals: Residuals::default(),
        mu: vec![0.0; qp.m()],
        w: vec![0.0; qp.p_eq()],
        x,
        status,
        iterations,
        basis: Vec::new(),
    }
}

/// Solves the QP to optimality.
///
/// A Mehrotra interior-point method finds an optimal point; crossover then
/// moves to a vertex of the optimal face and recomputes `x`, `μ`, `w` from
/// the reduced KKT system of that vertex. When the IPM stalls, an elastic
/// feasibility problem decides between `infeasible` and `max_iterations`.
/// Opposite inequality pairs that pin a row to a single value are solved as
/// equalities.
pub fn solve(qp: &QuadraticProgram, opts: &SolverOptions) -> PrimalDualSolution {
    match presolve::presolve(qp) {
        presolve::Presolve::Unchanged => solve_direct(qp, opts),
        presolve::Presolve::Infeasible => failed(qp, SolveStatus::Infeasible, 0, vec![0.0; qp.n()]),
        presolve::Presolve::Reduced(r) => {
            let sol = solve_direct(&r.qp, opts);
            r.restore(qp, sol)
        }
    }
}

fn solve_direct(qp: &QuadraticProgram, opts: &SolverOptions) -> PrimalDualSolution {
    let res = ipm::solve_ipm(qp, opts.tol_feas, opts.tol_comp, opts.max_iter);
    match res.outcome {
        ipm::IpmOutcome::Converged => {}
        ipm::IpmOutcome::InfeasibleCertificate => {
            return failed(qp, SolveStatus::Infeasible, res.iterations, res.x);
        }
        ipm::IpmOutcome::MaxIterations | ipm::IpmOutcome::NumericalFailure => {
            let status = if elastic_infeasible(qp, opts) {
                SolveStatus::Infeasible
            } else {
                SolveStatus::MaxIterations
            };
            return failed(qp, status, res.iterations, res.x);
        }
    }

    let vertex = if opts.crossover {
        crossover::crossover(qp, &res)
    } else {
        None
    };
    let (x, mu, w, basis) = match vertex {
        Some(v) => {
            let mut mu = vec![0.0; qp.m()];
            for (&row, &val) in v.basis.iter().zip(&v.v) {
                mu[row] = val.max(0.0);
            }
            (v.x, mu, v.w, v.basis)
        }
        None => (res.x, res.mu, res.w, Vec::new()),
    };
    PrimalDualSolution {
        objective: qp.objective(&x),
        residuals: residuals(qp, &x, &mu, &w),
        x,
        mu,
        w,
        status: SolveStatus::Optimal,
        iterations: res.iterations,
        basis,
    }
}

/// Minimizes a single elastic variable `t ≥ 0` added to every inequality.
/// The QP is infeasible when the optimal `t` is clearly positive.
fn elastic_infeasible(qp: &QuadraticProgram, opts: &SolverOptions) -> bool {
    let n = qp.n();
    let t_col = n;
    let mut rows: Vec<Vec<(usize, f64)>> = qp
        .a
        .outer_iterator()
        .map(|r| {
            let mut row: Vec<(usize, f64)> = r.iter().map(|(c, &v)| (c, v)).collect();
            row.push((t_col, -1.0));
            row
        })
        .collect();
    rows.push(vec![(t_col, -1.0)]);
    let a = csr_from_rows(n + 1, &rows);
    let mut b = qp.b.clone();
    b.push(0.0);
    let g_rows: Vec<Vec<(usize, f64)>> = qp
        .g
        .outer_iterator()
        .map(|r| r.iter().map(|(c, &v)| (c, v)).collect())
        .collect();
    let g = csr_from_rows(n + 1, &g_rows);
    let mut q = vec![0.0; n + 1];
    q[t_col] = 1.0;
    let Ok(lp) = QuadraticProgram::new(
        nalgebra::DMatrix::zeros(n + 1, n + 1),
        q,
        0.0,
        a,
        b,
        g,
        qp.h.clone(),
    ) else {
        return false;
    };
    let res = ipm::solve_ipm(&lp, opts.tol_feas, opts.tol_comp, opts.max_iter.max(100));
    match res.outcome {
        ipm::IpmOutcome::Converged => {
            let scale = 1.0 + norm_inf(&qp.b).max(norm_inf(&qp.h));
            res.x[t_col] > 1e-6 * scale
        }
        ipm::IpmOutcome::InfeasibleCertificate => true,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::three_bus;
    use approx::assert_abs_diff_eq;

    fn bounded_box(n: usize, p_diag: f64, q: Vec<f64>) -> QuadraticProgram {
        let mut rows = Vec::new();
        let mut b = Vec::new();
        for i in 0..n {
            rows.push(vec![(i, -1.0)]);
            b.push(1.0);
            rows.push(vec![(i, 1.0)]);
            b.push(1.0);
        }
        QuadraticProgram::new(
            nalgebra::DMatrix::identity(n, n) * p_diag,
            q,
            0.0,
            csr_from_rows(n, &rows),
            b,
            csr_from_rows(n, &[]),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn interior_minimum_has_zero_duals() {
        let qp = bounded_box(3, 2.0, vec![0.0; 3]);
        let sol = solve(&qp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        for v in &sol.x {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-9);
        }
        assert!(sol.mu.iter().all(|m| m.abs() < 1e-9));
    }

    #[test]
    fn three_bus_golden_values() {
        let case = three_bus();
        let qp = crate::qp::build(&case, &crate::qp::LoadVector::from_case(&case)).unwrap();
        let sol = solve(&qp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        let expect = [30.0, 50.0, 0.1, 0.1, 0.125];
        for (x, e) in sol.x.iter().zip(expect) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-7);
        }
        assert_abs_diff_eq!(sol.w[0], -1000.0, epsilon = 1e-6);
        let idx = crate::qp::label_index(&qp);
        assert_abs_diff_eq!(sol.mu[idx["gen_upper[1]"]], 937.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.mu[idx["gen_upper[2]"]], 799.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.mu[idx["shed_upper[1]"]], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.mu[idx["shed_upper[2]"]], 0.0, epsilon = 1e-6);
        let mut basis_labels: Vec<&str> = sol.basis.iter().map(|&i| qp.ineq_labels[i].as_str()).collect();
        basis_labels.sort_unstable();
        assert_eq!(
            basis_labels,
            ["gen_upper[1]", "gen_upper[2]", "shed_upper[1]", "shed_upper[2]"]
        );
    }

    #[test]
    fn conflicting_bounds_are_infeasible() {
        // x ≤ −1 and −x ≤ −1 (x ≥ 1).
        let qp = QuadraticProgram::new(
            nalgebra::DMatrix::identity(1, 1),
            vec![0.0],
            0.0,
            csr_from_rows(1, &[vec![(0, 1.0)], vec![(0, -1.0)]]),
            vec![-1.0, -1.0],
            csr_from_rows(1, &[]),
            vec![],
        )
        .unwrap();
        let sol = solve(&qp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equality_is_infeasible() {
        // x₁ + x₂ = 5 with both in [−1, 1].
        let mut qp = bounded_box(2, 1.0, vec![0.0; 2]);
        qp.g = csr_from_rows(2, &[vec![(0, 1.0), (1, 1.0)]]);
        qp.h = vec![5.0];
        qp.eq_labels = vec!["eq[1]".into()];
        let sol = solve(&qp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let case = three_bus();
        let qp = crate::qp::build(&case, &crate::qp::LoadVector::from_case(&case)).unwrap();
        let opts = SolverOptions {
            max_iter: 2,
            ..SolverOptions::default()
        };
        assert_eq!(solve(&qp, &opts).status, SolveStatus::MaxIterations);
    }

    #[test]
    fn degenerate_bound_at_optimum() {
        // min x² s.t. x ≤ 0: optimum on the boundary with zero dual.
        let qp = QuadraticProgram::new(
            nalgebra::DMatrix::identity(1, 1) * 2.0,
            vec![0.0],
            0.0,
            csr_from_rows(1, &[vec![(0, 1.0)]]),
            vec![0.0],
            csr_from_rows(1, &[]),
            vec![],
        )
        .unwrap();
        let sol = solve(&qp, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.mu[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn repeated_solves_are_identical() {
        let case = three_bus();
        let qp = crate::qp::build(&case, &crate::qp::LoadVector::from_case(&case)).unwrap();
        let a = solve(&qp, &SolverOptions::default());
        let b = solve(&qp, &SolverOptions::default());
        assert_eq!(a.x, b.x);
    }
}
