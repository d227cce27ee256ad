//! Dense and sparse linear-algebra helpers shared by the solvers.

pub mod ldl;
pub mod sparse;

pub use ldl::{factor, LdlFactor, SingularPivot};
pub use sparse::QuasiDefinite;

use sprs::CsMat;

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = M x` for a CSR matrix.
pub fn csr_mul(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    for (row, vec) in m.outer_iterator().enumerate() {
        y[row] = vec.iter().map(|(c, v)| v * x[c]).sum();
    }
    y
}

/// `y = Mᵀ x` for a CSR matrix.
pub fn csr_mul_t(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.cols()];
    for (row, vec) in m.outer_iterator().enumerate() {
        let xr = x[row];
        if xr != 0.0 {
            for (c, v) in vec.iter() {
                y[c] += v * xr;
            }
        }
    }
    y
}

/// Maximum absolute row sum of a CSR matrix.
pub fn csr_norm_inf(m: &CsMat<f64>) -> f64 {
    m.outer_iterator()
        .map(|r| r.iter().map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `y = M x` for a symmetric matrix stored as its lower triangle in
/// column-major order.
pub fn sym_lower_mul(lower: &[f64], dim: usize, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; dim];
    for c in 0..dim {
        let col = &lower[c * dim..(c + 1) * dim];
        let xc = x[c];
        y[c] += col[c] * xc;
        for r in c + 1..dim {
            let v = col[r];
            if v != 0.0 {
                y[r] += v * xc;
                y[c] += v * x[r];
            }
        }
    }
    y
}

/// Solves `M z = rhs` with `steps` rounds of iterative refinement against
/// the unfactored lower triangle of `M`.
pub fn solve_refined(fact: &LdlFactor, lower: &[f64], rhs: &[f64], steps: usize) -> Vec<f64> {
    let dim = rhs.len();
    let mut z = fact.solve(rhs);
    for _ in 0..steps {
        let mz = sym_lower_mul(lower, dim, &z);
        let mut r: Vec<f64> = rhs.iter().zip(&mz).map(|(b, m)| b - m).collect();
        if norm_inf(&r) == 0.0 {
            break;
        }
        fact.solve_in_place(&mut r);
        for (zi, ri) in z.iter_mut().zip(&r) {
            *zi += ri;
        }
    }
    z
}
