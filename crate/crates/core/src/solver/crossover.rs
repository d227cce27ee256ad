//! Crossover from an interior-point optimum to a vertex of the optimal face.
//!
//! Load shedding is cost-neutral in how it is split between loads once the
//! total is fixed, so the optimal set is usually a face rather than a point.
//! Starting from the IPM iterate, the strongly active rows `S` are fixed
//! and the point is pushed inside the face, first along a secondary
//! objective (maximize total shed fraction, ties to lower load indices),
//! then along coordinate directions, adding each blocking row to a working
//! set `W` until `ker P ∩ ker [G; A_S; A_W] = {0}`. The resulting basis gives
//! a nonsingular reduced KKT system whose solution is the reported optimum.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{csr_mul, factor, norm_inf, solve_refined};
use crate::qp::QuadraticProgram;

use super::ipm::IpmResult;

const DEP_TOL: f64 = 1e-9;
const MAX_DROPS: usize = 200;
const MAX_REPAIRS: usize = 20;
/// Relative violation above which a row is added to the basis.
const REPAIR_TOL: f64 = 1e-10;
/// Relative violation tolerated in a final point.
const ACCEPT_TOL: f64 = 1e-8;

/// Orthonormal basis grown by modified Gram–Schmidt with reorthogonalization.
struct RowSpace {
    n: usize,
    vecs: Vec<Vec<f64>>,
}

impl RowSpace {
    fn new(n: usize) -> Self {
        Self { n, vecs: Vec::new() }
    }

    fn project_out(&self, v: &mut [f64]) {
        for _ in 0..2 {
            for q in &self.vecs {
                let c: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                if c != 0.0 {
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= c * qi;
                    }
                }
            }
        }
    }

    /// Adds `row` if it is independent of the current span.
    fn try_add(&mut self, row: &[f64]) -> bool {
        let norm0 = norm2(row);
        if norm0 == 0.0 || self.vecs.len() >= self.n {
            return false;
        }
        let mut v = row.to_vec();
        self.project_out(&mut v);
        let norm = norm2(&v);
        if norm <= DEP_TOL * norm0 {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        self.vecs.push(v);
        true
    }

    fn full(&self) -> bool {
        self.vecs.len() >= self.n
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dense_row(m: &sprs::CsMat<f64>, i: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    if let Some(row) = m.outer_view(i) {
        for (c, &v) in row.iter() {
            out[c] = v;
        }
    }
    out
}

fn sparse_dot(m: &sprs::CsMat<f64>, i: usize, d: &[f64]) -> f64 {
    m.outer_view(i)
        .map_or(0.0, |row| row.iter().map(|(c, v)| v * d[c]).sum())
}

/// Optimal vertex with its basis and reduced-KKT multipliers.
#[derive(Debug, Clone)]
pub(crate) struct Vertex {
    pub x: Vec<f64>,
    /// Inequality rows of the basis, ascending.
    pub basis: Vec<usize>,
    /// Duals of `basis` rows, in the same order.
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

struct State<'a> {
    qp: &'a QuadraticProgram,
    n: usize,
    x: Vec<f64>,
    slack: Vec<f64>,
    row_norm: Vec<f64>,
    /// Rows that are fixed (in `S` or `W`) or known to be redundant.
    fixed: Vec<bool>,
    s_indep: Vec<usize>,
    working: Vec<usize>,
    p_rows: Vec<Vec<f64>>,
    space: RowSpace,
}

impl<'a> State<'a> {
    /// Rebuilds the row space from `[G; A_S; P; A_W]`, recording which
    /// strongly active rows are independent.
    fn rebuild(&mut self, strong: &[usize]) {
        let n = self.n;
        self.space = RowSpace::new(n);
        for r in 0..self.qp.p_eq() {
            self.space.try_add(&dense_row(&self.qp.g, r, n));
        }
        self.s_indep.clear();
        for &i in strong {
            if self.space.try_add(&dense_row(&self.qp.a, i, n)) {
                self.s_indep.push(i);
            }
        }
        for row in &self.p_rows {
            self.space.try_add(row);
        }
        let working = std::mem::take(&mut self.working);
        for i in working {
            if self.space.try_add(&dense_row(&self.qp.a, i, n)) {
                self.working.push(i);
            }
        }
    }

    fn project(&self, c: &[f64]) -> Vec<f64> {
        let mut d = c.to_vec();
        self.space.project_out(&mut d);
        d
    }

    /// Moves along `d` until the first unfixed row blocks, then adds it to
    /// `W`. Returns false when nothing blocks.
    fn push(&mut self, d: &[f64]) -> bool {
        let dn = norm_inf(d);
        let mut best: Option<(f64, usize)> = None;
        for i in 0..self.qp.m() {
            if self.fixed[i] {
                continue;
            }
            let ad = sparse_dot(&self.qp.a, i, d);
            if ad <= 1e-11 * self.row_norm[i] * dn {
                continue;
            }
            let t = self.slack[i].max(0.0) / ad;
            match best {
                Some((bt, _)) if t >= bt * (1.0 - 1e-12) - 1e-15 => {}
                _ => best = Some((t, i)),
            }
        }
        let Some((t, row)) = best else {
            return false;
        };
        for (xi, di) in self.x.iter_mut().zip(d) {
            *xi += t * di;
        }
        self.slack = self.qp.slacks(&self.x);
        self.fixed[row] = true;
        if self.space.try_add(&dense_row(&self.qp.a, row, self.n)) {
            self.working.push(row);
        }
        true
    }

    /// Multipliers of the working rows in `c = Σ y_k row_k` over all rows
    /// spanning the current space.
    fn working_multipliers(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut rows: Vec<Vec<f64>> = (0..self.qp.p_eq())
            .map(|r| dense_row(&self.qp.g, r, n))
            .collect();
        rows.extend(self.s_indep.iter().map(|&i| dense_row(&self.qp.a, i, n)));
        rows.extend(self.p_rows.iter().cloned());
        let first_w = rows.len();
        rows.extend(self.working.iter().map(|&i| dense_row(&self.qp.a, i, n)));
        let k = rows.len();
        let rt = DMatrix::from_fn(n, k, |r, col| rows[col][r]);
        let svd = rt.svd(true, true);
        let y = svd
            .solve(&DVector::from_column_slice(c), 1e-12)
            .unwrap_or_else(|_| DVector::zeros(k));
        y.as_slice()[first_w..].to_vec()
    }
}

pub(crate) fn crossover(qp: &QuadraticProgram, ipm: &IpmResult) -> Option<Vertex> {
    let n = qp.n();
    let m = qp.m();
    let p_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| qp.p.row(i).iter().copied().collect::<Vec<f64>>())
        .filter(|r| r.iter().any(|v| *v != 0.0))
        .collect();
    let row_norm: Vec<f64> = (0..m)
        .map(|i| {
            qp.a.outer_view(i)
                .map_or(0.0, |r| r.iter().map(|(_, v)| v * v).sum::<f64>().sqrt())
        })
        .collect();
    // Tapia indicators when available, otherwise dual and slack compared
    // on their own scales.
    let mu_scale = 1.0 + norm_inf(&ipm.mu);
    let strongly_active: Vec<bool> = match &ipm.tapia {
        Some((z_ratio, mu_ratio)) => (0..m).map(|i| z_ratio[i] < mu_ratio[i]).collect(),
        None => (0..m)
            .map(|i| ipm.mu[i] / mu_scale > ipm.z[i].max(0.0) / (1.0 + qp.b[i].abs()))
            .collect(),
    };
    let mut strong: Vec<usize> = (0..m)
        .filter(|&i| strongly_active[i] && row_norm[i] > 0.0)
        .collect();
    let mut fixed = vec![false; m];
    for i in 0..m {
        fixed[i] = strongly_active[i] || row_norm[i] == 0.0;
    }

    let mut st = State {
        qp,
        n,
        x: ipm.x.clone(),
        slack: qp.slacks(&ipm.x),
        row_norm,
        fixed,
        s_indep: Vec::new(),
        working: Vec::new(),
        p_rows,
        space: RowSpace::new(n),
    };
    st.rebuild(&strong);
    if st.s_indep.len() < strong.len() {
        // Dependent active rows: pick an independent subset that carries a
        // nonnegative dual, and put it first so the rebuild selects it.
        let chosen = nonnegative_basis(qp, &ipm.mu, &strong, &st.s_indep);
        let rest: Vec<usize> = strong.iter().copied().filter(|i| !chosen.contains(i)).collect();
        strong = chosen.into_iter().chain(rest).collect();
        st.rebuild(&strong);
    }

    // Secondary objective: total shed fraction, lower indices preferred.
    let shed = qp.layout.shed.clone();
    let mut c = vec![0.0; n];
    let n_shed = shed.len().max(1) as f64;
    for (k, j) in shed.clone().enumerate() {
        c[j] = 1.0 + 1e-4 * (n_shed - k as f64) / n_shed;
    }
    let c_norm = norm2(&c);
    let mut drops = 0;
    while c_norm > 0.0 && !st.space.full() {
        let d = st.project(&c);
        if norm2(&d) > 1e-9 * c_norm {
            if !st.push(&d) {
                break;
            }
            continue;
        }
        if st.working.is_empty() || drops >= MAX_DROPS {
            break;
        }
        let y = st.working_multipliers(&c);
        let scale = 1e-9 * (1.0 + norm_inf(&y));
        let (pos, most) = y
            .iter()
            .enumerate()
            .fold((usize::MAX, -scale), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
        if pos == usize::MAX || most >= -scale {
            break;
        }
        let row = st.working.remove(pos);
        st.fixed[row] = false;
        drops += 1;
        st.rebuild(&strong);
    }

    // Coordinate directions until the null space is trivial.
    let order: Vec<usize> = shed.clone().chain(0..n).collect();
    'outer: for &j in &order {
        for _ in 0..n {
            if st.space.full() {
                break 'outer;
            }
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let d = st.project(&e);
            if norm2(&d) <= 1e-9 {
                break;
            }
            if st.push(&d) {
                continue;
            }
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            if !st.push(&neg) {
                break;
            }
        }
    }
    if !st.space.full() {
        return None;
    }

    let mut basis: Vec<usize> = st.s_indep.iter().chain(&st.working).copied().collect();
    basis.sort_unstable();
    // Rows with tiny duals can be misread as inactive; the polished point
    // then violates them. Add the worst violated row and solve again.
    // A violation that is only roundoff-sized may be unrepairable (the row
    // depends on the basis); the previous point is then accepted.
    let mut fallback: Option<Vertex> = None;
    for _ in 0..MAX_REPAIRS {
        match polish(qp, &basis) {
            Some(Polished::Done(vertex)) => return Some(vertex),
            Some(Polished::Violated(row, amount, vertex)) => {
                fallback = (amount <= ACCEPT_TOL).then_some(vertex);
                basis.push(row);
                basis.sort_unstable();
            }
            None => return fallback,
        }
    }
    fallback
}

enum Polished {
    Done(Vertex),
    /// Most violated inequality row, its relative violation, and the
    /// solution that violates it.
    Violated(usize, f64, Vertex),
}

/// Carathéodory reduction of the active-row duals.
///
/// `mu` is a nonnegative dual over the rows in `strong`, `indep` an
/// independent subset spanning them (together with `G`). Each dependent row
/// `j` is written as `a_j = Σ α_jk a_k + Gᵀβ` over the current independent
/// set; its weight is shifted onto that set until either it is used up or a
/// basic weight reaches zero, in which case the two rows swap roles. The
/// returned rows are independent and carry a nonnegative dual.
fn nonnegative_basis(
    qp: &QuadraticProgram,
    mu: &[f64],
    strong: &[usize],
    indep: &[usize],
) -> Vec<usize> {
    let n = qp.n();
    let p = qp.p_eq();
    let m = qp.m();
    let dependent: Vec<usize> = strong.iter().copied().filter(|i| !indep.contains(i)).collect();
    let cols = p + indep.len();
    let basis_mat = DMatrix::from_fn(n, cols, |r, c| {
        if c < p {
            qp.g.get(c, r).copied().unwrap_or(0.0)
        } else {
            qp.a.get(indep[c - p], r).copied().unwrap_or(0.0)
        }
    });
    let rhs = DMatrix::from_fn(n, dependent.len(), |r, c| {
        qp.a.get(dependent[c], r).copied().unwrap_or(0.0)
    });
    let Some(coef) = basis_mat.svd(true, true).solve(&rhs, 1e-12).ok() else {
        return indep.to_vec();
    };

    // Tableau over row indices: alpha[j][k] for basic k.
    let mut basic: Vec<usize> = indep.to_vec();
    let mut alpha: Vec<(usize, Vec<f64>)> = dependent
        .iter()
        .enumerate()
        .map(|(c, &j)| {
            let mut a = vec![0.0; m];
            for (pos, &k) in indep.iter().enumerate() {
                a[k] = coef[(p + pos, c)];
            }
            (j, a)
        })
        .collect();
    let mut y = vec![0.0; m];
    for &i in strong {
        y[i] = mu[i].max(0.0);
    }

    for idx in 0..alpha.len() {
        let j = alpha[idx].0;
        if y[j] <= 0.0 {
            continue;
        }
        let aj = alpha[idx].1.clone();
        let mut t = y[j];
        let mut leave = None;
        for &k in &basic {
            if aj[k] < -1e-12 {
                let tk = y[k] / -aj[k];
                if tk < t {
                    t = tk;
                    leave = Some(k);
                }
            }
        }
        for &k in &basic {
            y[k] += t * aj[k];
        }
        y[j] -= t;
        let Some(k) = leave else {
            y[j] = 0.0;
            continue;
        };
        y[k] = 0.0;
        // j enters, k leaves: a_k = (a_j − Σ_{l≠k} α_jl a_l) / α_jk.
        let pivot = aj[k];
        let mut ak = vec![0.0; m];
        for &l in &basic {
            if l != k {
                ak[l] = -aj[l] / pivot;
            }
        }
        ak[j] = 1.0 / pivot;
        for (other, row) in alpha.iter_mut() {
            if *other == j {
                continue;
            }
            let f = row[k];
            if f != 0.0 {
                for &l in &basic {
                    if l != k {
                        row[l] -= f * aj[l] / pivot;
                    }
                }
                row[j] += f / pivot;
                row[k] = 0.0;
            }
        }
        alpha[idx] = (k, ak);
        let pos = basic.iter().position(|&b| b == k).expect("leaving row is basic");
        basic[pos] = j;
    }
    basic.sort_unstable();
    basic
}

/// Solves the reduced KKT system for `basis` and checks primal feasibility
/// and dual signs.
fn polish(qp: &QuadraticProgram, basis: &[usize]) -> Option<Polished> {
    let n = qp.n();
    let t = basis.len();
    let p = qp.p_eq();
    let dim = n + t + p;
    let mut mat = vec![0.0; dim * dim];
    for c in 0..n {
        for r in c..n {
            mat[r + c * dim] = qp.p[(r, c)];
        }
    }
    for (k, &i) in basis.iter().enumerate() {
        if let Some(row) = qp.a.outer_view(i) {
            for (c, &v) in row.iter() {
                mat[(n + k) + c * dim] = v;
            }
        }
    }
    for r in 0..p {
        if let Some(row) = qp.g.outer_view(r) {
            for (c, &v) in row.iter() {
                mat[(n + t + r) + c * dim] = v;
            }
        }
    }
    let scale = mat.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    let fact = factor(mat.clone(), dim, 1e-13 * scale).ok()?;
    let mut rhs: Vec<f64> = qp.q.iter().map(|v| -v).collect();
    rhs.extend(basis.iter().map(|&i| qp.b[i]));
    rhs.extend_from_slice(&qp.h);
    let z = solve_refined(&fact, &mat, &rhs, 2);
    let x = z[..n].to_vec();
    let v = z[n..n + t].to_vec();
    let w = z[n + t..].to_vec();

    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let ax = csr_mul(&qp.a, &x);
    let worst = ax
        .iter()
        .zip(&qp.b)
        .map(|(ax, b)| (ax - b) / (1.0 + b.abs()))
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let v_tol = 1e-7 * (1.0 + norm_inf(&v));
    if v.iter().any(|vi| *vi < -v_tol) {
        return None;
    }
    let vertex = Vertex {
        x,
        basis: basis.to_vec(),
        v,
        w,
    };
    if worst.1 > REPAIR_TOL && !basis.contains(&worst.0) {
        return Some(Polished::Violated(worst.0, worst.1, vertex));
    }
    if worst.1 > ACCEPT_TOL {
        return None;
    }
    Some(Polished::Done(vertex))
}
