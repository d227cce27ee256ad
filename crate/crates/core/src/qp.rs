//! Assembly of the load-shedding QP
//!
//! ```text
//! min ½ xᵀP x + qᵀx + r   s.t.  A x ≤ b,  G x = h
//! ```
//!
//! with variables ordered `[θ; g; f; s]` (`θ` and `f` are absent for a
//! copper-plate case). Demands enter the problem in exactly three places:
//! the shed cost `λ d_k` in `q`, the coefficient `d_k` of `s_k` in the nodal
//! balance rows of `G`, and the balance right-hand side `h`. [`QuadraticProgram::inject_loads`]
//! is the only code that writes them, so a problem can be re-targeted at new
//! demands without rebuilding its structure.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sprs::CsMat;

use crate::error::QpError;
use crate::grid::{Delta, GridCase};
use crate::linalg::{csr_mul, dot};

/// Nodal demands in MW, one entry per load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadVector(Vec<f64>);

impl LoadVector {
    pub fn new(d: Vec<f64>) -> Result<Self, QpError> {
        if let Some(bad) = d.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(QpError::InvalidParameter(format!(
                "demands must be finite and >= 0, found {bad}"
            )));
        }
        Ok(Self(d))
    }

    pub fn from_case(case: &GridCase) -> Self {
        Self(case.demands())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Index ranges of the variable blocks inside `x`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarLayout {
    pub theta: Range<usize>,
    pub gen: Range<usize>,
    pub flow: Range<usize>,
    pub shed: Range<usize>,
}

impl VarLayout {
    pub fn n(&self) -> usize {
        self.theta.len() + self.gen.len() + self.flow.len() + self.shed.len()
    }
}

/// Where each demand is written inside a built problem.
#[derive(Debug, Clone)]
struct LoadSlot {
    shed_col: usize,
    balance_row: usize,
    /// Position of the `(balance_row, shed_col)` entry in `G.data()`.
    g_entry: usize,
}

#[derive(Debug, Clone)]
struct LoadInjection {
    lambda: f64,
    slots: Vec<LoadSlot>,
    /// Balance right-hand side with all demands zero.
    h_base: Vec<f64>,
}

/// Demand-dependent data of a problem, see [`QuadraticProgram::load_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadData {
    pub q: Vec<f64>,
    pub h: Vec<f64>,
    /// Values of `G` in its CSR storage order.
    pub g_data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub p: DMatrix<f64>,
    pub q: Vec<f64>,
    pub r: f64,
    pub a: CsMat<f64>,
    pub b: Vec<f64>,
    pub g: CsMat<f64>,
    pub h: Vec<f64>,
    pub layout: VarLayout,
    pub ineq_labels: Vec<String>,
    pub eq_labels: Vec<String>,
    injection: Option<LoadInjection>,
}

/// Builds a CSR matrix from per-row `(col, value)` lists. Entries are kept
/// even when zero so load coefficients keep a fixed slot.
pub fn csr_from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> CsMat<f64> {
    let mut indptr = Vec::with_capacity(rows.len() + 1);
    let mut indices = Vec::new();
    let mut data = Vec::new();
    indptr.push(0);
    for row in rows {
        let mut sorted = row.clone();
        sorted.sort_by_key(|&(c, _)| c);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(sorted.len());
        for (c, v) in sorted {
            match merged.last_mut() {
                Some((lc, lv)) if *lc == c => *lv += v,
                _ => merged.push((c, v)),
            }
        }
        for (c, v) in merged {
            indices.push(c);
            data.push(v);
        }
        indptr.push(indices.len());
    }
    CsMat::new((rows.len(), cols), indptr, indices, data)
}

impl QuadraticProgram {
    /// A generic QP with positional row labels.
    pub fn new(
        p: DMatrix<f64>,
        q: Vec<f64>,
        r: f64,
        a: CsMat<f64>,
        b: Vec<f64>,
        g: CsMat<f64>,
        h: Vec<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        let check = |expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(QpError::DimensionMismatch { expected, got })
            }
        };
        check(n, p.nrows())?;
        check(n, p.ncols())?;
        check(n, a.cols())?;
        check(n, g.cols())?;
        check(a.rows(), b.len())?;
        check(g.rows(), h.len())?;
        if !a.is_csr() || !g.is_csr() {
            return Err(QpError::InvalidParameter("A and G must be CSR".into()));
        }
        Ok(Self {
            p,
            q,
            r,
            ineq_labels: (0..a.rows()).map(|i| format!("ineq[{}]", i + 1)).collect(),
            eq_labels: (0..g.rows()).map(|i| format!("eq[{}]", i + 1)).collect(),
            a,
            b,
            g,
            h,
            layout: VarLayout {
                theta: 0..0,
                gen: 0..0,
                flow: 0..0,
                shed: 0..0,
            },
            injection: None,
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Number of inequality rows.
    pub fn m(&self) -> usize {
        self.b.len()
    }

    /// Number of equality rows.
    pub fn p_eq(&self) -> usize {
        self.h.len()
    }

    /// Inequality labels followed by equality labels.
    pub fn row_labels(&self) -> Vec<String> {
        self.ineq_labels
            .iter()
            .chain(&self.eq_labels)
            .cloned()
            .collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = &self.p * nalgebra::DVector::from_column_slice(x);
        0.5 * dot(x, px.as_slice()) + dot(&self.q, x) + self.r
    }

    /// `b − A x`.
    pub fn slacks(&self, x: &[f64]) -> Vec<f64> {
        csr_mul(&self.a, x)
            .iter()
            .zip(&self.b)
            .map(|(ax, b)| b - ax)
            .collect()
    }

    /// Whether demands can be re-injected (true for problems from [`build`]).
    pub fn has_load_slots(&self) -> bool {
        self.injection.is_some()
    }

    /// Number of loads the problem was built for.
    pub fn n_loads(&self) -> usize {
        self.injection.as_ref().map_or(0, |inj| inj.slots.len())
    }

    /// Writes demands `d` into `q`, `G` and `h`.
    pub fn inject_loads(&mut self, d: &LoadVector) -> Result<(), QpError> {
        if self.injection.is_none() {
            return Err(QpError::InvalidParameter(
                "problem was not built from a grid case".into(),
            ));
        }
        let data = self.load_data(d)?;
        self.q = data.q;
        self.h = data.h;
        self.g.data_mut().copy_from_slice(&data.g_data);
        Ok(())
    }

    /// The `q`, `h` and `G` values this problem would have with demands `d`,
    /// without copying `P` or `A`. A problem without load slots accepts only
    /// an empty `d` and returns its own data.
    pub fn load_data(&self, d: &LoadVector) -> Result<LoadData, QpError> {
        let mut out = LoadData {
            q: self.q.clone(),
            h: self.h.clone(),
            g_data: self.g.data().to_vec(),
        };
        let Some(inj) = self.injection.as_ref() else {
            if d.is_empty() {
                return Ok(out);
            }
            return Err(QpError::DimensionMismatch {
                expected: 0,
                got: d.len(),
            });
        };
        if d.len() != inj.slots.len() {
            return Err(QpError::DimensionMismatch {
                expected: inj.slots.len(),
                got: d.len(),
            });
        }
        out.h.copy_from_slice(&inj.h_base);
        for (slot, &dk) in inj.slots.iter().zip(d.as_slice()) {
            out.q[slot.shed_col] = inj.lambda * dk;
            out.g_data[slot.g_entry] = dk;
            out.h[slot.balance_row] += dk;
        }
        Ok(out)
    }

    /// Copy of the problem with demands `d`.
    pub fn with_loads(&self, d: &LoadVector) -> Result<Self, QpError> {
        let mut out = self.clone();
        out.inject_loads(d)?;
        Ok(out)
    }

    /// JSON dump of `(P, q, r, A, b, G, h)` with labels for external solvers.
    ///
    /// `P` is written densely by rows; `A` and `G` as `[row, col, value]`
    /// triplets with zero-based indices.
    pub fn to_json(&self) -> serde_json::Value {
        let triplets = |m: &CsMat<f64>| -> Vec<(usize, usize, f64)> {
            m.outer_iterator()
                .enumerate()
                .flat_map(|(r, row)| {
                    row.iter()
                        .map(move |(c, &v)| (r, c, v))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        let p_rows: Vec<Vec<f64>> = (0..self.n())
            .map(|i| self.p.row(i).iter().copied().collect())
            .collect();
        json!({
            "n": self.n(),
            "m": self.m(),
            "p": self.p_eq(),
            "layout": self.layout,
            "P": p_rows,
            "q": self.q,
            "r": self.r,
            "A": triplets(&self.a),
            "b": self.b,
            "G": triplets(&self.g),
            "h": self.h,
            "ineq_labels": self.ineq_labels,
            "eq_labels": self.eq_labels,
        })
    }
}

/// Load pairs `(i, j, δ_ij)` (zero-based, `i < j` for uniform δ) constrained
/// by the spread bound.
pub fn pairwise_rows(case: &GridCase) -> Vec<(usize, usize, f64)> {
    match &case.fairness.delta {
        None => Vec::new(),
        Some(Delta::Uniform(d)) => {
            let n = case.n_loads();
            (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j, *d)))
                .collect()
        }
        Some(Delta::Pairs(pairs)) => pairs.iter().map(|p| (p.i - 1, p.j - 1, p.delta)).collect(),
    }
}

/// Assembles the QP for `case` with demands `d`.
pub fn build(case: &GridCase, d: &LoadVector) -> Result<QuadraticProgram, QpError> {
    let n_loads = case.n_loads();
    if d.len() != n_loads {
        return Err(QpError::DimensionMismatch {
            expected: n_loads,
            got: d.len(),
        });
    }
    let gamma = case.fairness.gamma;
    let gamma_ok = if n_loads >= 2 {
        gamma > 1.0 && gamma <= n_loads as f64
    } else {
        gamma == 1.0
    };
    if !gamma_ok {
        return Err(QpError::InvalidParameter(format!(
            "gamma {gamma} outside (1, {n_loads}]"
        )));
    }

    let network = !case.copper_plate;
    let n_theta = if network { case.n_buses() } else { 0 };
    let n_gen = case.generators.len();
    let n_flow = case.n_lines();
    let layout = VarLayout {
        theta: 0..n_theta,
        gen: n_theta..n_theta + n_gen,
        flow: n_theta + n_gen..n_theta + n_gen + n_flow,
        shed: n_theta + n_gen + n_flow..n_theta + n_gen + n_flow + n_loads,
    };
    let n = layout.n();
    let bus_index = case.bus_index();

    let mut p = DMatrix::zeros(n, n);
    let mut q = vec![0.0; n];
    let mut r = 0.0;
    for (k, gen) in case.generators.iter().enumerate() {
        let col = layout.gen.start + k;
        p[(col, col)] = 2.0 * gen.a;
        q[col] = gen.b_lin;
        r += gen.c;
    }

    // Equalities.
    let mut eq_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut eq_labels = Vec::new();
    let mut h_base = Vec::new();
    let mut load_rows = vec![0usize; n_loads];
    if network {
        for (l, line) in case.lines.iter().enumerate() {
            let b = case.susceptance_mw(line);
            eq_rows.push(vec![
                (layout.flow.start + l, 1.0),
                (layout.theta.start + bus_index[&line.from], -b),
                (layout.theta.start + bus_index[&line.to], b),
            ]);
            eq_labels.push(format!("flow_def[{}]", l + 1));
            h_base.push(0.0);
        }
        let first_balance = eq_rows.len();
        for bus in &case.buses {
            eq_rows.push(Vec::new());
            eq_labels.push(format!("balance[{}]", bus.id));
            h_base.push(0.0);
        }
        for (k, gen) in case.generators.iter().enumerate() {
            eq_rows[first_balance + bus_index[&gen.bus]].push((layout.gen.start + k, 1.0));
        }
        for (l, line) in case.lines.iter().enumerate() {
            eq_rows[first_balance + bus_index[&line.from]].push((layout.flow.start + l, -1.0));
            eq_rows[first_balance + bus_index[&line.to]].push((layout.flow.start + l, 1.0));
        }
        for (k, load) in case.loads.iter().enumerate() {
            let row = first_balance + bus_index[&load.bus];
            eq_rows[row].push((layout.shed.start + k, 0.0));
            load_rows[k] = row;
        }
        let reference = case.reference_bus().ok_or_else(|| {
            QpError::InvalidParameter("network case without a reference bus".into())
        })?;
        eq_rows.push(vec![(layout.theta.start + reference, 1.0)]);
        eq_labels.push("ref_angle".into());
        h_base.push(0.0);
    } else {
        let mut row: Vec<(usize, f64)> = layout.gen.clone().map(|c| (c, 1.0)).collect();
        row.extend(layout.shed.clone().map(|c| (c, 0.0)));
        eq_rows.push(row);
        eq_labels.push("balance".into());
        h_base.push(0.0);
    }
    let g = csr_from_rows(n, &eq_rows);

    // Inequalities.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut b = Vec::new();
    let mut labels = Vec::new();
    let mut push = |row: Vec<(usize, f64)>, rhs: f64, label: String| {
        rows.push(row);
        b.push(rhs);
        labels.push(label);
    };
    if network {
        for (i, bus) in case.buses.iter().enumerate() {
            push(vec![(layout.theta.start + i, -1.0)], -bus.theta_min, format!("theta_lower[{}]", bus.id));
        }
        for (i, bus) in case.buses.iter().enumerate() {
            push(vec![(layout.theta.start + i, 1.0)], bus.theta_max, format!("theta_upper[{}]", bus.id));
        }
    }
    for (k, gen) in case.generators.iter().enumerate() {
        push(vec![(layout.gen.start + k, -1.0)], -gen.g_min, format!("gen_lower[{}]", k + 1));
    }
    for (k, gen) in case.generators.iter().enumerate() {
        push(vec![(layout.gen.start + k, 1.0)], gen.g_max, format!("gen_upper[{}]", k + 1));
    }
    if network {
        for (l, line) in case.lines.iter().enumerate() {
            push(vec![(layout.flow.start + l, -1.0)], -line.f_min, format!("flow_lower[{}]", l + 1));
        }
        for (l, line) in case.lines.iter().enumerate() {
            push(vec![(layout.flow.start + l, 1.0)], line.f_max, format!("flow_upper[{}]", l + 1));
        }
    }
    for k in 0..n_loads {
        push(vec![(layout.shed.start + k, -1.0)], 0.0, format!("shed_lower[{}]", k + 1));
    }
    for (k, load) in case.loads.iter().enumerate() {
        push(vec![(layout.shed.start + k, 1.0)], load.s_max, format!("shed_upper[{}]", k + 1));
    }
    let share = gamma / n_loads.max(1) as f64;
    for k in 0..n_loads {
        let row = (0..n_loads)
            .map(|j| {
                let coef = if j == k { 1.0 - share } else { -share };
                (layout.shed.start + j, coef)
            })
            .collect();
        push(row, 0.0, format!("fair_prop[{}]", k + 1));
    }
    for (i, j, delta) in pairwise_rows(case) {
        let (si, sj) = (layout.shed.start + i, layout.shed.start + j);
        push(vec![(si, 1.0), (sj, -1.0)], delta, format!("fair_pair[{},{}]", i + 1, j + 1));
        push(vec![(sj, 1.0), (si, -1.0)], delta, format!("fair_pair[{},{}]", j + 1, i + 1));
    }
    for (k, v) in case.features.iter().enumerate() {
        let row = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(j, &x)| (layout.shed.start + j, x))
            .collect();
        push(row, case.fairness.epsilon, format!("fair_feat[k={}]", k + 1));
    }
    let a = csr_from_rows(n, &rows);

    let slots = (0..n_loads)
        .map(|k| {
            let shed_col = layout.shed.start + k;
            let balance_row = load_rows[k];
            let g_entry = g
                .nnz_index(balance_row, shed_col)
                .expect("balance row holds every load coefficient")
                .0;
            LoadSlot {
                shed_col,
                balance_row,
                g_entry,
            }
        })
        .collect();

    let mut qp = QuadraticProgram {
        p,
        q,
        r,
        a,
        b,
        h: h_base.clone(),
        g,
        layout,
        ineq_labels: labels,
        eq_labels,
        injection: Some(LoadInjection {
            lambda: case.lambda,
            slots,
            h_base,
        }),
    };
    qp.inject_loads(d)?;
    Ok(qp)
}

/// Row positions keyed by label, for tests and diagnostics.
pub fn label_index(qp: &QuadraticProgram) -> HashMap<String, usize> {
    qp.ineq_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_file::parse_case;
    use crate::testing::{three_bus, triangle_case};

    fn row(m: &CsMat<f64>, i: usize) -> Vec<(usize, f64)> {
        m.outer_view(i).unwrap().iter().map(|(c, &v)| (c, v)).collect()
    }

    #[test]
    fn three_bus_structure() {
        let case = three_bus();
        let qp = build(&case, &LoadVector::from_case(&case)).unwrap();
        assert_eq!(qp.n(), 5);
        assert_eq!(qp.p_eq(), 1);
        assert_eq!(row(&qp.g, 0), vec![(0, 1.0), (1, 1.0), (2, 20.0), (3, 30.0), (4, 40.0)]);
        assert_eq!(qp.h, vec![90.0]);
        assert_eq!(qp.q, vec![3.0, 1.0, 20_000.0, 30_000.0, 40_000.0]);
        assert_eq!(qp.p[(0, 0)], 2.0);
        assert_eq!(qp.p[(1, 1)], 4.0);
        let idx = label_index(&qp);
        for k in 1..=3 {
            let r = row(&qp.a, idx[&format!("fair_prop[{k}]")]);
            for (c, v) in r {
                let expected = if c == 1 + k { 0.5 } else { -0.5 };
                assert_eq!(v, expected);
            }
        }
        // 2·2 gen bounds + 2·3 shed bounds + 3 proportionality rows.
        assert_eq!(qp.m(), 13);
        assert_eq!(qp.row_labels().len(), 14);
    }

    #[test]
    fn zero_lambda_and_loads_leave_generation_cost() {
        let mut case = three_bus();
        case.lambda = 0.0;
        case.generators[0].c = 7.0;
        let qp = build(&case, &LoadVector::new(vec![0.0; 3]).unwrap()).unwrap();
        assert!(qp.q[qp.layout.shed.clone()].iter().all(|&v| v == 0.0));
        assert_eq!(qp.r, 7.0);
    }

    #[test]
    fn single_feature_row() {
        let mut case = three_bus();
        case.features = vec![vec![1.0, 0.0, 0.0]];
        case.fairness.epsilon = 0.0;
        let qp = build(&case, &LoadVector::from_case(&case)).unwrap();
        let i = label_index(&qp)["fair_feat[k=1]"];
        assert_eq!(row(&qp.a, i), vec![(qp.layout.shed.start, 1.0)]);
        assert_eq!(qp.b[i], 0.0);
    }

    #[test]
    fn pair_enumeration() {
        let mut case = three_bus();
        case.fairness.delta = Some(Delta::Uniform(0.1));
        let pairs: Vec<(usize, usize)> = pairwise_rows(&case).iter().map(|p| (p.0, p.1)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
        let qp = build(&case, &LoadVector::from_case(&case)).unwrap();
        assert_eq!(qp.m(), 13 + 6);

        let single = parse_case("[case]\ncopper_plate 1\n[bus]\n1 1\n[gen]\n1 1 0 0 0 10\n[load]\n1 5\n[fairness]\ndelta 0.1\n").unwrap();
        assert!(pairwise_rows(&single).is_empty());

        case.fairness.delta = Some(Delta::Pairs(vec![crate::grid::PairBound { i: 1, j: 3, delta: 0.05 }]));
        assert_eq!(pairwise_rows(&case), vec![(0, 2, 0.05)]);
        let qp = build(&case, &LoadVector::from_case(&case)).unwrap();
        assert_eq!(qp.m(), 15);
    }

    #[test]
    fn row_count_formula_on_network() {
        let case = triangle_case();
        let qp = build(&case, &LoadVector::from_case(&case)).unwrap();
        let n_theta = case.n_buses();
        let n_g = case.generators.len();
        let l = case.lines.len();
        let n_d = case.n_loads();
        let pairs = pairwise_rows(&case).len();
        let k = case.features.len();
        assert_eq!(qp.m(), 2 * n_theta + 2 * n_g + 2 * l + 2 * n_d + n_d + 2 * pairs + k);
        assert_eq!(qp.p_eq(), l + case.n_buses() + 1);
        assert_eq!(qp.row_labels().len(), qp.m() + qp.p_eq());
    }

    #[test]
    fn reinjection_matches_fresh_build() {
        let case = triangle_case();
        let base = build(&case, &LoadVector::from_case(&case)).unwrap();
        let d = LoadVector::new(vec![12.0, 0.0, 31.5]).unwrap();
        let fresh = build(&case, &d).unwrap();
        let moved = base.with_loads(&d).unwrap();
        assert_eq!(moved.q, fresh.q);
        assert_eq!(moved.h, fresh.h);
        assert_eq!(moved.g, fresh.g);
    }

    #[test]
    fn dimension_and_gamma_errors() {
        let case = three_bus();
        assert!(matches!(
            build(&case, &LoadVector::new(vec![1.0]).unwrap()),
            Err(QpError::DimensionMismatch { expected: 3, got: 1 })
        ));
        let mut bad = three_bus();
        bad.fairness.gamma = 4.0;
        assert!(build(&bad, &LoadVector::from_case(&bad)).is_err());
    }
}
