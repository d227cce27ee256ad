//! Grid case description and DC power-flow network matrices.
//!
//! Line flows follow `f = K θ` where the row of `K` for line `(i, j)` is
//! `b_ij (e_i − e_j)ᵀ`. The incidence matrix `A` has `+1` at the from-bus and
//! `−1` at the to-bus of each line, so `(A f)_i` is the net flow leaving bus
//! `i` and nodal balance reads `(A f)_i = g_i − (1 − s_i) d_i`.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CaseError;

/// Default load-shed weight when a case does not set one.
pub const DEFAULT_LAMBDA: f64 = 1.0e4;

fn default_theta_min() -> f64 {
    -FRAC_PI_2
}

fn default_theta_max() -> f64 {
    FRAC_PI_2
}

fn default_s_max() -> f64 {
    1.0
}

fn default_base_mva() -> f64 {
    100.0
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: i64,
    #[serde(default = "default_theta_min")]
    pub theta_min: f64,
    #[serde(default = "default_theta_max")]
    pub theta_max: f64,
    #[serde(default)]
    pub is_reference: bool,
}

/// A transmission line. `b` is the per-unit susceptance (inverse reactance);
/// flow limits are in MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: i64,
    pub to: i64,
    pub b: f64,
    pub f_min: f64,
    pub f_max: f64,
}

/// Generator with cost `a g² + b_lin g + c` and output limits in MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: i64,
    pub a: f64,
    pub b_lin: f64,
    pub c: f64,
    pub g_min: f64,
    pub g_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPoint {
    pub bus: i64,
    /// Demand in MW.
    pub d: f64,
    /// Largest admissible shed fraction.
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

/// One entry of a per-pair spread bound. Loads are numbered from 1 in
/// load-table order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBound {
    pub i: usize,
    pub j: usize,
    pub delta: f64,
}

/// Spread bound `|s_i − s_j| ≤ δ_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delta {
    /// Same bound for every unordered pair of loads.
    Uniform(f64),
    /// Bounds for the listed pairs only.
    Pairs(Vec<PairBound>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessParams {
    /// Proportionality cap: `s_i ≤ (γ/N) Σ s_j`. Defaults to `N` (the number
    /// of loads) when a case leaves it out.
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Delta>,
    /// Threshold on `vᵏᵀ s` for every feature vector.
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<LoadPoint>,
    /// `K` feature vectors, one entry per load, each in `[0, 1]`.
    #[serde(default)]
    pub features: Vec<Vec<f64>>,
    pub fairness: FairnessParams,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub copper_plate: bool,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        if self.copper_plate {
            0
        } else {
            self.lines.len()
        }
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    /// Demands in load-table order.
    pub fn demands(&self) -> Vec<f64> {
        self.loads.iter().map(|l| l.d).collect()
    }

    /// Map from bus id to its position in `buses`.
    pub fn bus_index(&self) -> HashMap<i64, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    /// Position of the reference bus, if any.
    pub fn reference_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.is_reference)
    }

    /// Line susceptance in MW per radian.
    pub fn susceptance_mw(&self, line: &Line) -> f64 {
        line.b * self.base_mva
    }

    /// Checks every structural and parameter invariant of the case.
    pub fn validate(&self) -> Result<(), CaseError> {
        let inv = |msg: String| Err(CaseError::Invariant(msg));
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return inv(format!("base_mva must be positive, got {}", self.base_mva));
        }
        if self.buses.is_empty() {
            return inv("case has no buses".into());
        }
        let index = self.bus_index();
        if index.len() != self.buses.len() {
            return inv("duplicate bus id".into());
        }
        for b in &self.buses {
            if !(b.theta_min <= b.theta_max) {
                return inv(format!("bus {}: theta_min > theta_max", b.id));
            }
        }
        if !self.copper_plate {
            let refs = self.buses.iter().filter(|b| b.is_reference).count();
            if refs != 1 {
                return inv(format!("network case needs exactly one reference bus, found {refs}"));
            }
        }
        let bus_exists = |what: &str, id: i64| {
            if index.contains_key(&id) {
                Ok(())
            } else {
                Err(CaseError::DanglingBus {
                    what: what.to_string(),
                    bus: id,
                })
            }
        };
        for (k, l) in self.lines.iter().enumerate() {
            bus_exists(&format!("line {}", k + 1), l.from)?;
            bus_exists(&format!("line {}", k + 1), l.to)?;
            if l.from == l.to {
                return inv(format!("line {} is a self-loop", k + 1));
            }
            if !(l.b > 0.0 && l.b.is_finite()) {
                return inv(format!("line {}: susceptance must be positive", k + 1));
            }
            if !(l.f_min <= l.f_max) {
                return inv(format!("line {}: f_min > f_max", k + 1));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            bus_exists(&format!("generator {}", k + 1), g.bus)?;
            if !(g.a >= 0.0) {
                return inv(format!("generator {}: quadratic cost must be >= 0", k + 1));
            }
            if !(g.g_min <= g.g_max) {
                return inv(format!("generator {}: g_min > g_max", k + 1));
            }
        }
        for (k, l) in self.loads.iter().enumerate() {
            bus_exists(&format!("load {}", k + 1), l.bus)?;
            if !(l.d >= 0.0 && l.d.is_finite()) {
                return inv(format!("load {}: demand must be >= 0", k + 1));
            }
            if !(0.0..=1.0).contains(&l.s_max) {
                return inv(format!("load {}: s_max must lie in [0, 1]", k + 1));
            }
        }
        let n = self.n_loads();
        for (k, v) in self.features.iter().enumerate() {
            if v.len() != n {
                return inv(format!(
                    "feature {} has {} entries, expected one per load ({n})",
                    k + 1,
                    v.len()
                ));
            }
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return inv(format!("feature {} is not normalized to [0, 1]", k + 1));
            }
        }
        self.validate_fairness()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return inv(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        Ok(())
    }

    fn validate_fairness(&self) -> Result<(), CaseError> {
        let inv = |msg: String| Err(CaseError::Invariant(msg));
        let n = self.n_loads();
        let gamma = self.fairness.gamma;
        if n >= 2 {
            if !(gamma > 1.0 && gamma <= n as f64) {
                return inv(format!("gamma must lie in (1, {n}], got {gamma}"));
            }
        } else if gamma != 1.0 && n == 1 {
            return inv(format!("gamma must be 1 for a single load, got {gamma}"));
        }
        if !(self.fairness.epsilon >= 0.0 && self.fairness.epsilon.is_finite()) {
            return inv("epsilon must be finite and >= 0".into());
        }
        match &self.fairness.delta {
            None => {}
            Some(Delta::Uniform(d)) => {
                if !(*d >= 0.0 && d.is_finite()) {
                    return inv("delta must be finite and >= 0".into());
                }
            }
            Some(Delta::Pairs(pairs)) => {
                for p in pairs {
                    if p.i == 0 || p.j == 0 || p.i > n || p.j > n || p.i == p.j {
                        return inv(format!("delta pair ({}, {}) is not a pair of loads", p.i, p.j));
                    }
                    if !(p.delta >= 0.0 && p.delta.is_finite()) {
                        return inv(format!("delta for pair ({}, {}) must be >= 0", p.i, p.j));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `K` (lines × buses): row `ℓ = (i, j)` is `b_ij (e_i − e_j)ᵀ`, `b` in MW/rad.
pub fn flow_matrix(case: &GridCase) -> Result<DMatrix<f64>, CaseError> {
    if case.copper_plate {
        return Err(CaseError::Unsupported(
            "flow matrix is undefined for a copper-plate case".into(),
        ));
    }
    let index = case.bus_index();
    let mut k = DMatrix::zeros(case.lines.len(), case.n_buses());
    for (row, line) in case.lines.iter().enumerate() {
        let b = case.susceptance_mw(line);
        k[(row, index[&line.from])] = b;
        k[(row, index[&line.to])] = -b;
    }
    Ok(k)
}

/// Incidence matrix (buses × lines), `+1` at the from-bus and `−1` at the to-bus.
pub fn incidence_matrix(case: &GridCase) -> Result<DMatrix<f64>, CaseError> {
    if case.copper_plate {
        return Err(CaseError::Unsupported(
            "incidence matrix is undefined for a copper-plate case".into(),
        ));
    }
    let index = case.bus_index();
    let mut a = DMatrix::zeros(case.n_buses(), case.lines.len());
    for (col, line) in case.lines.iter().enumerate() {
        a[(index[&line.from], col)] = 1.0;
        a[(index[&line.to], col)] = -1.0;
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: i64, is_reference: bool) -> Bus {
        Bus {
            id,
            theta_min: -FRAC_PI_2,
            theta_max: FRAC_PI_2,
            is_reference,
        }
    }

    fn line(from: i64, to: i64, b: f64) -> Line {
        Line {
            from,
            to,
            b,
            f_min: -100.0,
            f_max: 100.0,
        }
    }

    pub(crate) fn network(buses: usize, lines: Vec<Line>) -> GridCase {
        GridCase {
            name: "test".into(),
            base_mva: 1.0,
            buses: (1..=buses as i64).map(|i| bus(i, i == 1)).collect(),
            lines,
            generators: vec![Generator {
                bus: 1,
                a: 1.0,
                b_lin: 0.0,
                c: 0.0,
                g_min: 0.0,
                g_max: 100.0,
            }],
            loads: (1..=buses as i64)
                .map(|b| LoadPoint {
                    bus: b,
                    d: 10.0,
                    s_max: 1.0,
                })
                .collect(),
            features: vec![],
            fairness: FairnessParams {
                gamma: buses.max(1) as f64,
                delta: None,
                epsilon: 0.0,
            },
            lambda: DEFAULT_LAMBDA,
            copper_plate: false,
        }
    }

    fn triangle() -> GridCase {
        network(3, vec![line(1, 2, 1.0), line(2, 3, 1.0), line(1, 3, 1.0)])
    }

    #[test]
    fn two_bus_flow_matrix() {
        let case = network(2, vec![line(1, 2, 10.0)]);
        let k = flow_matrix(&case).unwrap();
        assert_eq!(k.as_slice(), &[10.0, -10.0]);
    }

    #[test]
    fn flow_matrix_uses_base_mva() {
        let mut case = network(2, vec![line(1, 2, 10.0)]);
        case.base_mva = 100.0;
        let k = flow_matrix(&case).unwrap();
        assert_eq!(k[(0, 0)], 1000.0);
    }

    #[test]
    fn triangle_rows_are_differences() {
        let k = flow_matrix(&triangle()).unwrap();
        for r in 0..3 {
            let row: Vec<f64> = k.row(r).iter().copied().collect();
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == -1.0).count(), 1);
        }
        let shifted = &k * nalgebra::DVector::from_element(3, 1.0);
        assert!(shifted.amax() == 0.0);
    }

    #[test]
    fn incidence_signs_and_column_sums() {
        let case = network(2, vec![line(1, 2, 10.0)]);
        let a = incidence_matrix(&case).unwrap();
        assert_eq!(a.as_slice(), &[1.0, -1.0]);
        let t = incidence_matrix(&triangle()).unwrap();
        for c in 0..3 {
            assert_eq!(t.column(c).sum(), 0.0);
        }
    }

    #[test]
    fn lossless_balance_on_triangle() {
        let case = triangle();
        let a = incidence_matrix(&case).unwrap();
        let k = flow_matrix(&case).unwrap();
        let theta = nalgebra::DVector::from_column_slice(&[0.3, -0.7, 0.11]);
        let p = &a * (&k * &theta);
        // Direct summation of flows leaving each bus.
        let mut direct = [0.0; 3];
        for l in &case.lines {
            let (i, j) = ((l.from - 1) as usize, (l.to - 1) as usize);
            let f = l.b * (theta[i] - theta[j]);
            direct[i] += f;
            direct[j] -= f;
        }
        for i in 0..3 {
            assert!((p[i] - direct[i]).abs() < 1e-14);
        }
        assert!(p.sum().abs() < 1e-14);
    }

    #[test]
    fn copper_plate_rejects_network_matrices() {
        let mut case = triangle();
        case.copper_plate = true;
        assert!(matches!(flow_matrix(&case), Err(CaseError::Unsupported(_))));
        assert!(matches!(incidence_matrix(&case), Err(CaseError::Unsupported(_))));
    }

    #[test]
    fn validation_catches_bad_parameters() {
        let mut case = triangle();
        case.generators[0].g_min = 200.0;
        assert!(matches!(case.validate(), Err(CaseError::Invariant(m)) if m.contains("g_min")));

        let mut case = triangle();
        case.lines[0].to = 99;
        assert!(matches!(case.validate(), Err(CaseError::DanglingBus { bus: 99, .. })));

        let mut case = triangle();
        case.fairness.gamma = 1.0;
        assert!(case.validate().is_err());

        let mut case = triangle();
        case.features = vec![vec![0.5, 1.2, 0.0]];
        assert!(case.validate().is_err());

        let mut case = triangle();
        case.buses[1].is_reference = true;
        assert!(case.validate().is_err());
    }
}
