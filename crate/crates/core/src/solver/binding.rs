//! Binding-status classification.
//!
//! The dual test `μ_i > tol_mu` is cross-checked against the slack test
//! `b_i − A_i x < tol_slack`. On a degenerate optimum a row can be active
//! with a zero dual; such rows are reported as weakly active. When the solve
//! produced an optimal basis, its rows are included in `τ` as well, so the
//! pattern always yields a nonsingular reduced KKT system.

use serde::{Deserialize, Serialize};

use crate::error::BindingError;
use crate::linalg::norm_inf;
use crate::qp::QuadraticProgram;

use super::{PrimalDualSolution, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingSource {
    DualThreshold,
    SlackThreshold,
    /// Rows of the solver's optimal basis (dual-positive rows included).
    OptimalBasis,
    Predicted,
}

/// `τ` over the inequality rows, in `QuadraticProgram` row order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingPattern {
    pub tau: Vec<bool>,
    pub source: BindingSource,
}

impl BindingPattern {
    pub fn new(tau: Vec<bool>, source: BindingSource) -> Self {
        Self { tau, source }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Indices of binding rows, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.tau
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| t.then_some(i))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.tau.iter().filter(|t| **t).count()
    }
}

/// A row where the dual and slack tests disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub row: usize,
    pub label: String,
    pub mu: f64,
    pub slack: f64,
    /// Active with a zero dual (the expected, benign kind of mismatch).
    pub weakly_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingReport {
    pub pattern: BindingPattern,
    pub dual_based: Vec<bool>,
    pub slack_based: Vec<bool>,
    pub mismatches: Vec<Mismatch>,
}

impl BindingReport {
    /// Rows where the dual and slack tests agree.
    pub fn agreements(&self) -> usize {
        self.dual_based.len() - self.mismatches.len()
    }
}

/// Thresholds for [`binding_status_with`]. `None` selects the scale-relative
/// defaults `1e-6·(1 + ‖μ‖∞)` and `1e-6·(1 + |b_i|)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BindingTolerances {
    pub tol_mu: Option<f64>,
    pub tol_slack: Option<f64>,
}

pub fn binding_status(
    sol: &PrimalDualSolution,
    qp: &QuadraticProgram,
) -> Result<BindingReport, BindingError> {
    binding_status_with(sol, qp, BindingTolerances::default())
}

pub fn binding_status_with(
    sol: &PrimalDualSolution,
    qp: &QuadraticProgram,
    tol: BindingTolerances,
) -> Result<BindingReport, BindingError> {
    if sol.status != SolveStatus::Optimal {
        return Err(BindingError::NotOptimal(sol.status.to_string()));
    }
    let m = qp.m();
    if sol.mu.len() != m {
        return Err(BindingError::DimensionMismatch {
            expected: m,
            got: sol.mu.len(),
        });
    }
    if sol.x.len() != qp.n() {
        return Err(BindingError::DimensionMismatch {
            expected: qp.n(),
            got: sol.x.len(),
        });
    }
    let tol_mu = tol.tol_mu.unwrap_or(1e-6 * (1.0 + norm_inf(&sol.mu)));
    let slack = qp.slacks(&sol.x);
    let dual_based: Vec<bool> = sol.mu.iter().map(|&mu| mu > tol_mu).collect();
    let slack_based: Vec<bool> = slack
        .iter()
        .zip(&qp.b)
        .map(|(&s, b)| s < tol.tol_slack.unwrap_or(1e-6 * (1.0 + b.abs())))
        .collect();
    let mismatches = (0..m)
        .filter(|&i| dual_based[i] != slack_based[i])
        .map(|i| Mismatch {
            row: i,
            label: qp.ineq_labels[i].clone(),
            mu: sol.mu[i],
            slack: slack[i],
            weakly_active: slack_based[i] && !dual_based[i],
        })
        .collect();
    let mut tau = dual_based.clone();
    for &row in &sol.basis {
        tau[row] = true;
    }
    let source = if sol.basis.is_empty() {
        BindingSource::DualThreshold
    } else {
        BindingSource::OptimalBasis
    };
    Ok(BindingReport {
        pattern: BindingPattern::new(tau, source),
        dual_based,
        slack_based,
        mismatches,
    })
}
