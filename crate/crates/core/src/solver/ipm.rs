//! Mehrotra predictor–corrector interior-point method for convex QPs.
//!
//! Works on an internally row-scaled copy of the problem. Each iteration
//! factors the augmented system
//!
//! ```text
//! [ P + Aᵀ diag(μ/z) A + δI   Gᵀ ] [dx]   [r₁]
//! [ G                        −δI ] [dw] = [r₂]
//! ```
//!
//! once and reuses the factor for the predictor and corrector solves.

use sprs::CsMat;

use crate::linalg::{csr_mul, csr_mul_t, dot, factor, norm_inf};
use crate::qp::QuadraticProgram;

/// Static regularization added to the augmented system.
const REG: f64 = 1e-10;
/// Fraction of the distance to the boundary taken per step.
const STEP_FRACTION: f64 = 0.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmOutcome {
    Converged,
    MaxIterations,
    /// Dual variables diverged along a Farkas-type direction.
    InfeasibleCertificate,
    NumericalFailure,
}

/// Iterates of the IPM in the original (unscaled) units.
#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub outcome: IpmOutcome,
    pub x: Vec<f64>,
    /// Inequality slacks `b − A x` tracked by the method.
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
    pub iterations: usize,
    /// Per-row ratios `z⁺/z` and `μ⁺/μ` over the final step. Near
    /// convergence the slack ratio tends to 0 on active rows and the dual
    /// ratio to 0 on inactive ones, independently of scaling.
    pub tapia: Option<(Vec<f64>, Vec<f64>)>,
}

struct Scaled {
    p: nalgebra::DMatrix<f64>,
    q: Vec<f64>,
    a: CsMat<f64>,
    b: Vec<f64>,
    g: CsMat<f64>,
    h: Vec<f64>,
    row_a: Vec<f64>,
    row_g: Vec<f64>,
    obj: f64,
}

fn row_scales(m: &CsMat<f64>) -> Vec<f64> {
    m.outer_iterator()
        .map(|r| {
            let big = r.iter().fold(0.0_f64, |acc, (_, v)| acc.max(v.abs()));
            if big > 0.0 {
                1.0 / big
            } else {
                1.0
            }
        })
        .collect()
}

fn scale_rows(m: &CsMat<f64>, s: &[f64]) -> CsMat<f64> {
    let mut out = m.clone();
    let indptr = out.indptr().to_owned();
    let data = out.data_mut();
    for (r, sr) in s.iter().enumerate() {
        let range = indptr.outer_inds_sz(r);
        for v in &mut data[range] {
            *v *= sr;
        }
    }
    out
}

fn scale(qp: &QuadraticProgram) -> Scaled {
    let row_a = row_scales(&qp.a);
    let row_g = row_scales(&qp.g);
    let pmax = qp.p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let obj = 1.0 / pmax.max(norm_inf(&qp.q)).max(1.0);
    Scaled {
        p: &qp.p * obj,
        q: qp.q.iter().map(|v| v * obj).collect(),
        a: scale_rows(&qp.a, &row_a),
        b: qp.b.iter().zip(&row_a).map(|(b, s)| b * s).collect(),
        g: scale_rows(&qp.g, &row_g),
        h: qp.h.iter().zip(&row_g).map(|(h, s)| h * s).collect(),
        row_a,
        row_g,
        obj,
    }
}

/// Largest `t ∈ (0, 1]` with `v + t·dv ≥ 0` (times the boundary fraction).
fn max_step(v: &[f64], dv: &[f64], fraction: f64) -> f64 {
    let mut t = 1.0_f64;
    for (vi, di) in v.iter().zip(dv) {
        if *di < 0.0 {
            t = t.min(-fraction * vi / di);
        }
    }
    t
}

struct Newton {
    dx: Vec<f64>,
    dz: Vec<f64>,
    dmu: Vec<f64>,
    dw: Vec<f64>,
}

pub(crate) fn solve_ipm(
    qp: &QuadraticProgram,
    tol_feas: f64,
    tol_comp: f64,
    max_iter: usize,
) -> IpmResult {
    let s = scale(qp);
    let n = qp.n();
    let m = qp.m();
    let p = qp.p_eq();
    let dim = n + p;

    let mut x = vec![0.0; n];
    let mut w = vec![0.0; p];
    let ax0 = csr_mul(&s.a, &x);
    let mut z: Vec<f64> = s.b.iter().zip(&ax0).map(|(b, ax)| (b - ax).max(1.0)).collect();
    let mut mu = vec![1.0; m];

    let b_norm = 1.0 + norm_inf(&s.b);
    let h_norm = 1.0 + norm_inf(&s.h);
    let q_norm = 1.0 + norm_inf(&s.q);
    let mut outcome = IpmOutcome::MaxIterations;
    let mut iterations = 0;
    let mut tapia = None;

    for iter in 0..max_iter {
        iterations = iter;
        let ax = csr_mul(&s.a, &x);
        let gx = csr_mul(&s.g, &x);
        let px = &s.p * nalgebra::DVector::from_column_slice(&x);
        let atmu = csr_mul_t(&s.a, &mu);
        let gtw = csr_mul_t(&s.g, &w);
        let r_d: Vec<f64> = (0..n).map(|i| px[i] + s.q[i] + atmu[i] + gtw[i]).collect();
        let r_p: Vec<f64> = (0..m).map(|i| ax[i] + z[i] - s.b[i]).collect();
        let r_e: Vec<f64> = (0..p).map(|i| gx[i] - s.h[i]).collect();
        let comp = dot(&z, &mu);
        let gap = if m > 0 { comp / m as f64 } else { 0.0 };
        let obj = 0.5 * dot(&x, px.as_slice()) + dot(&s.q, &x);

        if norm_inf(&r_p) <= tol_feas * b_norm
            && norm_inf(&r_e) <= tol_feas * h_norm
            && norm_inf(&r_d) <= tol_feas * q_norm
            && comp <= tol_comp * (1.0 + obj.abs())
        {
            outcome = IpmOutcome::Converged;
            break;
        }

        // Farkas-type certificate: normalized duals whose constraint
        // combination vanishes while the right-hand side is negative.
        let dual_mass: f64 = mu.iter().sum::<f64>() + w.iter().map(|v| v.abs()).sum::<f64>();
        if dual_mass > 1e8 {
            let combo: Vec<f64> = (0..n).map(|i| (atmu[i] + gtw[i]) / dual_mass).collect();
            let rhs = (dot(&s.b, &mu) + dot(&s.h, &w)) / dual_mass;
            if norm_inf(&combo) < 1e-7 && rhs < -1e-7 {
                outcome = IpmOutcome::InfeasibleCertificate;
                break;
            }
        }

        // Augmented matrix, lower triangle, column-major.
        let mut kkt = vec![0.0; dim * dim];
        for c in 0..n {
            for r in c..n {
                kkt[r + c * dim] = s.p[(r, c)];
            }
            kkt[c + c * dim] += REG;
        }
        for (i, row) in s.a.outer_iterator().enumerate() {
            let d = mu[i] / z[i];
            let entries: Vec<(usize, f64)> = row.iter().map(|(c, &v)| (c, v)).collect();
            for &(cj, vj) in &entries {
                let t = d * vj;
                for &(ck, vk) in &entries {
                    if ck >= cj {
                        kkt[ck + cj * dim] += t * vk;
                    }
                }
            }
        }
        for (r, row) in s.g.outer_iterator().enumerate() {
            for (c, &v) in row.iter() {
                kkt[(n + r) + c * dim] = v;
            }
            kkt[(n + r) + (n + r) * dim] = -REG;
        }
        let Ok(fact) = factor(kkt, dim, 0.0) else {
            outcome = IpmOutcome::NumericalFailure;
            break;
        };

        let newton = |r_c: &[f64]| -> Newton {
            // rhs₁ = −r_d − Aᵀ[(r_c + μ∘r_p)/z]
            let tmp: Vec<f64> = (0..m).map(|i| (r_c[i] + mu[i] * r_p[i]) / z[i]).collect();
            let at = csr_mul_t(&s.a, &tmp);
            let mut rhs: Vec<f64> = (0..n).map(|i| -r_d[i] - at[i]).collect();
            rhs.extend(r_e.iter().map(|v| -v));
            fact.solve_in_place(&mut rhs);
            let dx = rhs[..n].to_vec();
            let dw = rhs[n..].to_vec();
            let adx = csr_mul(&s.a, &dx);
            let dz: Vec<f64> = (0..m).map(|i| -r_p[i] - adx[i]).collect();
            let dmu: Vec<f64> = (0..m).map(|i| (r_c[i] - mu[i] * dz[i]) / z[i]).collect();
            Newton { dx, dz, dmu, dw }
        };

        // Predictor.
        let rc_aff: Vec<f64> = (0..m).map(|i| -z[i] * mu[i]).collect();
        let aff = newton(&rc_aff);
        let alpha_aff = max_step(&z, &aff.dz, 1.0).min(max_step(&mu, &aff.dmu, 1.0));
        let gap_aff = if m > 0 {
            (0..m)
                .map(|i| (z[i] + alpha_aff * aff.dz[i]) * (mu[i] + alpha_aff * aff.dmu[i]))
                .sum::<f64>()
                / m as f64
        } else {
            0.0
        };
        let sigma = if gap > 0.0 { (gap_aff / gap).powi(3).min(1.0) } else { 0.0 };

        // Corrector.
        let rc: Vec<f64> = (0..m)
            .map(|i| -z[i] * mu[i] - aff.dz[i] * aff.dmu[i] + sigma * gap)
            .collect();
        let step = newton(&rc);
        let alpha = max_step(&z, &step.dz, STEP_FRACTION).min(max_step(&mu, &step.dmu, STEP_FRACTION));

        for i in 0..n {
            x[i] += alpha * step.dx[i];
        }
        let mut z_ratio = vec![0.0; m];
        let mut mu_ratio = vec![0.0; m];
        for i in 0..m {
            let z_new = (z[i] + alpha * step.dz[i]).max(1e-300);
            let mu_new = (mu[i] + alpha * step.dmu[i]).max(1e-300);
            z_ratio[i] = z_new / z[i];
            mu_ratio[i] = mu_new / mu[i];
            z[i] = z_new;
            mu[i] = mu_new;
        }
        tapia = Some((z_ratio, mu_ratio));
        for i in 0..p {
            w[i] += alpha * step.dw[i];
        }
        iterations = iter + 1;
        if !x.iter().all(|v| v.is_finite()) {
            outcome = IpmOutcome::NumericalFailure;
            break;
        }
    }

    IpmResult {
        outcome,
        z: z.iter().zip(&s.row_a).map(|(z, r)| z / r).collect(),
        mu: mu.iter().zip(&s.row_a).map(|(mu, r)| mu * r / s.obj).collect(),
        w: w.iter().zip(&s.row_g).map(|(w, r)| w * r / s.obj).collect(),
        x,
        iterations,
        tapia,
    }
}
