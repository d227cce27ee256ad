//! Value-at-risk and conditional value-at-risk of nodal loads.
//!
//! Each load is treated as an independent random variable. Feeding the
//! per-node CVaR (or the worst-case bound) into the fast path gives a
//! risk-averse (or robust) shedding decision.
//!
//! Empirical VaR is the lower inverse CDF, `min{z : F(z) ≥ α}`, which is the
//! `⌈α n⌉`-th order statistic with no interpolation. Empirical CVaR averages
//! every sample at or above that value, so ties are included.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::RiskError;
use crate::qp::LoadVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LoadDistribution {
    Empirical { samples: Vec<f64> },
    Normal { mean: f64, std: f64 },
}

impl LoadDistribution {
    pub fn empirical(samples: Vec<f64>) -> Result<Self, RiskError> {
        let d = Self::Empirical { samples };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(mean: f64, std: f64) -> Result<Self, RiskError> {
        let d = Self::Normal { mean, std };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        let bad = |m: &str| Err(RiskError::InvalidDistribution(m.into()));
        match self {
            Self::Empirical { samples } if samples.is_empty() => bad("no samples"),
            Self::Empirical { samples } if samples.iter().any(|s| !s.is_finite()) => {
                bad("samples must be finite")
            }
            Self::Normal { mean, std } if !mean.is_finite() || !std.is_finite() => {
                bad("mean and standard deviation must be finite")
            }
            Self::Normal { std, .. } if *std < 0.0 => bad("standard deviation must be nonnegative"),
            _ => Ok(()),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), RiskError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(RiskError::AlphaOutOfRange(alpha))
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `⌈α n⌉`, computed so that exact products like `0.95 · 100` do not round
/// up to the next integer.
fn order_index(alpha: f64, n: usize) -> usize {
    let t = alpha * n as f64;
    let k = if (t - t.round()).abs() <= 1e-9 * t.max(1.0) {
        t.round()
    } else {
        t.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Standard normal `(φ(z), z)` at `z = Φ⁻¹(α)`.
fn normal_quantile(alpha: f64) -> (f64, f64) {
    let n = Normal::standard();
    let z = n.inverse_cdf(alpha);
    (n.pdf(z), z)
}

pub fn var_alpha(dist: &LoadDistribution, alpha: f64) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    dist.validate()?;
    Ok(match dist {
        LoadDistribution::Empirical { samples } => {
            sorted(samples)[order_index(alpha, samples.len()) - 1]
        }
        LoadDistribution::Normal { mean, std } => mean + std * normal_quantile(alpha).1,
    })
}

pub fn cvar_alpha(dist: &LoadDistribution, alpha: f64) -> Result<f64, RiskError> {
    check_alpha(alpha)?;
    dist.validate()?;
    Ok(match dist {
        LoadDistribution::Empirical { samples } => {
            let s = sorted(samples);
            let var = s[order_index(alpha, s.len()) - 1];
            let first = s.partition_point(|x| *x < var);
            let tail = &s[first..];
            tail.iter().sum::<f64>() / tail.len() as f64
        }
        LoadDistribution::Normal { mean, std } => {
            mean + std * normal_quantile(alpha).0 / (1.0 - alpha)
        }
    })
}

/// Per-node CVaR at per-node risk levels.
pub fn risk_averse_loads(
    dists: &[LoadDistribution],
    alphas: &[f64],
) -> Result<LoadVector, RiskError> {
    if dists.len() != alphas.len() {
        return Err(RiskError::LengthMismatch(dists.len(), alphas.len()));
    }
    let d = dists
        .iter()
        .zip(alphas)
        .map(|(dist, &a)| cvar_alpha(dist, a))
        .collect::<Result<Vec<_>, _>>()?;
    LoadVector::new(d).map_err(|e| RiskError::InvalidDistribution(e.to_string()))
}

/// Worst-case demand: the upper end of each `(d_min, d_max)` interval.
pub fn robust_loads(bounds: &[(f64, f64)]) -> Result<LoadVector, RiskError> {
    for (index, &(d_min, d_max)) in bounds.iter().enumerate() {
        if !(d_min <= d_max) {
            return Err(RiskError::InvalidBounds {
                index,
                d_min,
                d_max,
            });
        }
    }
    LoadVector::new(bounds.iter().map(|b| b.1).collect())
        .map_err(|e| RiskError::InvalidDistribution(e.to_string()))
}

/// Parses a distribution file: a header row followed by one row per node.
/// A header of exactly `node, mean, std` selects normal distributions; any
/// other header starting with `node` means the remaining columns are
/// samples (rows may differ in length). Returns `(node id, distribution)`.
pub fn parse_distributions(text: &str) -> Result<Vec<(i64, LoadDistribution)>, RiskError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let parse_err = |line: usize, message: String| RiskError::Parse { line, message };
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty distribution file".into())),
    };
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names.first().map(String::as_str) != Some("node") {
        return Err(parse_err(1, "header must start with `node`".into()));
    }
    let normal = names == ["node", "mean", "std"];
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| parse_err(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(line, format!("`{s}` is not a number")))
        };
        let node: i64 = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("`{}` is not a node id", &rec[0])))?;
        let values = rec
            .iter()
            .skip(1)
            .filter(|s| !s.is_empty())
            .map(num)
            .collect::<Result<Vec<_>, _>>()?;
        let dist = if normal {
            if values.len() != 2 {
                return Err(parse_err(line, "expected `node, mean, std`".into()));
            }
            LoadDistribution::normal(values[0], values[1])
        } else {
            LoadDistribution::empirical(values)
        }
        .map_err(|e| parse_err(line, e.to_string()))?;
        out.push((node, dist));
    }
    Ok(out)
}

pub fn load_distributions(path: &Path) -> Result<Vec<(i64, LoadDistribution)>, RiskError> {
    let text = std::fs::read_to_string(path).map_err(|e| RiskError::Parse {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_distributions(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Acklam's rational approximation of the standard normal quantile
    /// (relative error below 1.2e-9), independent of statrs.
    fn acklam(p: f64) -> f64 {
        const A: [f64; 6] = [
            -3.969683028665376e1,
            2.209460984245205e2,
            -2.759285104469687e2,
            1.383577518672690e2,
            -3.066479806614716e1,
            2.506628277459239,
        ];
        const B: [f64; 5] = [
            -5.447609879822406e1,
            1.615858368580409e2,
            -1.556989798598866e2,
            6.680131188771972e1,
            -1.328068155288572e1,
        ];
        const C: [f64; 6] = [
            -7.784894002430293e-3,
            -3.223964580411365e-1,
            -2.400758277161838,
            -2.549732539343734,
            4.374664141464968,
            2.938163982698783,
        ];
        const D: [f64; 4] = [
            7.784695709041462e-3,
            3.224671290700398e-1,
            2.445134137142996,
            3.754408661907416,
        ];
        let tail = |q: f64| {
            (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
                / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
        };
        if p < 0.02425 {
            tail((-2.0 * p.ln()).sqrt())
        } else if p > 1.0 - 0.02425 {
            -tail((-2.0 * (1.0 - p).ln()).sqrt())
        } else {
            let q = p - 0.5;
            let r = q * q;
            (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
                / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
        }
    }

    fn one_to_hundred() -> LoadDistribution {
        LoadDistribution::empirical((1..=100).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn empirical_var_is_order_statistic() {
        assert_eq!(var_alpha(&one_to_hundred(), 0.95).unwrap(), 95.0);
        assert_eq!(var_alpha(&one_to_hundred(), 0.951).unwrap(), 96.0);
        assert_eq!(var_alpha(&one_to_hundred(), 0.001).unwrap(), 1.0);
    }

    #[test]
    fn empirical_cvar_averages_the_tail() {
        assert_eq!(cvar_alpha(&one_to_hundred(), 0.95).unwrap(), 97.5);
    }

    #[test]
    fn ties_at_var_are_included() {
        let d = LoadDistribution::empirical(vec![1.0, 5.0, 5.0, 5.0, 9.0]).unwrap();
        assert_eq!(var_alpha(&d, 0.5).unwrap(), 5.0);
        assert_eq!(cvar_alpha(&d, 0.5).unwrap(), 6.0);
    }

    #[test]
    fn normal_quantile_matches_independent_approximation() {
        let n = LoadDistribution::normal(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(var_alpha(&n, 0.95).unwrap(), 1.6449, epsilon = 1e-3);
        for p in [0.01, 0.1, 0.5, 0.9, 0.95, 0.99, 0.999] {
            assert_abs_diff_eq!(var_alpha(&n, p).unwrap(), acklam(p), epsilon = 1e-7);
        }
    }

    #[test]
    fn normal_cvar_closed_form() {
        let n = LoadDistribution::normal(0.0, 1.0).unwrap();
        let z = acklam(0.95);
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let c = cvar_alpha(&n, 0.95).unwrap();
        assert_abs_diff_eq!(c, phi / 0.05, epsilon = 1e-6);
        assert_abs_diff_eq!(c, 2.0627, epsilon = 1e-2);
    }

    #[test]
    fn empirical_cvar_converges_to_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c = cvar_alpha(&LoadDistribution::empirical(samples).unwrap(), 0.95).unwrap();
        // Tail of 5000 draws with conditional sd ≈ 0.43 gives a standard
        // error near 0.006.
        assert!((c - 2.0627).abs() < 3.0 * 0.0065, "cvar {c}");
    }

    #[test]
    fn degenerate_distributions() {
        let n = LoadDistribution::normal(42.0, 0.0).unwrap();
        let e = LoadDistribution::empirical(vec![42.0; 7]).unwrap();
        for a in [0.1, 0.5, 0.99] {
            for d in [&n, &e] {
                assert_eq!(var_alpha(d, a).unwrap(), 42.0);
                assert_eq!(cvar_alpha(d, a).unwrap(), 42.0);
            }
        }
        let out = risk_averse_loads(&[n, e], &[0.3, 0.9]).unwrap();
        assert_eq!(out.as_slice(), &[42.0, 42.0]);
    }

    #[test]
    fn per_node_alphas() {
        let dists = [
            LoadDistribution::normal(100.0, 10.0).unwrap(),
            LoadDistribution::normal(50.0, 4.0).unwrap(),
        ];
        let out = risk_averse_loads(&dists, &[0.9, 0.99]).unwrap();
        let closed = |mean: f64, std: f64, a: f64| {
            let z = acklam(a);
            mean + std * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() / (1.0 - a)
        };
        assert_abs_diff_eq!(out.as_slice()[0], closed(100.0, 10.0, 0.9), epsilon = 1e-6);
        assert_abs_diff_eq!(out.as_slice()[1], closed(50.0, 4.0, 0.99), epsilon = 1e-6);
        assert!(matches!(
            risk_averse_loads(&dists, &[0.9]),
            Err(RiskError::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn alpha_must_be_interior() {
        for a in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                var_alpha(&one_to_hundred(), a),
                Err(RiskError::AlphaOutOfRange(_))
            ));
        }
    }

    #[test]
    fn invalid_distributions() {
        assert!(LoadDistribution::empirical(vec![]).is_err());
        assert!(LoadDistribution::empirical(vec![1.0, f64::NAN]).is_err());
        assert!(LoadDistribution::normal(1.0, -1.0).is_err());
    }

    #[test]
    fn robust_takes_upper_bounds() {
        assert_eq!(robust_loads(&[(0.0, 5.0), (1.0, 7.0)]).unwrap().as_slice(), &[5.0, 7.0]);
        assert_eq!(robust_loads(&[(3.0, 3.0)]).unwrap().as_slice(), &[3.0]);
        assert!(matches!(
            robust_loads(&[(2.0, 1.0)]),
            Err(RiskError::InvalidBounds { index: 0, .. })
        ));
    }

    #[test]
    fn robust_dominates_risk_averse_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dists: Vec<LoadDistribution> = (0..4)
            .map(|i| {
                let lo = 10.0 * i as f64;
                LoadDistribution::empirical(
                    (0..500).map(|_| lo + 20.0 * rand::Rng::random::<f64>(&mut rng)).collect(),
                )
                .unwrap()
            })
            .collect();
        let bounds: Vec<(f64, f64)> = (0..4).map(|i| (10.0 * i as f64, 10.0 * i as f64 + 20.0)).collect();
        let r = robust_loads(&bounds).unwrap();
        let c = risk_averse_loads(&dists, &[0.99; 4]).unwrap();
        for (a, b) in r.as_slice().iter().zip(c.as_slice()) {
            assert!(a >= b);
        }
    }

    #[test]
    fn parses_both_file_layouts() {
        let normal = parse_distributions("node,mean,std\n3, 100, 5\n7,20,0\n").unwrap();
        assert_eq!(normal[0], (3, LoadDistribution::Normal { mean: 100.0, std: 5.0 }));
        let samples = parse_distributions("node,samples\n# comment\n1,1,2,3\n2,4\n").unwrap();
        assert_eq!(samples[0].1, LoadDistribution::Empirical { samples: vec![1.0, 2.0, 3.0] });
        assert_eq!(samples[1].1, LoadDistribution::Empirical { samples: vec![4.0] });
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_distributions("node,mean,std\n1,2,3\n2,x,1\n").unwrap_err();
        assert!(matches!(err, RiskError::Parse { line: 3, .. }), "{err:?}");
        assert!(parse_distributions("bus,mean,std\n").is_err());
        assert!(parse_distributions("node,mean,std\n1,2,-1\n").is_err());
    }

    fn samples() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 1..200)
    }

    proptest! {
        #[test]
        fn cvar_at_least_var(s in samples(), alpha in 0.01f64..0.99) {
            let d = LoadDistribution::empirical(s).unwrap();
            prop_assert!(cvar_alpha(&d, alpha).unwrap() >= var_alpha(&d, alpha).unwrap());
        }

        #[test]
        fn cvar_translation_and_scaling(s in samples(), alpha in 0.01f64..0.99,
                                        a in 0.1f64..10.0, c in -100f64..100.0) {
            let base = cvar_alpha(&LoadDistribution::empirical(s.clone()).unwrap(), alpha).unwrap();
            let moved = s.iter().map(|x| a * x + c).collect();
            let got = cvar_alpha(&LoadDistribution::empirical(moved).unwrap(), alpha).unwrap();
            prop_assert!((got - (a * base + c)).abs() <= 1e-9 * (1.0 + got.abs()));
        }

        #[test]
        fn cvar_nondecreasing_in_alpha(s in samples(), a1 in 0.01f64..0.98, gap in 0.0f64..0.5) {
            let d = LoadDistribution::empirical(s).unwrap();
            let a2 = (a1 + gap).min(0.99);
            prop_assert!(cvar_alpha(&d, a2).unwrap() >= cvar_alpha(&d, a1).unwrap() - 1e-12);
        }
    }
}
