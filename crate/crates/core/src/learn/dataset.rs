//! Load sweeps and binding-pattern datasets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::LearnError;
use crate::grid::GridCase;
use crate::qp::{build, LoadVector};
use crate::solver::{binding_status, solve, SolveStatus, SolverOptions};

/// Default limit on the number of grid points in a sweep.
pub const DEFAULT_CAP: usize = 100_000;

/// One swept load: values `start + step·k` for `k = 0..count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    /// Zero-based load index.
    pub load: usize,
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl SweepAxis {
    pub fn value(&self, k: usize) -> f64 {
        self.start + self.step * k as f64
    }

    pub fn min(&self) -> f64 {
        self.value(0).min(self.value(self.count.saturating_sub(1)))
    }

    pub fn max(&self) -> f64 {
        self.value(0).max(self.value(self.count.saturating_sub(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
    /// Largest allowed Cartesian product.
    pub cap: usize,
}

impl SweepSpec {
    pub fn new(axes: Vec<SweepAxis>) -> Self {
        Self {
            axes,
            cap: DEFAULT_CAP,
        }
    }

    /// Sweeps loads upward from their nominal demand in steps of `step` MW.
    pub fn from_nominal(case: &GridCase, loads: &[usize], step: f64, count: usize) -> Self {
        Self::new(
            loads
                .iter()
                .map(|&load| SweepAxis {
                    load,
                    start: case.loads[load].d,
                    step,
                    count,
                })
                .collect(),
        )
    }

    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    /// Swept load values of grid point `index`; the last axis varies
    /// fastest.
    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut rest = index;
        let mut out = vec![0.0; self.axes.len()];
        for (slot, axis) in out.iter_mut().zip(&self.axes).rev() {
            *slot = axis.value(rest % axis.count);
            rest /= axis.count;
        }
        out
    }
}

/// Sweep description and bookkeeping stored next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub case: String,
    pub sweep: Vec<SweepAxis>,
    /// Demands of all loads; swept entries are overwritten by the inputs.
    pub base_loads: Vec<f64>,
    /// Inequality row labels, one per output column.
    pub row_labels: Vec<String>,
    pub requested: usize,
    /// Grid points dropped because the problem was infeasible or the solver
    /// did not converge.
    pub infeasible: usize,
}

impl DatasetMeta {
    /// Full demand vector for swept values `pi`.
    pub fn loads_for(&self, pi: &[f64]) -> Result<LoadVector, LearnError> {
        if pi.len() != self.sweep.len() {
            return Err(LearnError::DimensionMismatch {
                expected: self.sweep.len(),
                got: pi.len(),
            });
        }
        let mut d = self.base_loads.clone();
        for (axis, &v) in self.sweep.iter().zip(pi) {
            d[axis.load] = v;
        }
        LoadVector::new(d).map_err(|e| LearnError::InvalidDataset(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Swept load values (MW), one vector per sample.
    pub inputs: Vec<Vec<f64>>,
    /// Binding pattern over all inequality rows, one vector per sample.
    pub outputs: Vec<Vec<bool>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.inputs.len() != self.outputs.len() {
            return Err(LearnError::InvalidDataset(format!(
                "{} inputs but {} outputs",
                self.inputs.len(),
                self.outputs.len()
            )));
        }
        let k = self.meta.sweep.len();
        let m = self.meta.row_labels.len();
        for (i, (x, t)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            if x.len() != k || t.len() != m {
                return Err(LearnError::InvalidDataset(format!(
                    "sample {} has {} inputs and {} outputs, expected {k} and {m}",
                    i + 1,
                    x.len(),
                    t.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(LearnError::InvalidDataset(format!(
                    "sample {} has a negative or non-finite load",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Number of distinct binding patterns.
    pub fn distinct_patterns(&self) -> usize {
        let mut seen: Vec<&Vec<bool>> = self.outputs.iter().collect();
        seen.sort();
        seen.dedup();
        seen.len()
    }

    /// Writes `path` as CSV (`pi_1..pi_k, tau_1..tau_m`) and the metadata to
    /// the sidecar returned by [`meta_path`].
    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.meta.sweep.len();
        let m = self.meta.row_labels.len();
        let header: Vec<String> = (1..=k)
            .map(|i| format!("pi_{i}"))
            .chain((1..=m).map(|i| format!("tau_{i}")))
            .collect();
        w.write_record(&header)?;
        for (x, t) in self.inputs.iter().zip(&self.outputs) {
            let record: Vec<String> = x
                .iter()
                .map(|v| v.to_string())
                .chain(t.iter().map(|&b| u8::from(b).to_string()))
                .collect();
            w.write_record(&record)?;
        }
        w.flush()?;
        std::fs::write(meta_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
        let k = meta.sweep.len();
        let m = meta.row_labels.len();
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.len() != k + m {
            return Err(LearnError::InvalidDataset(format!(
                "expected {} columns, found {}",
                k + m,
                r.headers()?.len()
            )));
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |col: usize| {
                LearnError::InvalidDataset(format!("row {}, column {}: bad value", row + 1, col + 1))
            };
            let x = (0..k)
                .map(|c| rec[c].parse::<f64>().map_err(|_| bad(c)))
                .collect::<Result<Vec<_>, _>>()?;
            let t = (k..k + m)
                .map(|c| match &rec[c] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(bad(c)),
                })
                .collect::<Result<Vec<_>, _>>()?;
            inputs.push(x);
            outputs.push(t);
        }
        let ds = Self {
            inputs,
            outputs,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Sidecar path of a dataset CSV: `name.csv` → `name.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Solves the problem at every grid point of `sweep` (in parallel on the
/// current rayon pool) and records the binding pattern. Infeasible points
/// are counted in the metadata and left out.
pub fn generate_dataset(
    case: &GridCase,
    sweep: &SweepSpec,
    opts: &SolverOptions,
) -> Result<Dataset, LearnError> {
    let points = sweep.n_points();
    if points > sweep.cap {
        return Err(LearnError::CapExceeded {
            points,
            cap: sweep.cap,
        });
    }
    let n_loads = case.n_loads();
    if let Some(axis) = sweep.axes.iter().find(|a| a.load >= n_loads) {
        return Err(LearnError::InvalidConfig(format!(
            "sweep names load {} but the case has {n_loads} loads",
            axis.load + 1
        )));
    }
    let base = build(case, &LoadVector::from_case(case))?;
    let meta = DatasetMeta {
        case: case.name.clone(),
        sweep: sweep.axes.clone(),
        base_loads: case.demands(),
        row_labels: base.ineq_labels.clone(),
        requested: points,
        infeasible: 0,
    };
    let results: Vec<Option<(Vec<f64>, Vec<bool>)>> = (0..points)
        .into_par_iter()
        .map(|i| -> Result<_, LearnError> {
            let pi = sweep.point(i);
            let qp = base.with_loads(&meta.loads_for(&pi)?)?;
            let sol = solve(&qp, opts);
            if sol.status != SolveStatus::Optimal {
                return Ok(None);
            }
            let report = binding_status(&sol, &qp)
                .map_err(|e| LearnError::InvalidDataset(e.to_string()))?;
            Ok(Some((pi, report.pattern.tau)))
        })
        .collect::<Result<_, _>>()?;
    let mut ds = Dataset {
        inputs: Vec::new(),
        outputs: Vec::new(),
        meta,
    };
    for r in results {
        match r {
            Some((x, t)) => {
                ds.inputs.push(x);
                ds.outputs.push(t);
            }
            None => ds.meta.infeasible += 1,
        }
    }
    if ds.is_empty() {
        return Err(LearnError::AllInfeasible);
    }
    Ok(ds)
}

/// Split of the output columns into those whose status varies over a
/// dataset and those that are constant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputReduction {
    /// Total number of inequality rows.
    pub m: usize,
    pub varying_indices: Vec<usize>,
    pub constant_values: BTreeMap<usize, bool>,
}

impl OutputReduction {
    /// Full pattern from the values of the varying columns.
    pub fn reconstruct(&self, varying: &[bool]) -> Result<Vec<bool>, LearnError> {
        if varying.len() != self.varying_indices.len() {
            return Err(LearnError::DimensionMismatch {
                expected: self.varying_indices.len(),
                got: varying.len(),
            });
        }
        let mut tau = vec![false; self.m];
        for (&i, &v) in &self.constant_values {
            tau[i] = v;
        }
        for (&i, &v) in self.varying_indices.iter().zip(varying) {
            tau[i] = v;
        }
        Ok(tau)
    }

    /// Values of the varying columns of a full pattern.
    pub fn project(&self, tau: &[bool]) -> Vec<bool> {
        self.varying_indices.iter().map(|&i| tau[i]).collect()
    }
}

pub fn reduce_outputs(ds: &Dataset) -> Result<OutputReduction, LearnError> {
    let first = ds
        .outputs
        .first()
        .ok_or_else(|| LearnError::InvalidDataset("dataset is empty".into()))?;
    let m = first.len();
    let mut varying_indices = Vec::new();
    let mut constant_values = BTreeMap::new();
    for j in 0..m {
        if ds.outputs.iter().all(|t| t[j] == first[j]) {
            constant_values.insert(j, first[j]);
        } else {
            varying_indices.push(j);
        }
    }
    Ok(OutputReduction {
        m,
        varying_indices,
        constant_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::three_bus;

    fn toy(outputs: Vec<Vec<bool>>) -> Dataset {
        let m = outputs[0].len();
        Dataset {
            inputs: (0..outputs.len()).map(|i| vec![i as f64]).collect(),
            outputs,
            meta: DatasetMeta {
                case: "toy".into(),
                sweep: vec![SweepAxis {
                    load: 0,
                    start: 0.0,
                    step: 1.0,
                    count: 2,
                }],
                base_loads: vec![0.0],
                row_labels: (0..m).map(|i| format!("r{i}")).collect(),
                requested: 2,
                infeasible: 0,
            },
        }
    }

    #[test]
    fn sweep_points_in_row_major_order() {
        let spec = SweepSpec::new(vec![
            SweepAxis { load: 0, start: 10.0, step: 5.0, count: 3 },
            SweepAxis { load: 2, start: 1.0, step: 1.0, count: 2 },
        ]);
        assert_eq!(spec.n_points(), 6);
        assert_eq!(spec.point(0), vec![10.0, 1.0]);
        assert_eq!(spec.point(1), vec![10.0, 2.0]);
        assert_eq!(spec.point(5), vec![20.0, 2.0]);
    }

    #[test]
    fn fifty_by_fifty_sweep_size() {
        let spec = SweepSpec::from_nominal(&three_bus(), &[0, 1], 5.0, 50);
        assert_eq!(spec.n_points(), 2500);
    }

    #[test]
    fn cap_is_enforced() {
        let mut spec = SweepSpec::from_nominal(&three_bus(), &[0, 1], 5.0, 50);
        spec.cap = 100;
        assert!(matches!(
            generate_dataset(&three_bus(), &spec, &SolverOptions::default()),
            Err(LearnError::CapExceeded { points: 2500, cap: 100 })
        ));
    }

    #[test]
    fn single_point_matches_direct_solve() {
        let case = three_bus();
        let spec = SweepSpec::from_nominal(&case, &[2], 5.0, 1);
        let ds = generate_dataset(&case, &spec, &SolverOptions::default()).unwrap();
        assert_eq!(ds.len(), 1);
        let qp = build(&case, &LoadVector::from_case(&case)).unwrap();
        let sol = solve(&qp, &SolverOptions::default());
        assert_eq!(ds.outputs[0], binding_status(&sol, &qp).unwrap().pattern.tau);
    }

    #[test]
    fn three_bus_sweep_over_third_load() {
        let case = three_bus();
        let spec = SweepSpec::new(vec![SweepAxis { load: 2, start: 35.0, step: 5.0, count: 3 }]);
        let ds = generate_dataset(&case, &spec, &SolverOptions::default()).unwrap();
        assert_eq!(ds.len() + ds.meta.infeasible, 3);
        for (x, t) in ds.inputs.iter().zip(&ds.outputs) {
            let d = ds.meta.loads_for(x).unwrap();
            let qp = build(&case, &d).unwrap();
            let sol = solve(&qp, &SolverOptions::default());
            assert_eq!(*t, binding_status(&sol, &qp).unwrap().pattern.tau);
        }
    }

    #[test]
    fn reduction_of_constant_dataset() {
        let ds = toy(vec![vec![true, false, true]; 2]);
        let red = reduce_outputs(&ds).unwrap();
        assert!(red.varying_indices.is_empty());
        assert_eq!(red.constant_values.len(), 3);
    }

    #[test]
    fn reduction_finds_single_varying_column() {
        let ds = toy(vec![vec![true, false, true], vec![true, true, true]]);
        let red = reduce_outputs(&ds).unwrap();
        assert_eq!(red.varying_indices, vec![1]);
        for t in &ds.outputs {
            assert_eq!(&red.reconstruct(&red.project(t)).unwrap(), t);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("fairshed-ds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.csv");
        let ds = toy(vec![vec![true, false], vec![false, false]]);
        ds.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("pi_1,tau_1,tau_2\n"));
        assert_eq!(Dataset::load(&path).unwrap(), ds);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
