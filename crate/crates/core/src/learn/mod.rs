//! Learning binding patterns from load sweeps.
//!
//! A sweep over a few loads produces `(π, τ)` samples. Rows whose status
//! never changes are pruned, a classifier is trained on the rest, and
//! predictions are expanded back to full-length patterns.

pub mod dataset;
pub mod mlp;

pub use dataset::{
    generate_dataset, meta_path, reduce_outputs, Dataset, DatasetMeta, OutputReduction,
    SweepAxis, SweepSpec,
};
pub use mlp::{accuracy, train, Accuracy, Loss, MlpModel, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::LearnError;
use crate::solver::{BindingPattern, BindingSource};

/// Predicted pattern plus a flag for inputs outside the training range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub pattern: BindingPattern,
    pub extrapolated: bool,
}

/// Full-length `τ` for swept load values `pi`.
pub fn predict(
    model: &MlpModel,
    red: &OutputReduction,
    pi: &[f64],
) -> Result<Prediction, LearnError> {
    if model.n_outputs() != red.varying_indices.len() {
        return Err(LearnError::DimensionMismatch {
            expected: red.varying_indices.len(),
            got: model.n_outputs(),
        });
    }
    let varying = model.classify(pi)?;
    Ok(Prediction {
        pattern: BindingPattern::new(red.reconstruct(&varying)?, BindingSource::Predicted),
        extrapolated: model.extrapolates(pi),
    })
}

/// Everything needed to predict patterns for one case, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    pub meta: DatasetMeta,
    pub reduction: OutputReduction,
    pub model: MlpModel,
}

impl TrainedPredictor {
    /// Prediction for a full demand vector; only the swept loads are used.
    pub fn predict_loads(&self, d: &[f64]) -> Result<Prediction, LearnError> {
        if d.len() != self.meta.base_loads.len() {
            return Err(LearnError::DimensionMismatch {
                expected: self.meta.base_loads.len(),
                got: d.len(),
            });
        }
        let pi: Vec<f64> = self.meta.sweep.iter().map(|a| d[a.load]).collect();
        predict(&self.model, &self.reduction, &pi)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), LearnError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, LearnError> {
        let p: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.model.validate()?;
        if p.model.n_outputs() != p.reduction.varying_indices.len()
            || p.model.n_inputs() != p.meta.sweep.len()
        {
            return Err(LearnError::InvalidConfig(
                "model dimensions do not match its dataset description".into(),
            ));
        }
        Ok(p)
    }
}
