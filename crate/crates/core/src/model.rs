//! Pieces shared by the trainable models.

use crate::evaluation::Prediction;
use crate::neural::{Dropout, Gradients, NeuralError, ParamStore};
use crate::table::TableInstance;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("table {id} is invalid: {violations}")]
    InvalidTable { id: String, violations: String },
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("no encoder backend attached")]
    MissingBackend,
    #[error("ablation {flag} does not apply to {model}")]
    IncompatibleAblation { flag: &'static str, model: &'static str },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

pub fn check_table(t: &TableInstance) -> Result<(), ModelError> {
    let v = t.validate();
    if v.is_empty() {
        Ok(())
    } else {
        Err(ModelError::InvalidTable {
            id: t.id.clone(),
            violations: v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        })
    }
}

pub fn check_alpha(alpha: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(ModelError::AlphaOutOfRange(alpha))
    }
}

/// Index of the first maximum; `None` for an empty slice.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// A model trained by gradient descent on one table at a time.
pub trait NeuralModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Adds this table's loss gradient to `grads` and returns the loss.
    fn accumulate_gradients(
        &self,
        table: &TableInstance,
        dropout: Option<&mut Dropout>,
        grads: &mut Gradients,
    ) -> Result<f64, ModelError>;
    fn predict(&self, table: &TableInstance) -> Result<Prediction, ModelError>;
    /// Whether predictions can carry the CCapt class.
    fn has_copy(&self) -> bool;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), Some(1));
        assert_eq!(argmax(&[1.0 / 3.0; 3]), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn alpha_range() {
        assert!(check_alpha(0.0).is_ok() && check_alpha(1.0).is_ok());
        assert!(matches!(check_alpha(1.5), Err(ModelError::AlphaOutOfRange(_))));
    }
}
