use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mmd::Estimator;

/// Hyperparameters shared by multi-label training and transfer fine-tuning.
///
/// Every field has a default so that a config file may set any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the source classification loss during transfer.
    pub alpha: f64,
    /// Number of leading trunk layers frozen during transfer; `None` freezes half.
    pub freeze_depth: Option<usize>,
    /// Layer indices (trunk layers first, then head layers) carrying an MMD
    /// penalty; `None` selects the last trunk layer and the two head hidden layers.
    pub mmd_layers: Option<Vec<usize>>,
    /// Per-penalty multipliers, parallel to the MMD layers; `None` means all 1.
    pub mmd_multipliers: Option<Vec<f64>>,
    /// Bandwidth multipliers applied to the median pairwise distance.
    pub kernel_scales: Vec<f64>,
    pub estimator: Estimator,
    pub trunk_units: Vec<usize>,
    pub head_units: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 30,
            alpha: 1.0,
            freeze_depth: None,
            mmd_layers: None,
            mmd_multipliers: None,
            kernel_scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            estimator: Estimator::Biased,
            trunk_units: vec![32, 32],
            head_units: vec![32, 16],
        }
    }
}

impl TrainConfig {
    /// Checks every numeric field; the error message names the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::arg("learning_rate must be a finite non-negative number"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::arg("alpha must be a finite non-negative number"));
        }
        if self.kernel_scales.is_empty() {
            return Err(Error::arg("kernel_scales must not be empty"));
        }
        if self.kernel_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::arg("kernel_scales must all be positive and finite"));
        }
        if self.trunk_units.is_empty() || self.trunk_units.contains(&0) {
            return Err(Error::arg("trunk_units must be a non-empty list of positive widths"));
        }
        if self.head_units.contains(&0) {
            return Err(Error::arg("head_units must be positive widths"));
        }
        if let Some(k) = self.freeze_depth {
            if k > self.trunk_units.len() {
                return Err(Error::arg(format!(
                    "freeze_depth {k} exceeds the {} trunk layers",
                    self.trunk_units.len()
                )));
            }
        }
        if let Some(layers) = &self.mmd_layers {
            if layers.is_empty() {
                return Err(Error::arg("mmd_layers must not be empty"));
            }
        }
        if let Some(mult) = &self.mmd_multipliers {
            if mult.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                return Err(Error::arg("mmd_multipliers must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Frozen trunk layers for transfer: explicit or half the trunk.
    pub fn effective_freeze_depth(&self) -> usize {
        self.freeze_depth.unwrap_or(self.trunk_units.len() / 2)
    }

    /// Short stable digest of the configuration, stored in checkpoints.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::default().effective_freeze_depth(), 1);
    }

    #[test]
    fn invalid_fields_are_named() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("batch_size"));
        let cfg = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("learning_rate"));
        let cfg = TrainConfig {
            freeze_depth: Some(3),
            ..TrainConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("freeze_depth"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            seed: 1,
            ..a.clone()
        };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
