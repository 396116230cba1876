//! Config file loading and flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use grouplift::config::TrainConfig;
use grouplift::data::SyntheticSpec;
use serde::{Deserialize, Serialize};

use crate::cli::{GenDataArgs, TrainFlags, TransferArgs};
use crate::UsageError;

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: SyntheticSpec,
}

/// Generator settings alone, as written next to generated data.
#[derive(Serialize)]
struct DataOnly<'a> {
    data: &'a SyntheticSpec,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

pub fn spec_toml(spec: &SyntheticSpec) -> Result<String> {
    Ok(toml::to_string(&DataOnly { data: spec })?)
}

pub fn apply_train_flags(cfg: &mut TrainConfig, f: &TrainFlags) {
    if let Some(v) = f.seed {
        cfg.seed = v;
    }
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = f.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = &f.trunk_units {
        cfg.trunk_units = v.clone();
    }
    if let Some(v) = &f.head_units {
        cfg.head_units = v.clone();
    }
}

pub fn apply_transfer_flags(cfg: &mut TrainConfig, a: &TransferArgs) {
    apply_train_flags(cfg, &a.train);
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.freeze_depth {
        cfg.freeze_depth = Some(v);
    }
    if let Some(v) = &a.mmd_layers {
        cfg.mmd_layers = Some(v.clone());
    }
    if let Some(v) = &a.mmd_multipliers {
        cfg.mmd_multipliers = Some(v.clone());
    }
    if let Some(v) = &a.kernel_scales {
        cfg.kernel_scales = v.clone();
    }
    if let Some(v) = a.estimator {
        cfg.estimator = v.into();
    }
}

pub fn apply_data_flags(spec: &mut SyntheticSpec, a: &GenDataArgs) {
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.samples {
        spec.samples = v;
    }
    if let Some(v) = a.target_samples {
        spec.target_samples = v;
    }
    if let Some(v) = a.feature_dim {
        spec.feature_dim = v;
    }
    if let Some(v) = &a.group_sizes {
        spec.group_sizes = v.clone();
    }
    if let Some(v) = a.rho_in {
        spec.rho_in = v;
    }
    if let Some(v) = a.rho_out {
        spec.rho_out = v;
    }
    if let Some(v) = a.shift {
        spec.shift = v;
    }
    if let Some(v) = a.rotation {
        spec.rotation_deg = v;
    }
    if let Some(v) = a.feature_noise {
        spec.feature_noise = v;
    }
    if let Some(v) = &a.group_signal {
        spec.group_signal = Some(v.clone());
    }
}

/// `dir/model.ckpt` → `dir/model.seed3.ckpt`
pub fn with_seed(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_suffix() {
        assert_eq!(with_seed(Path::new("out/m.ckpt"), 3), PathBuf::from("out/m.seed3.ckpt"));
        assert_eq!(with_seed(Path::new("m"), 0), PathBuf::from("m.seed0"));
    }

    #[test]
    fn config_sections_parse() {
        let cfg: RunConfig = toml::from_str("[train]\nepochs = 3\n[data]\nshift = 1.5\n").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.data.shift, 1.5);
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SyntheticSpec {
            rotation_deg: 15.0,
            shift: 0.1 + 0.2,
            group_signal: Some(vec![1.0, 0.3]),
            group_sizes: vec![2, 2],
            ..SyntheticSpec::default()
        };
        let back: RunConfig = toml::from_str(&spec_toml(&spec).unwrap()).unwrap();
        assert_eq!(back.data, spec);
    }
}
