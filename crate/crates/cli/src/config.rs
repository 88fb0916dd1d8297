use std::fs;
use std::path::Path;

use psr_core::dgcca::DgccaTrainConfig;
use psr_core::gcca::DEFAULT_EPS;
use psr_core::layer_agg::LayerFitConfig;
use psr_core::mel::MelConfig;
use psr_core::psr::DEFAULT_EPS_FLOOR;
use serde::{Deserialize, Serialize};

use crate::args::TrainFlags;
use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GccaSettings {
    pub rank: usize,
    pub eps: f64,
}

impl Default for GccaSettings {
    fn default() -> Self {
        Self {
            rank: 16,
            eps: DEFAULT_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsrSettings {
    pub eps_floor: f64,
    pub pairwise_runs: bool,
}

impl Default for PsrSettings {
    fn default() -> Self {
        Self {
            eps_floor: DEFAULT_EPS_FLOOR,
            pairwise_runs: false,
        }
    }
}

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Global seed; overrides `[dgcca].seed`.
    pub seed: Option<u64>,
    pub mel: MelConfig,
    pub gcca: GccaSettings,
    pub dgcca: DgccaTrainConfig,
    pub psr: PsrSettings,
    pub layer_fit: LayerFitConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// Training config with the global seed and flag overrides applied.
    pub fn train_config(&self, seed: Option<u64>, flags: &TrainFlags) -> DgccaTrainConfig {
        let mut c = self.dgcca.clone();
        if let Some(s) = seed.or(self.seed) {
            c.seed = s;
        }
        if let Some(v) = flags.rank {
            c.rank = v;
        }
        if let Some(v) = flags.lr {
            c.learning_rate = v;
        }
        if let Some(v) = flags.batch {
            c.batch_size = v;
        }
        if let Some(v) = flags.epochs {
            c.epochs = v;
        }
        if let Some(v) = flags.output_dim {
            c.output_dim = v;
        }
        if let Some(v) = flags.eps {
            c.eps = v;
        }
        if let Some(v) = flags.patience {
            c.patience = v;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_flags() -> TrainFlags {
        TrainFlags {
            rank: None,
            lr: None,
            batch: None,
            epochs: None,
            output_dim: None,
            eps: None,
            patience: None,
        }
    }

    #[test]
    fn flags_override_file_values() {
        let cfg: FileConfig = toml::from_str("seed = 4\n[dgcca]\nrank = 3\nlearning_rate = 0.5\nseed = 9\n").unwrap();
        let t = cfg.train_config(None, &no_flags());
        assert_eq!((t.rank, t.learning_rate, t.seed), (3, 0.5, 4));
        let flags = TrainFlags {
            rank: Some(2),
            ..no_flags()
        };
        let t = cfg.train_config(Some(11), &flags);
        assert_eq!((t.rank, t.learning_rate, t.seed), (2, 0.5, 11));
        assert_eq!(t.batch_size, DgccaTrainConfig::default().batch_size);
    }

    #[test]
    fn defaults_use_seed_zero() {
        let t = FileConfig::default().train_config(None, &no_flags());
        assert_eq!(t.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[dgcca]\nlearnin_rate = 1.0\n").is_err());
        assert!(toml::from_str::<FileConfig>("[nope]\n").is_err());
        let mel: FileConfig = toml::from_str("[mel]\nn_mels = 40\n").unwrap();
        assert_eq!(mel.mel.n_mels, 40);
    }
}
