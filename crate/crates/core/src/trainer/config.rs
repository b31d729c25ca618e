use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const DROPOUT_GRID: [f64; 3] = [0.1, 0.2, 0.3];

/// Every optimization hyperparameter of a run. Field names double as
/// config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub version: u32,
    pub total_steps: u64,
    pub pretrain_fraction: f64,
    /// Overrides `floor(pretrain_fraction * total_steps)`; 0 means no
    /// bidirectional phase.
    pub pretrain_steps: Option<u64>,
    pub tokens_per_batch: usize,
    pub warmup_steps: u64,
    /// Defaults to `total_steps - warmup_steps`.
    pub decay_steps: Option<u64>,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_floor: f64,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_interval: u64,
    pub n_average: usize,
    pub seed: u64,
    /// Zero the Adam moments when finetuning starts.
    pub reset_optimizer: bool,
    /// Alternate forward/swapped batches in the bidirectional phase
    /// instead of mixing them.
    pub strict_alternation: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            total_steps: 3000,
            pretrain_fraction: 1.0 / 3.0,
            pretrain_steps: None,
            tokens_per_batch: 4096,
            warmup_steps: 300,
            decay_steps: None,
            lr_init: 1e-7,
            lr_peak: 7e-4,
            lr_floor: 1e-5,
            dropout_rate: 0.1,
            weight_decay: 0.01,
            label_smoothing: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            checkpoint_interval: 100,
            n_average: 10,
            seed: 1,
            reset_optimizer: false,
            strict_alternation: false,
        }
    }
}

impl TrainingConfig {
    pub fn decay_steps(&self) -> u64 {
        self.decay_steps
            .unwrap_or_else(|| self.total_steps.saturating_sub(self.warmup_steps))
    }

    /// Length of the bidirectional phase.
    pub fn pretrain_steps(&self) -> Result<u64> {
        match self.pretrain_steps {
            Some(p) => Ok(p),
            None => super::pretrain_steps(self.total_steps, self.pretrain_fraction),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} (supported: {CONFIG_VERSION})", self.version));
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return bad(format!("pretrain_fraction {} outside (0, 1)", self.pretrain_fraction));
        }
        if let Some(p) = self.pretrain_steps {
            if p > self.total_steps {
                return bad(format!("pretrain_steps {p} exceeds total_steps {}", self.total_steps));
            }
        }
        if self.warmup_steps + self.decay_steps() != self.total_steps {
            return bad(format!(
                "warmup_steps {} + decay_steps {} must equal total_steps {}",
                self.warmup_steps,
                self.decay_steps(),
                self.total_steps
            ));
        }
        if !(0.0 <= self.lr_init && self.lr_init <= self.lr_peak && 0.0 <= self.lr_floor && self.lr_floor <= self.lr_peak) {
            return bad("learning rates must satisfy 0 <= lr_init, lr_floor <= lr_peak".into());
        }
        if !DROPOUT_GRID.contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in {DROPOUT_GRID:?}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("Adam betas must lie in [0, 1) and eps be positive".into());
        }
        if self.tokens_per_batch == 0 || self.checkpoint_interval == 0 || self.n_average == 0 {
            return bad("tokens_per_batch, checkpoint_interval and n_average must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainingConfig::default();
        c.validate().unwrap();
        assert_eq!(c.decay_steps(), 2700);
        assert_eq!(c.pretrain_steps().unwrap(), 1000);
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = TrainingConfig {
            pretrain_steps: Some(750),
            strict_alternation: true,
            ..TrainingConfig::default()
        };
        assert_eq!(TrainingConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(TrainingConfig::from_toml("total_stepz = 3").is_err());
        let partial = TrainingConfig::from_toml("total_steps = 30\nwarmup_steps = 3").unwrap();
        assert_eq!(partial.decay_steps(), 27);
    }

    #[test]
    fn invariants_enforced() {
        let mut c = TrainingConfig { decay_steps: Some(5), ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainingConfig { dropout_rate: 0.15, ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainingConfig { lr_init: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainingConfig { pretrain_fraction: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
        c = TrainingConfig { version: 2, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
