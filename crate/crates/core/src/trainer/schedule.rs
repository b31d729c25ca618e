use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainingConfig;
use crate::error::{Error, Result};

/// `floor(fraction * total_steps)`.
pub fn pretrain_steps(total_steps: u64, fraction: f64) -> Result<u64> {
    if total_steps == 0 {
        return Err(Error::invalid("total_steps must be positive"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("pretrain fraction {fraction} outside (0, 1)")));
    }
    // Exact for rationals like 1/3 whose product lands a hair below an
    // integer in binary floating point.
    let raw = fraction * total_steps as f64;
    let nearest = raw.round();
    let steps = if (raw - nearest).abs() < 1e-9 * total_steps as f64 { nearest } else { raw.floor() };
    Ok(steps as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

/// Learning-rate curve and phase split of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub pretrain_steps: u64,
    pub lr_init: f64,
    pub lr_peak: f64,
    pub lr_floor: f64,
}

impl Schedule {
    pub fn new(cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            total_steps: cfg.total_steps,
            warmup_steps: cfg.warmup_steps,
            decay_steps: cfg.decay_steps(),
            pretrain_steps: cfg.pretrain_steps()?,
            lr_init: cfg.lr_init,
            lr_peak: cfg.lr_peak,
            lr_floor: cfg.lr_floor,
        })
    }

    /// Linear warmup from `lr_init` to `lr_peak`, then a half cosine down
    /// to `lr_floor` at `total_steps`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid(format!("step {step} beyond total_steps {}", self.total_steps)));
        }
        if step < self.warmup_steps {
            let frac = step as f64 / self.warmup_steps as f64;
            return Ok(self.lr_init + (self.lr_peak - self.lr_init) * frac);
        }
        if self.decay_steps == 0 {
            return Ok(self.lr_peak);
        }
        let frac = (step - self.warmup_steps) as f64 / self.decay_steps as f64;
        Ok(self.lr_floor + 0.5 * (self.lr_peak - self.lr_floor) * (1.0 + (PI * frac).cos()))
    }

    /// Phase of the update performed at 0-based `step`.
    pub fn phase(&self, step: u64) -> Phase {
        if step < self.pretrain_steps {
            Phase::Pretrain
        } else {
            Phase::Finetune
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_third_rule() {
        assert_eq!(pretrain_steps(30000, 1.0 / 3.0).unwrap(), 10000);
        assert_eq!(pretrain_steps(40000, 1.0 / 3.0).unwrap(), 13333);
        assert_eq!(pretrain_steps(3, 1.0 / 3.0).unwrap(), 1);
        assert_eq!(pretrain_steps(3000, 1.0 / 3.0).unwrap(), 1000);
        assert_eq!(pretrain_steps(10, 0.25).unwrap(), 2);
        assert!(pretrain_steps(0, 0.5).is_err());
        assert!(pretrain_steps(10, 0.0).is_err());
    }

    #[test]
    fn early_stop_overrides() {
        for p in [10000, 15000, 20000] {
            let cfg = TrainingConfig {
                total_steps: 40000,
                warmup_steps: 4000,
                pretrain_steps: Some(p),
                ..Default::default()
            };
            assert_eq!(Schedule::new(&cfg).unwrap().pretrain_steps, p);
        }
    }

    #[test]
    fn lr_boundaries() {
        let s = Schedule::new(&TrainingConfig::default()).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 1e-7);
        assert!((s.lr_at(300).unwrap() - 7e-4).abs() < 1e-18);
        assert!((s.lr_at(3000).unwrap() - 1e-5).abs() < 1e-18);
        let mid = s.lr_at(300 + 1350).unwrap();
        assert!((mid - (7e-4 + 1e-5) / 2.0).abs() < 1e-15);
        assert!(s.lr_at(3001).is_err());
        // continuity at the warmup boundary and monotone pieces
        assert!((s.lr_at(299).unwrap() - s.lr_at(300).unwrap()).abs() < 3e-6);
        for t in 1..300 {
            assert!(s.lr_at(t).unwrap() > s.lr_at(t - 1).unwrap());
        }
        for t in 301..=3000 {
            assert!(s.lr_at(t).unwrap() <= s.lr_at(t - 1).unwrap());
        }
    }

    #[test]
    fn phase_switches_once() {
        let s = Schedule::new(&TrainingConfig::default()).unwrap();
        let switches = (1..3000).filter(|&t| s.phase(t) != s.phase(t - 1)).count();
        assert_eq!(switches, 1);
        assert_eq!(s.phase(999), Phase::Pretrain);
        assert_eq!(s.phase(1000), Phase::Finetune);
    }
}
