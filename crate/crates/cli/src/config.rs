//! Engine configuration loaded from `--config` JSON.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use curator_core::prob::DEFAULT_EPS;
use curator_core::DistanceParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub eps: f64,
    /// Distance cap; `ln(1/eps)` when absent.
    pub d_max: Option<f64>,
    pub alpha: f64,
    pub seed: u64,
    /// Classes excluded from signatures and scores.
    pub class_mask: Option<Vec<usize>>,
    /// Expected class count; inferred from the data when absent.
    pub num_classes: Option<usize>,
    /// ada-*: most classes recommended per frame.
    pub per_frame_max: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            d_max: None,
            alpha: 0.5,
            seed: 0,
            class_mask: None,
            num_classes: None,
            per_frame_max: 3,
        }
    }
}

impl EngineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("{}: cannot read config", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("{}: invalid config", p.display()))?
            }
            None => Self::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            bail!("config: eps {} must lie in (0, 1/C)", self.eps);
        }
        if let Some(d) = self.d_max {
            if !(d.is_finite() && d > 0.0) {
                bail!("config: d_max {d} must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("config: alpha {} outside [0, 1]", self.alpha);
        }
        if self.per_frame_max == 0 {
            bail!("config: per_frame_max must be at least 1");
        }
        Ok(())
    }

    /// Checks the eps bound against the dataset's class count.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        if self.eps >= 1.0 / classes as f64 {
            bail!("config: eps {} must be below 1/{classes}", self.eps);
        }
        Ok(())
    }

    pub fn distance_params(&self) -> Result<DistanceParams> {
        Ok(DistanceParams::new(self.eps, self.d_max)?)
    }

    pub fn mask(&self) -> Option<BTreeSet<usize>> {
        self.class_mask.as_ref().map(|m| m.iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = EngineConfig::default();
        c.validate().unwrap();
        assert!((c.distance_params().unwrap().d_max - 13.815510557964274).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = [
            EngineConfig {
                eps: 0.0,
                ..Default::default()
            },
            EngineConfig {
                alpha: 1.5,
                ..Default::default()
            },
            EngineConfig {
                d_max: Some(-1.0),
                ..Default::default()
            },
            EngineConfig {
                per_frame_max: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let c = EngineConfig {
            eps: 0.2,
            ..Default::default()
        };
        assert!(c.check_classes(8).is_err());
    }

    #[test]
    fn parses_partial_json_and_rejects_unknown() {
        let c: EngineConfig = serde_json::from_str(r#"{"alpha": 0.25, "class_mask": [0]}"#).unwrap();
        assert_eq!(c.alpha, 0.25);
        assert_eq!(c.eps, DEFAULT_EPS);
        assert!(serde_json::from_str::<EngineConfig>(r#"{"alpah": 0.25}"#).is_err());
    }
}
