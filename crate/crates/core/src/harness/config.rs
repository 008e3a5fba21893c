use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auction::AuctionConfig;
use crate::bidder::ACTION_COUNT;
use crate::dqn::TrainerConfig;
use crate::simulator::{DayProfile, MarketAd};
use crate::{Error, Result};

/// Everything an experiment depends on. Only `seed` and `ads` are required in
/// the JSON file; the rest falls back to the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub ads: Vec<MarketAd>,
    #[serde(default)]
    pub profile: DayProfile,
    #[serde(default)]
    pub auction: AuctionConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Trainer for the auction-level baseline; `trainer` when absent.
    #[serde(default)]
    pub amdp_trainer: Option<TrainerConfig>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_train_days")]
    pub train_days: usize,
    #[serde(default = "default_test_days")]
    pub test_days: usize,
    /// Replace each ad's `alpha_ref` by the cost-neutral value found by bisection.
    #[serde(default = "yes")]
    pub calibrate_alpha: bool,
    #[serde(default = "default_calibration_days")]
    pub calibration_days: usize,
    #[serde(default = "default_norm_days")]
    pub norm_days: usize,
    #[serde(default)]
    pub consistency: ConsistencyConfig,
    /// Where commands write their files; relative paths resolve against the config file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_lambda() -> f64 {
    0.5
}

fn default_train_days() -> usize {
    1
}

fn default_test_days() -> usize {
    5
}

fn yes() -> bool {
    true
}

fn default_calibration_days() -> usize {
    3
}

fn default_norm_days() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    pub pairs: usize,
    /// Multiplier on the profile's hourly intensities.
    pub volume_scale: f64,
    /// Action applied in every hour of both days.
    pub action: usize,
    /// Budget as a multiple of the expected daily spend, so it never binds.
    pub budget_headroom: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { pairs: 20, volume_scale: 1.0, action: 50, budget_headroom: 10.0 }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config; a relative `output_dir` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = &cfg.output_dir {
            if dir.is_relative() {
                cfg.output_dir = Some(path.parent().unwrap_or(Path::new(".")).join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn amdp_trainer(&self) -> &TrainerConfig {
        self.amdp_trainer.as_ref().unwrap_or(&self.trainer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ads.is_empty() {
            return Err(Error::Config("at least one ad is required".into()));
        }
        let mut ids: Vec<_> = self.ads.iter().map(|a| &a.ad.id).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("ad ids must be unique".into()));
        }
        for a in &self.ads {
            a.ad.validate()?;
            a.traffic.validate()?;
            if a.ad.keyword_tuples.is_empty() {
                return Err(Error::Config(format!("ad {} has no keywords", a.ad.id)));
            }
        }
        self.profile.validate()?;
        self.auction.validate()?;
        self.trainer.validate()?;
        self.amdp_trainer().validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        if self.train_days == 0 || self.test_days == 0 || self.calibration_days == 0 || self.norm_days == 0 {
            return Err(Error::Config("day counts must be positive".into()));
        }
        let c = &self.consistency;
        if c.pairs == 0 || !(c.volume_scale > 0.0) || c.action >= ACTION_COUNT || !(c.budget_headroom > 1.0) {
            return Err(Error::Config(format!("invalid consistency settings {c:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 7,
        "ads": [{
            "ad": {"id": "a", "keyword_tuples": [{"belong_ad": "a", "keyword": "k", "bidprice": 1.0}],
                   "daily_budget": 50.0, "alpha_ref": 10.0},
            "traffic": {}
        }]
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.trainer, TrainerConfig::default());
        assert_eq!(cfg.lambda, 0.5);
        assert!(cfg.calibrate_alpha);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = MINIMAL.replace("\"seed\": 7,", "");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn relative_output_dir_follows_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.json");
        let text = MINIMAL.replacen('{', "{\"output_dir\": \"out\",", 1);
        fs::write(&path, text).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.output_dir.unwrap(), dir.path().join("out"));
    }

    #[test]
    fn bad_lambda_rejected() {
        let text = MINIMAL.replacen('{', "{\"lambda\": 2.0,", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
