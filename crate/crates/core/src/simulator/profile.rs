use serde::{Deserialize, Serialize};

use crate::auction::Ad;
use crate::{Error, Result};

/// Competitor whose bids are drawn independently of the advertisers under study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompetitorSpec {
    pub bidscore_low: f64,
    pub bidscore_high: f64,
    /// Log-normal bid: `exp(N(bid_log_mean, bid_log_sd²))`.
    pub bid_log_mean: f64,
    pub bid_log_sd: f64,
    pub ctr: f64,
}

/// Diurnal shape of a synthetic day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    /// Expected auctions per keyword in each hour.
    pub hourly_intensity: Vec<f64>,
    pub hourly_cvr_multiplier: Vec<f64>,
    pub competitor_pool: Vec<CompetitorSpec>,
    pub competitors_per_auction: usize,
    pub slot_count: u32,
}

impl Default for DayProfile {
    fn default() -> Self {
        // valley 03:00-07:00, competitive peak 09:00, purchase peak 20:00-21:00
        let hourly_intensity = vec![
            32.0, 24.0, 17.0, 10.0, 8.0, 8.0, 10.0, 17.0, 41.0, 67.0, 63.0, 56.0, 54.0, 52.0, 50.0, 50.0,
            49.0, 50.0, 54.0, 60.0, 67.0, 65.0, 56.0, 43.0,
        ];
        let hourly_cvr_multiplier = vec![
            0.8, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8, 0.95, 0.95, 0.95, 0.95, 0.95, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
            1.15, 1.15, 1.4, 1.4, 1.2, 0.9,
        ];
        let competitor_pool = (0..8)
            .map(|i| CompetitorSpec {
                bidscore_low: 0.6,
                bidscore_high: 1.4,
                bid_log_mean: (0.6 + 0.05 * i as f64).ln(),
                bid_log_sd: 0.5,
                ctr: 0.2,
            })
            .collect();
        Self { hourly_intensity, hourly_cvr_multiplier, competitor_pool, competitors_per_auction: 4, slot_count: 3 }
    }
}

impl DayProfile {
    pub fn validate(&self) -> Result<()> {
        if self.hourly_intensity.len() != 24 || self.hourly_cvr_multiplier.len() != 24 {
            return Err(Error::Config("profile needs 24 hourly intensities and 24 CVR multipliers".into()));
        }
        if self.hourly_intensity.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("hourly intensities must be non-negative".into()));
        }
        if self.hourly_cvr_multiplier.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("hourly CVR multipliers must be positive".into()));
        }
        let peak = self.hourly_intensity[9];
        let flat = self.hourly_intensity.iter().all(|&v| v == 0.0);
        if !flat && self.hourly_intensity[3..=7].iter().any(|&v| v >= peak) {
            return Err(Error::Config("intensity over 03:00-07:00 must stay below the 09:00 peak".into()));
        }
        if self.competitors_per_auction > self.competitor_pool.len() {
            return Err(Error::Config("competitors_per_auction exceeds the competitor pool".into()));
        }
        if self.slot_count == 0 {
            return Err(Error::Config("slot_count must be at least 1".into()));
        }
        for c in &self.competitor_pool {
            if !(c.bidscore_low > 0.0 && c.bidscore_low <= c.bidscore_high) || !(c.bid_log_sd >= 0.0) {
                return Err(Error::Config(format!("invalid competitor {c:?}")));
            }
            if !(0.0..=1.0).contains(&c.ctr) {
                return Err(Error::Config("competitor ctr outside [0,1]".into()));
            }
        }
        Ok(())
    }

    /// Same shape with every hourly rate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.hourly_intensity.iter_mut().for_each(|v| *v *= factor);
        p
    }

    pub fn daily_intensity(&self) -> f64 {
        self.hourly_intensity.iter().sum()
    }
}

/// Traffic characteristics of one advertiser's impressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdTraffic {
    pub bidscore: f64,
    /// Mean PCVR before the hourly multiplier.
    pub pcvr_mean: f64,
    /// Beta concentration `a + b`; lower means more dispersed PCVR.
    pub pcvr_concentration: f64,
    pub base_ctr: f64,
    pub purchase_amount_mean: f64,
}

impl Default for AdTraffic {
    fn default() -> Self {
        Self { bidscore: 1.0, pcvr_mean: 0.1, pcvr_concentration: 3.0, base_ctr: 0.3, purchase_amount_mean: 50.0 }
    }
}

impl AdTraffic {
    pub fn validate(&self) -> Result<()> {
        let ok = self.bidscore > 0.0
            && self.pcvr_mean > 0.0
            && self.pcvr_mean < 1.0
            && self.pcvr_concentration > 0.0
            && (0.0..=1.0).contains(&self.base_ctr)
            && self.purchase_amount_mean > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid traffic parameters {self:?}")))
        }
    }
}

/// An advertiser as the generator sees it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketAd {
    pub ad: Ad,
    pub traffic: AdTraffic,
}
