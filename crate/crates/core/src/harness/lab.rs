use std::sync::Arc;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::seeds::{Seeds, Stream};
use crate::auction::AdId;
use crate::bidder::{ActionGrid, AmdpScales, KbPolicy, LinearBidPolicy, RmdpStateBuilder};
use crate::mdp::FeatureNorms;
use crate::simulator::{generate_day, run_episode, AuctionLog, EpisodeResult, MarketAd};
use crate::{Error, Result};

/// Budget used when spend must not be limited.
pub const UNLIMITED_BUDGET: f64 = 1e12;

const BISECTION_STEPS: usize = 40;
const BRACKET_STEPS: usize = 60;

/// Per-ad quantities fixed before any learning happens.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdCalibration {
    pub ad: AdId,
    /// Mean daily KB spend over the calibration days.
    pub kb_cost: f64,
    pub alpha_ref: f64,
    pub kb_price: f64,
    pub norms: FeatureNorms,
    pub amdp_scales: AmdpScales,
}

/// Mean daily spend of a constant-α bidder with no budget limit.
pub fn linear_cost(logs: &[Arc<AuctionLog>], ad: &AdId, alpha: f64, cfg: &ExperimentConfig) -> Result<f64> {
    let mut total = 0.0;
    for log in logs {
        total += run_episode(log, ad, LinearBidPolicy::new(alpha)?, UNLIMITED_BUDGET, &cfg.auction)?.cost();
    }
    Ok(total / logs.len() as f64)
}

/// α whose unconstrained mean spend matches `target`, by bisection on `ln α`.
pub fn calibrate_alpha(
    logs: &[Arc<AuctionLog>],
    ad: &AdId,
    target: f64,
    start: f64,
    cfg: &ExperimentConfig,
) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidInput(format!("ad {ad}: KB spends nothing, cannot calibrate α")));
    }
    let mut lo = start;
    let mut hi = start;
    let mut steps = 0;
    while linear_cost(logs, ad, lo, cfg)? > target {
        lo /= 2.0;
        steps += 1;
        if steps > BRACKET_STEPS {
            return Err(Error::Config(format!("ad {ad}: no α spends as little as {target}")));
        }
    }
    while linear_cost(logs, ad, hi, cfg)? < target {
        hi *= 2.0;
        steps += 1;
        if steps > BRACKET_STEPS {
            return Err(Error::Config(format!("ad {ad}: no α spends as much as {target}")));
        }
    }
    for _ in 0..BISECTION_STEPS {
        let mid = (lo * hi).sqrt();
        if linear_cost(logs, ad, mid, cfg)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Seeded days, calibrated ads and per-ad scales shared by every experiment.
pub struct Lab {
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    /// The configured ads with `alpha_ref` replaced by the calibrated value.
    pub ads: Vec<MarketAd>,
    pub calibration: Vec<AdCalibration>,
}

impl Lab {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seeds = Seeds::new(config.seed);
        let mut lab = Self { ads: config.ads.clone(), config, seeds, calibration: Vec::new() };
        let cal_days = lab.days(Stream::CalibrationDay, lab.config.calibration_days)?;
        let norm_days = lab.days(Stream::NormDay, lab.config.norm_days)?;
        for i in 0..lab.ads.len() {
            let c = lab.calibrate(i, &cal_days, &norm_days)?;
            lab.ads[i].ad.alpha_ref = c.alpha_ref;
            log::info!("calibrated {}: kb_cost {:.3}, alpha_ref {:.4}", c.ad, c.kb_cost, c.alpha_ref);
            lab.calibration.push(c);
        }
        Ok(lab)
    }

    fn calibrate(&self, i: usize, cal_days: &[Arc<AuctionLog>], norm_days: &[Arc<AuctionLog>]) -> Result<AdCalibration> {
        let ad = &self.ads[i].ad;
        let kb = KbPolicy::from_ad(ad)?;
        let mut kb_cost = 0.0;
        for log in cal_days {
            kb_cost += self.kb_episode(log, i)?.cost();
        }
        kb_cost /= cal_days.len() as f64;
        let alpha_ref = if self.config.calibrate_alpha {
            calibrate_alpha(cal_days, &ad.id, kb_cost, ad.alpha_ref, &self.config)?
        } else {
            ad.alpha_ref
        };
        let mut hours = Vec::new();
        for log in norm_days {
            hours.extend(self.kb_episode(log, i)?.hours);
        }
        let norms = FeatureNorms::from_hours(&hours);

        let (mut pcvr, mut score, mut n_auctions, mut n_scores) = (0.0, 0.0, 0usize, 0usize);
        for log in cal_days {
            for request in &log.auctions {
                if let Some((_, me)) = request.participant(&ad.id) {
                    pcvr += me.pcvr;
                    n_auctions += 1;
                    for p in &request.participants {
                        if let Some(b) = p.preset_bid {
                            score += b * p.bidscore;
                            n_scores += 1;
                        }
                    }
                }
            }
        }
        if n_auctions == 0 {
            return Err(Error::Config(format!("ad {} takes part in no auctions", ad.id)));
        }
        let amdp_scales = AmdpScales {
            pcvr: (pcvr / n_auctions as f64).max(f64::MIN_POSITIVE),
            score: if n_scores == 0 { 1.0 } else { (score / n_scores as f64).max(f64::MIN_POSITIVE) },
            auctions: n_auctions as f64 / cal_days.len() as f64,
        };
        Ok(AdCalibration {
            ad: ad.id.clone(),
            kb_cost,
            alpha_ref,
            kb_price: kb.mean_price(),
            norms,
            amdp_scales,
        })
    }

    /// Day `index` of a stream, generated over all configured ads.
    pub fn day(&self, stream: Stream, index: usize) -> Result<Arc<AuctionLog>> {
        let seed = self.seeds.get(stream, index as u64);
        Ok(Arc::new(generate_day(seed, &self.config.profile, &self.ads)?))
    }

    pub fn days(&self, stream: Stream, n: usize) -> Result<Vec<Arc<AuctionLog>>> {
        (0..n).map(|i| self.day(stream, i)).collect()
    }

    pub fn ad_id(&self, i: usize) -> &AdId {
        &self.ads[i].ad.id
    }

    /// KB replay of ad `i` under its configured daily budget.
    pub fn kb_episode(&self, log: &AuctionLog, i: usize) -> Result<EpisodeResult> {
        let ad = &self.ads[i].ad;
        run_episode(log, &ad.id, KbPolicy::from_ad(ad)?, ad.daily_budget, &self.config.auction)
    }

    pub fn states(&self, i: usize) -> Result<RmdpStateBuilder> {
        Ok(RmdpStateBuilder {
            grid: ActionGrid::new(self.calibration[i].alpha_ref)?,
            norms: self.calibration[i].norms.clone(),
            slot_count: self.config.profile.slot_count,
        })
    }

    /// Direct-price grid of the auction-level baseline, centred on the KB price.
    pub fn amdp_prices(&self, i: usize) -> Result<ActionGrid> {
        ActionGrid::new(self.calibration[i].kb_price)
    }
}
