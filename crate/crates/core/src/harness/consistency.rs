use std::io::Write;

use super::lab::{Lab, UNLIMITED_BUDGET};
use super::seeds::Stream;
use crate::bidder::{ActionGrid, LinearBidPolicy};
use crate::mdp::{
    consistency_check, eta_bound, raw_features, ConsistencyReport, HourAccumulator, StateScale,
    CONSISTENCY_CSV_HEADER, FEATURE_DIM, STABLE_ETA, STEPS_PER_DAY, SUBSTITUTE_RATIO,
};
use crate::simulator::{BudgetMode, DayGenerator, Market};
use crate::Result;

/// Raw per-step features of one streamed day under a constant α, and the day's spend.
pub fn stream_day(lab: &Lab, ad: usize, seed: u64, alpha: f64, budget: f64) -> Result<(Vec<[f64; FEATURE_DIM]>, f64)> {
    let profile = lab.config.profile.scaled(lab.config.consistency.volume_scale);
    let market_ad = std::slice::from_ref(&lab.ads[ad]);
    let generator = DayGenerator::new(seed, &profile, market_ad)?;
    let mut market = Market::new(lab.config.auction.clone(), vec![lab.ad_id(ad).clone()])?;
    market.open_day(&[budget], &[BudgetMode::Shutdown])?;
    let mut policy = [LinearBidPolicy::new(alpha)?];
    let grid = ActionGrid::new(lab.calibration[ad].alpha_ref)?;
    let scale = StateScale { budget, alpha_max: grid.max(), slot_count: profile.slot_count, steps: STEPS_PER_DAY };
    let mut out = Vec::with_capacity(STEPS_PER_DAY);
    for h in 0..STEPS_PER_DAY {
        let mut acc = HourAccumulator::default();
        for request in generator.hour(h) {
            market.run_auction(&request, &mut policy, |_, imp| acc.push(imp))?;
        }
        let agg = acc.finish();
        out.push(raw_features(market.account(0).budget_left(), h + 2, &agg, alpha, &scale));
    }
    Ok((out, market.account(0).spent))
}

/// Cross-day stability of the hour-level features over seeded day pairs.
pub struct ConsistencyRun {
    pub action: usize,
    pub budget: f64,
    pub reports: Vec<ConsistencyReport>,
}

impl ConsistencyRun {
    pub fn evaluated(&self) -> usize {
        self.reports.iter().map(|r| r.evaluated().count()).sum()
    }

    pub fn excluded(&self) -> usize {
        self.reports.iter().map(|r| r.excluded()).sum()
    }

    pub fn passing(&self) -> usize {
        self.reports.iter().map(|r| r.passing()).sum()
    }

    /// Share of evaluated cells with η̂ below the stability threshold.
    pub fn pass_rate(&self) -> f64 {
        let n = self.evaluated();
        if n == 0 {
            0.0
        } else {
            self.passing() as f64 / n as f64
        }
    }

    /// Pass rate of each feature over all steps and pairs.
    pub fn feature_pass_rates(&self) -> [f64; FEATURE_DIM] {
        let mut pass = [0usize; FEATURE_DIM];
        let mut seen = [0usize; FEATURE_DIM];
        for cell in self.reports.iter().flat_map(|r| r.evaluated()) {
            seen[cell.feature] += 1;
            pass[cell.feature] += cell.pass as usize;
        }
        let mut out = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            out[i] = if seen[i] == 0 { 0.0 } else { pass[i] as f64 / seen[i] as f64 };
        }
        out
    }

    /// The substitution chain on every stable cell: η̂ < 0.03 bounds the ratio of
    /// the two observed values by `eta_bound(0.03)`, which is below 0.01.
    pub fn chain_holds(&self) -> Result<bool> {
        let bound = eta_bound(STABLE_ETA)?;
        let cells_ok = self
            .reports
            .iter()
            .flat_map(|r| r.evaluated())
            .filter(|c| c.pass)
            .all(|c| c.ratio.is_some_and(|r| r <= bound && r < SUBSTITUTE_RATIO));
        Ok(bound <= SUBSTITUTE_RATIO && cells_ok)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(CONSISTENCY_CSV_HEADER)?;
        for (pair, r) in self.reports.iter().enumerate() {
            r.write_csv(pair, &mut w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stream day pairs for ad `ad` under the configured constant action and check
/// every feature/step cell. The budget is a fixed multiple of a pilot day's spend.
pub fn run_consistency(lab: &Lab, ad: usize) -> Result<ConsistencyRun> {
    let cfg = &lab.config.consistency;
    let alpha = ActionGrid::new(lab.calibration[ad].alpha_ref)?.value(cfg.action)?;
    let pilot_seed = lab.seeds.get(Stream::Consistency, u64::MAX);
    let (_, pilot_spend) = stream_day(lab, ad, pilot_seed, alpha, UNLIMITED_BUDGET)?;
    let budget = cfg.budget_headroom * pilot_spend.max(1.0);
    let actions = vec![cfg.action; STEPS_PER_DAY];
    let mut reports = Vec::with_capacity(cfg.pairs);
    for p in 0..cfg.pairs as u64 {
        let (a, _) = stream_day(lab, ad, lab.seeds.get(Stream::Consistency, 2 * p), alpha, budget)?;
        let (b, _) = stream_day(lab, ad, lab.seeds.get(Stream::Consistency, 2 * p + 1), alpha, budget)?;
        reports.push(consistency_check(&a, &b, &actions)?);
    }
    Ok(ConsistencyRun { action: cfg.action, budget, reports })
}
