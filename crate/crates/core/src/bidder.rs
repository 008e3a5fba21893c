//! Bidding policies: the control-by-model linear bidder and the KB / AMDP baselines.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::auction::{Ad, AuctionRequest, KeywordId, Participant};
use crate::dqn::{greedy_action, QNetwork};
use crate::mdp::{build_state, FeatureNorms, HourAggregate, MdpState, StateScale, FEATURE_CLIP, FEATURE_DIM, STEPS_PER_DAY};
use crate::simulator::{BidContext, BidPolicy, HourView};
use crate::{Error, Result};

pub const ACTION_COUNT: usize = 100;

/// Geometric grid `reference · 10^(2k/99 − 1)` for `k = 0..99`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionGrid {
    reference: f64,
    values: Vec<f64>,
}

impl ActionGrid {
    pub fn new(reference: f64) -> Result<Self> {
        if !(reference > 0.0 && reference.is_finite()) {
            return Err(Error::InvalidInput(format!("grid reference {reference} must be positive")));
        }
        let last = (ACTION_COUNT - 1) as f64;
        let values = (0..ACTION_COUNT)
            .map(|k| reference * 10f64.powf(2.0 * k as f64 / last - 1.0))
            .collect();
        Ok(Self { reference, values })
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values[ACTION_COUNT - 1]
    }

    pub fn value(&self, k: usize) -> Result<f64> {
        self.values
            .get(k)
            .copied()
            .ok_or_else(|| Error::Contract(format!("action {k} outside 0..{ACTION_COUNT}")))
    }
}

/// α for action `k` on an α grid.
pub fn action_to_alpha(grid: &ActionGrid, k: usize) -> Result<f64> {
    grid.value(k)
}

/// `bid = α · pcvr`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBidPolicy {
    alpha: f64,
}

impl LinearBidPolicy {
    pub fn new(alpha: f64) -> Result<Self> {
        let mut p = Self { alpha: 0.0 };
        p.set_alpha(alpha)?;
        Ok(p)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidInput(format!("alpha {alpha} must be non-negative")));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn bid(&self, pcvr: f64) -> f64 {
        self.alpha * pcvr
    }
}

impl BidPolicy for LinearBidPolicy {
    fn bid(&mut self, _: &AuctionRequest, me: &Participant, _: &BidContext) -> Result<f64> {
        Ok(LinearBidPolicy::bid(self, me.pcvr))
    }
}

/// Keyword-level bidding: a fixed preset price per keyword.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbPolicy {
    prices: BTreeMap<KeywordId, f64>,
}

impl KbPolicy {
    pub fn new(prices: BTreeMap<KeywordId, f64>) -> Result<Self> {
        if let Some((k, p)) = prices.iter().find(|(_, p)| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidInput(format!("preset {p} for keyword {k} must be non-negative")));
        }
        Ok(Self { prices })
    }

    pub fn from_ad(ad: &Ad) -> Result<Self> {
        Self::new(ad.keyword_tuples.iter().map(|kt| (kt.keyword.clone(), kt.bidprice)).collect())
    }

    pub fn kb_bid(&self, keyword: &KeywordId) -> Result<f64> {
        self.prices
            .get(keyword)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("no preset price for keyword {keyword}")))
    }

    pub fn mean_price(&self) -> f64 {
        if self.prices.is_empty() {
            0.0
        } else {
            self.prices.values().sum::<f64>() / self.prices.len() as f64
        }
    }
}

impl BidPolicy for KbPolicy {
    fn bid(&mut self, request: &AuctionRequest, _: &Participant, _: &BidContext) -> Result<f64> {
        self.kb_bid(&request.keyword)
    }
}

/// Builds the hour-level state seen by the α-controlling agent, identically in
/// training and deployment.
#[derive(Clone, Debug, PartialEq)]
pub struct RmdpStateBuilder {
    pub grid: ActionGrid,
    pub norms: FeatureNorms,
    pub slot_count: u32,
}

impl RmdpStateBuilder {
    /// State for decision `t` (1-based): `previous` is the hour just finished,
    /// `None` before the first hour. Negative budget-left is floored at 0.
    pub fn state(
        &self,
        budget: f64,
        budget_left: f64,
        t: usize,
        previous: Option<&HourAggregate>,
        prev_alpha: f64,
    ) -> Result<MdpState> {
        let scale = StateScale { budget, alpha_max: self.grid.max(), slot_count: self.slot_count, steps: STEPS_PER_DAY };
        let empty = HourAggregate::default();
        build_state(budget_left.max(0.0), t, previous.unwrap_or(&empty), prev_alpha, &scale, &self.norms)
    }
}

/// Greedy deployment of a trained hour-level Q-network: one α per hour.
#[derive(Clone, Debug)]
pub struct RmdpPolicy {
    net: Arc<QNetwork>,
    states: RmdpStateBuilder,
    linear: LinearBidPolicy,
    actions: Vec<usize>,
}

impl RmdpPolicy {
    pub fn new(net: Arc<QNetwork>, states: RmdpStateBuilder) -> Self {
        Self { net, states, linear: LinearBidPolicy { alpha: 0.0 }, actions: Vec::with_capacity(STEPS_PER_DAY) }
    }

    /// Actions chosen so far today.
    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

impl BidPolicy for RmdpPolicy {
    fn start_hour(&mut self, view: &HourView<'_>) -> Result<()> {
        if view.hour == 0 {
            self.actions.clear();
            self.linear.alpha = 0.0;
        }
        let s = self.states.state(view.budget, view.budget_left, view.hour + 1, view.previous, self.linear.alpha)?;
        let k = greedy_action(&self.net, &s);
        self.actions.push(k);
        self.linear.set_alpha(self.states.grid.value(k)?)
    }

    fn bid(&mut self, _: &AuctionRequest, me: &Participant, _: &BidContext) -> Result<f64> {
        Ok(self.linear.bid(me.pcvr))
    }
}

/// Auctions between AMDP decisions.
pub const AMDP_INTERVAL: usize = 100;

/// Reference scales for the auction-level features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmdpScales {
    pub pcvr: f64,
    /// Typical competitor score.
    pub score: f64,
    /// Typical number of the ad's auctions per day.
    pub auctions: f64,
}

impl AmdpScales {
    pub fn validate(&self) -> Result<()> {
        if [self.pcvr, self.score, self.auctions].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("AMDP scales must be positive: {self:?}")))
        }
    }
}

/// Auction-level state: budget share, auction index, hour, the auction's PCVR and
/// a summary of the recorded competitor scores, plus the price in force.
pub fn amdp_features(
    budget: f64,
    budget_left: f64,
    index: usize,
    request: &AuctionRequest,
    me: &Participant,
    prev_price: f64,
    price_max: f64,
    scales: &AmdpScales,
) -> [f64; FEATURE_DIM] {
    let scores: Vec<f64> = request
        .participants
        .iter()
        .filter_map(|p| p.preset_bid.map(|b| b * p.bidscore))
        .collect();
    let max_score = scores.iter().copied().fold(0.0, f64::max);
    let mean_score = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    let mut g = [0.0; FEATURE_DIM];
    g[0] = budget_left.max(0.0) / budget;
    g[1] = index as f64 / scales.auctions;
    g[2] = request.hour() as f64 / STEPS_PER_DAY as f64;
    g[3] = me.pcvr / scales.pcvr;
    g[4] = max_score / scales.score;
    g[5] = mean_score / scales.score;
    g[6] = scores.len() as f64 / 10.0;
    g[7] = prev_price / price_max;
    g.iter_mut().for_each(|v| *v = v.clamp(0.0, FEATURE_CLIP));
    g
}

/// Auction-level Q-model whose actions are direct prices on a grid centred on
/// the ad's keyword price.
#[derive(Clone, Debug)]
pub struct AmdpModel {
    pub net: QNetwork,
    pub prices: ActionGrid,
    pub scales: AmdpScales,
    pub batches_trained: u64,
}

/// Price chosen by a trained AMDP model for one auction-level state.
pub fn amdp_policy(model: &AmdpModel, features: &[f64; FEATURE_DIM], budget_left: f64) -> Result<f64> {
    if model.batches_trained == 0 {
        return Err(Error::Untrained("AMDP model has not been trained".into()));
    }
    let s = MdpState::new(budget_left.max(0.0), 0, *features)?;
    model.prices.value(greedy_action(&model.net, &s))
}

/// Deploys an [`AmdpModel`]: re-decides the price every [`AMDP_INTERVAL`] auctions.
#[derive(Clone, Debug)]
pub struct AmdpBidder {
    model: Arc<AmdpModel>,
    price: f64,
}

impl AmdpBidder {
    pub fn new(model: Arc<AmdpModel>) -> Result<Self> {
        if model.batches_trained == 0 {
            return Err(Error::Untrained("AMDP model has not been trained".into()));
        }
        model.scales.validate()?;
        Ok(Self { model, price: 0.0 })
    }
}

impl BidPolicy for AmdpBidder {
    fn bid(&mut self, request: &AuctionRequest, me: &Participant, ctx: &BidContext) -> Result<f64> {
        if ctx.auction_index.is_multiple_of(AMDP_INTERVAL) {
            if ctx.auction_index == 0 {
                self.price = 0.0;
            }
            let g = amdp_features(
                ctx.budget,
                ctx.budget_left,
                ctx.auction_index,
                request,
                me,
                self.price,
                self.model.prices.max(),
                &self.model.scales,
            );
            self.price = amdp_policy(&self.model, &g, ctx.budget_left)?;
        }
        Ok(self.price)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::KeywordTuple;
    use proptest::prelude::*;

    #[test]
    fn grid_endpoints_and_order() {
        let g = ActionGrid::new(1.0).unwrap();
        assert!((action_to_alpha(&g, 0).unwrap() - 0.1).abs() < 1e-12);
        assert!((action_to_alpha(&g, 99).unwrap() - 10.0).abs() < 1e-12);
        assert!(g.values().windows(2).all(|w| w[0] < w[1]));
        assert!(g.value(49).unwrap() < 1.0 && g.value(50).unwrap() > 1.0);
        assert!(matches!(g.value(100), Err(Error::Contract(_))));
        assert!(ActionGrid::new(0.0).is_err());
    }

    #[test]
    fn linear_bid_examples() {
        assert!((LinearBidPolicy::new(2.0).unwrap().bid(0.05) - 0.10).abs() < 1e-15);
        assert_eq!(LinearBidPolicy::new(0.0).unwrap().bid(0.7), 0.0);
        assert!(LinearBidPolicy::new(-1.0).is_err());
    }

    #[test]
    fn kb_is_constant_and_strict() {
        let ad = Ad::new(
            "a".into(),
            vec![KeywordTuple { belong_ad: "a".into(), keyword: "kw1".into(), bidprice: 1.5 }],
            10.0,
            1.0,
        )
        .unwrap();
        let kb = KbPolicy::from_ad(&ad).unwrap();
        assert_eq!(kb.kb_bid(&"kw1".into()).unwrap(), 1.5);
        assert_eq!(kb.kb_bid(&"kw1".into()).unwrap(), 1.5);
        assert!(kb.kb_bid(&"kw2".into()).is_err());
    }

    #[test]
    fn untrained_amdp_refuses() {
        let model = AmdpModel {
            net: QNetwork::zeros(&[FEATURE_DIM, 4, ACTION_COUNT]).unwrap(),
            prices: ActionGrid::new(1.0).unwrap(),
            scales: AmdpScales { pcvr: 0.1, score: 1.0, auctions: 1000.0 },
            batches_trained: 0,
        };
        assert!(matches!(amdp_policy(&model, &[0.0; FEATURE_DIM], 1.0), Err(Error::Untrained(_))));
        let trained = AmdpModel { batches_trained: 1, ..model };
        // all Q equal: lowest index wins
        assert!((amdp_policy(&trained, &[0.3; FEATURE_DIM], 1.0).unwrap() - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bid_is_homogeneous(alpha in 0.0f64..50.0, pcvr in 0.0f64..1.0, k in 0.1f64..10.0) {
            let base = LinearBidPolicy::new(alpha).unwrap().bid(pcvr);
            let scaled_alpha = LinearBidPolicy::new(alpha * k).unwrap().bid(pcvr);
            let scaled_pcvr = LinearBidPolicy::new(alpha).unwrap().bid(pcvr * k);
            prop_assert!((scaled_alpha - k * base).abs() <= 1e-9 * (1.0 + base.abs() * k));
            prop_assert!((scaled_pcvr - k * base).abs() <= 1e-9 * (1.0 + base.abs() * k));
        }

        #[test]
        fn grid_spans_two_decades(reference in 0.01f64..100.0) {
            let g = ActionGrid::new(reference).unwrap();
            prop_assert!((g.max() / g.value(0).unwrap() - 100.0).abs() < 1e-9);
        }
    }
}
