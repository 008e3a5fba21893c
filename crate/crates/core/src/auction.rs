//! Single-impression auction: score ranking, generalized second price, user response.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(id: impl AsRef<str>) -> Self {
                Self(Arc::from(id.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }
    };
}

string_id!(
    /// Advertiser ad identifier. Ordering is lexicographic and breaks ranking ties.
    AdId
);
string_id!(KeywordId);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordTuple {
    pub belong_ad: AdId,
    pub keyword: KeywordId,
    pub bidprice: f64,
}

/// An advertiser's bidding configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ad {
    pub id: AdId,
    pub keyword_tuples: Vec<KeywordTuple>,
    pub daily_budget: f64,
    /// Reference α (money per unit PCVR) that centres the action grid.
    pub alpha_ref: f64,
}

impl Ad {
    pub fn new(id: AdId, keyword_tuples: Vec<KeywordTuple>, daily_budget: f64, alpha_ref: f64) -> Result<Self> {
        let ad = Self { id, keyword_tuples, daily_budget, alpha_ref };
        ad.validate()?;
        Ok(ad)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.daily_budget > 0.0 && self.daily_budget.is_finite()) {
            return Err(Error::InvalidInput(format!("ad {}: daily budget must be positive", self.id)));
        }
        if !(self.alpha_ref > 0.0 && self.alpha_ref.is_finite()) {
            return Err(Error::InvalidInput(format!("ad {}: alpha_ref must be positive", self.id)));
        }
        let mut seen = HashSet::new();
        for kt in &self.keyword_tuples {
            if kt.belong_ad != self.id {
                return Err(Error::InvalidInput(format!(
                    "keyword tuple {} belongs to {}, not {}",
                    kt.keyword, kt.belong_ad, self.id
                )));
            }
            if !(kt.bidprice >= 0.0 && kt.bidprice.is_finite()) {
                return Err(Error::InvalidInput(format!("negative bidprice on {}", kt.keyword)));
            }
            if !seen.insert(&kt.keyword) {
                return Err(Error::InvalidInput(format!("duplicate keyword {} on ad {}", kt.keyword, self.id)));
            }
        }
        Ok(())
    }

    pub fn keywords(&self) -> impl Iterator<Item = &KeywordId> {
        self.keyword_tuples.iter().map(|kt| &kt.keyword)
    }
}

/// One candidate ad inside an auction request.
///
/// Competitors recorded in the log carry `preset_bid`; advertisers under study
/// have it unset and are asked for a bid by their policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub ad: AdId,
    pub bidscore: f64,
    pub pcvr: f64,
    pub true_ctr: f64,
    pub true_cvr: f64,
    pub purchase_amount_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset_bid: Option<f64>,
}

impl Participant {
    pub fn is_competitor(&self) -> bool {
        self.preset_bid.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuctionRequest {
    pub timestamp: f64,
    pub keyword: KeywordId,
    pub participants: Vec<Participant>,
    pub slot_count: u32,
    /// Seeds the user-response draws, so replaying a log reproduces its users.
    pub response_seed: u64,
}

impl AuctionRequest {
    pub fn hour(&self) -> usize {
        ((self.timestamp / 3600.0) as usize).min(23)
    }

    pub fn participant(&self, ad: &AdId) -> Option<(usize, &Participant)> {
        self.participants.iter().enumerate().find(|(_, p)| &p.ad == ad)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..SECONDS_PER_DAY).contains(&self.timestamp) {
            return Err(Error::InvalidInput(format!("timestamp {} outside the day", self.timestamp)));
        }
        if self.slot_count == 0 {
            return Err(Error::InvalidInput("slot_count must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.participants {
            if !seen.insert(&p.ad) {
                return Err(Error::InvalidInput(format!("ad {} listed twice in one auction", p.ad)));
            }
            if !(p.bidscore > 0.0 && p.bidscore.is_finite()) {
                return Err(Error::InvalidInput(format!("ad {}: bidscore must be positive", p.ad)));
            }
            for (name, v) in [("pcvr", p.pcvr), ("true_ctr", p.true_ctr), ("true_cvr", p.true_cvr)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!("ad {}: {name} {v} outside [0,1]", p.ad)));
                }
            }
            if !(p.purchase_amount_mean > 0.0) {
                return Err(Error::InvalidInput(format!("ad {}: purchase mean must be positive", p.ad)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub ad: AdId,
    /// 1-based slot position.
    pub rank: u32,
    pub price_per_click: f64,
    pub clicked: bool,
    pub purchased: bool,
    pub purchase_amount: f64,
}

impl SlotRecord {
    pub fn cost(&self) -> f64 {
        if self.clicked {
            self.price_per_click
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub slots: Vec<SlotRecord>,
    pub losers: Vec<AdId>,
}

impl AuctionOutcome {
    pub fn slot(&self, ad: &AdId) -> Option<&SlotRecord> {
        self.slots.iter().find(|s| &s.ad == ad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuctionConfig {
    pub reserve: f64,
    /// Click-probability decay per slot: factor(rank) = 1 / (1 + decay·(rank − 1)).
    pub position_decay: f64,
}

impl Default for AuctionConfig {
    fn default() -> Self {
        Self { reserve: 0.1, position_decay: 0.5 }
    }
}

impl AuctionConfig {
    pub fn position_factor(&self, rank: u32) -> f64 {
        1.0 / (1.0 + self.position_decay * (rank.max(1) - 1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reserve >= 0.0 && self.reserve.is_finite()) {
            return Err(Error::Config("reserve must be non-negative".into()));
        }
        if !(self.position_decay >= 0.0 && self.position_decay.is_finite()) {
            return Err(Error::Config("position_decay must be non-negative".into()));
        }
        Ok(())
    }
}

fn by_score_then_id(a: (f64, &AdId), b: (f64, &AdId)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Rank the participants of `request` by `bidscore · bid`.
///
/// Zero bids are excluded and the result is truncated to the request's slot count.
/// Ads absent from `bids` do not take part.
pub fn rank_ads(request: &AuctionRequest, bids: &BTreeMap<AdId, f64>) -> Result<Vec<(AdId, f64)>> {
    for (ad, &bid) in bids {
        if request.participant(ad).is_none() {
            return Err(Error::InvalidInput(format!("bid for ad {ad} which is not in the auction")));
        }
        if !(bid >= 0.0 && bid.is_finite()) {
            return Err(Error::InvalidInput(format!("ad {ad}: bid {bid} must be non-negative")));
        }
    }
    let dense: Vec<f64> = request
        .participants
        .iter()
        .map(|p| bids.get(&p.ad).copied().unwrap_or(0.0))
        .collect();
    let mut order = rank_all(request, &dense, 0.0);
    order.truncate(request.slot_count as usize);
    Ok(order.into_iter().map(|(i, score)| (request.participants[i].ad.clone(), score)).collect())
}

/// Full untruncated ranking as (participant index, score); only scores that are
/// positive and at least `min_score` are kept.
pub(crate) fn rank_all(request: &AuctionRequest, bids: &[f64], min_score: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<(usize, f64)> = request
        .participants
        .iter()
        .zip(bids)
        .enumerate()
        .filter(|(_, (_, &bid))| bid > 0.0)
        .map(|(i, (p, &bid))| (i, p.bidscore * bid))
        .filter(|&(_, score)| score >= min_score)
        .collect();
    let ps = &request.participants;
    order.sort_by(|a, b| by_score_then_id((a.1, &ps[a.0].ad), (b.1, &ps[b.0].ad)));
    order
}

/// Generalized second price on score.
///
/// Slot i pays `score_{i+1} / bidscore_i`; the last entry pays `reserve / bidscore`.
/// Every price is clipped to `[reserve / bidscore, own bid]`.
pub fn price_slots(
    ranked: &[(AdId, f64)],
    bidscores: &BTreeMap<AdId, f64>,
    reserve: f64,
) -> Result<BTreeMap<AdId, f64>> {
    let mut scored = Vec::with_capacity(ranked.len());
    for (ad, score) in ranked {
        let bs = *bidscores
            .get(ad)
            .ok_or_else(|| Error::InvalidInput(format!("no bidscore for ad {ad}")))?;
        scored.push((*score, bs));
    }
    Ok(ranked.iter().map(|(ad, _)| ad.clone()).zip(gsp_prices(&scored, reserve)).collect())
}

pub(crate) fn gsp_prices(scored: &[(f64, f64)], reserve: f64) -> Vec<f64> {
    scored
        .iter()
        .enumerate()
        .map(|(i, &(score, bidscore))| {
            let own_bid = score / bidscore;
            let next = scored.get(i + 1).map_or(reserve, |n| n.0);
            (next / bidscore).max(reserve / bidscore).min(own_bid)
        })
        .collect()
}

/// A won slot awaiting user response.
#[derive(Clone, Debug, PartialEq)]
pub struct PricedSlot {
    pub participant: usize,
    pub rank: u32,
    pub price_per_click: f64,
}

/// Sample clicks, purchases and purchase amounts for the won slots.
///
/// Three uniforms are drawn per participant in request order regardless of the
/// ranking, so the same user reacts the same way whenever an ad lands in the same slot.
pub fn simulate_response<R: Rng + ?Sized>(
    request: &AuctionRequest,
    slots: &[PricedSlot],
    losers: Vec<AdId>,
    config: &AuctionConfig,
    rng: &mut R,
) -> AuctionOutcome {
    let draws: Vec<[f64; 3]> = (0..request.participants.len())
        .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let slots = slots
        .iter()
        .map(|slot| {
            let p = &request.participants[slot.participant];
            let [u_click, u_buy, u_amount] = draws[slot.participant];
            let clicked = u_click < p.true_ctr * config.position_factor(slot.rank);
            let purchased = clicked && u_buy < p.true_cvr;
            let purchase_amount = if purchased {
                // inverse-CDF exponential; 1 - u lies in (0, 1]
                -p.purchase_amount_mean * (1.0 - u_amount).ln()
            } else {
                0.0
            };
            SlotRecord {
                ad: p.ad.clone(),
                rank: slot.rank,
                price_per_click: slot.price_per_click,
                clicked,
                purchased: purchased && purchase_amount > 0.0,
                purchase_amount,
            }
        })
        .collect();
    AuctionOutcome { slots, losers }
}

/// Run one auction end to end: reserve-eligible ranking, GSP pricing over the full
/// ranking, truncation to the slot count, and response sampled from the request seed.
///
/// `bids` is aligned with `request.participants`.
pub fn run_auction(request: &AuctionRequest, bids: &[f64], config: &AuctionConfig) -> AuctionOutcome {
    debug_assert_eq!(bids.len(), request.participants.len());
    let order = rank_all(request, bids, config.reserve);
    let scored: Vec<(f64, f64)> = order
        .iter()
        .map(|&(i, score)| (score, request.participants[i].bidscore))
        .collect();
    let prices = gsp_prices(&scored, config.reserve);
    let shown = order.len().min(request.slot_count as usize);
    let slots: Vec<PricedSlot> = order[..shown]
        .iter()
        .zip(&prices)
        .enumerate()
        .map(|(r, (&(i, _), &price))| PricedSlot { participant: i, rank: r as u32 + 1, price_per_click: price })
        .collect();
    let mut winners = vec![false; request.participants.len()];
    for s in &slots {
        winners[s.participant] = true;
    }
    let losers = request
        .participants
        .iter()
        .zip(&winners)
        .filter(|(_, &w)| !w)
        .map(|(p, _)| p.ad.clone())
        .collect();
    let mut rng = SmallRng::seed_from_u64(request.response_seed);
    simulate_response(request, &slots, losers, config, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn participant(ad: &str, bidscore: f64) -> Participant {
        Participant {
            ad: AdId::new(ad),
            bidscore,
            pcvr: 0.1,
            true_ctr: 0.5,
            true_cvr: 0.5,
            purchase_amount_mean: 10.0,
            preset_bid: None,
        }
    }

    fn request(ps: Vec<Participant>, slots: u32) -> AuctionRequest {
        AuctionRequest { timestamp: 100.0, keyword: "kw".into(), participants: ps, slot_count: slots, response_seed: 7 }
    }

    fn bids(pairs: &[(&str, f64)]) -> BTreeMap<AdId, f64> {
        pairs.iter().map(|(a, b)| (AdId::new(a), *b)).collect()
    }

    fn three_ads() -> AuctionRequest {
        request(vec![participant("A", 1.0), participant("B", 2.0), participant("C", 0.5)], 3)
    }

    #[test]
    fn ranks_by_bidscore_times_bid() {
        let ranked = rank_ads(&three_ads(), &bids(&[("A", 2.0), ("B", 0.8), ("C", 3.0)])).unwrap();
        let ids: Vec<&str> = ranked.iter().map(|(a, _)| a.as_str()).collect();
        assert_eq!(ids, ["A", "B", "C"]);
        assert_eq!(ranked[0].1, 2.0);
        assert!((ranked[1].1 - 1.6).abs() < 1e-12);
        assert!((ranked[2].1 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_bid_is_not_ranked() {
        let req = request(vec![participant("A", 1.0)], 1);
        assert!(rank_ads(&req, &bids(&[("A", 0.0)])).unwrap().is_empty());
    }

    #[test]
    fn equal_scores_break_ties_by_ad_id() {
        // both orders of insertion must give the same result
        for ps in [
            vec![participant("zeta", 2.0), participant("alpha", 1.0)],
            vec![participant("alpha", 1.0), participant("zeta", 2.0)],
        ] {
            let ranked = rank_ads(&request(ps, 2), &bids(&[("zeta", 0.8), ("alpha", 1.6)])).unwrap();
            assert_eq!(ranked[0].0.as_str(), "alpha");
            assert_eq!(ranked[1].0.as_str(), "zeta");
        }
    }

    #[test]
    fn unknown_ad_is_rejected() {
        let err = rank_ads(&three_ads(), &bids(&[("Z", 1.0)])).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn ranking_truncates_to_slot_count() {
        let mut req = three_ads();
        req.slot_count = 2;
        let ranked = rank_ads(&req, &bids(&[("A", 2.0), ("B", 0.8), ("C", 3.0)])).unwrap();
        assert_eq!(ranked.len(), 2);
    }

    #[test]
    fn gsp_worked_example() {
        let ranked = vec![(AdId::new("A"), 2.0), (AdId::new("B"), 1.6), (AdId::new("C"), 1.5)];
        let scores = bids(&[("A", 1.0), ("B", 2.0), ("C", 0.5)]);
        let prices = price_slots(&ranked, &scores, 0.1).unwrap();
        assert!((prices[&AdId::new("A")] - 1.6).abs() < 1e-12);
        assert!((prices[&AdId::new("B")] - 0.75).abs() < 1e-12);
        assert!((prices[&AdId::new("C")] - 0.2).abs() < 1e-12);
        // B bid 0.8, so the upper clip is inactive
        assert!(prices[&AdId::new("B")] < 0.8);
        // recomputing from scratch gives the same prices
        assert_eq!(prices, price_slots(&ranked, &scores, 0.1).unwrap());
    }

    #[test]
    fn single_slot_pays_reserve() {
        let prices = price_slots(&[(AdId::new("A"), 3.0)], &bids(&[("A", 1.0)]), 0.1).unwrap();
        assert!((prices[&AdId::new("A")] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_ctr_never_clicks() {
        let mut p = participant("A", 1.0);
        p.true_ctr = 0.0;
        let mut req = request(vec![p], 1);
        for seed in 0..200 {
            req.response_seed = seed;
            let out = run_auction(&req, &[1.0], &AuctionConfig::default());
            assert!(!out.slots[0].clicked);
        }
    }

    #[test]
    fn certain_click_and_purchase() {
        let mut p = participant("A", 1.0);
        p.true_ctr = 1.0;
        p.true_cvr = 1.0;
        let mut req = request(vec![p], 1);
        for seed in 0..200 {
            req.response_seed = seed;
            let out = run_auction(&req, &[1.0], &AuctionConfig::default());
            let s = &out.slots[0];
            assert_eq!(s.rank, 1);
            assert!(s.clicked && s.purchased && s.purchase_amount > 0.0);
        }
    }

    #[test]
    fn empirical_click_rate_matches_position_law() {
        let cfg = AuctionConfig::default();
        let p = participant("A", 1.0);
        let req = request(vec![p], 1);
        let mut rng = SmallRng::seed_from_u64(2024);
        for rank in [1u32, 2, 3] {
            let slot = PricedSlot { participant: 0, rank, price_per_click: 0.1 };
            let clicks = (0..10_000)
                .filter(|_| simulate_response(&req, std::slice::from_ref(&slot), vec![], &cfg, &mut rng).slots[0].clicked)
                .count();
            let expected = 0.5 * cfg.position_factor(rank);
            assert!((clicks as f64 / 10_000.0 - expected).abs() < 0.02, "rank {rank}");
        }
    }

    #[test]
    fn reserve_excludes_low_scores_and_losers_are_reported() {
        let req = three_ads();
        let out = run_auction(&req, &[2.0, 0.8, 0.1], &AuctionConfig::default());
        // C scores 0.05 < reserve 0.1
        assert_eq!(out.slots.len(), 2);
        assert_eq!(out.losers, vec![AdId::new("C")]);
        // B is now last and pays reserve / bidscore
        assert!((out.slots[1].price_per_click - 0.05).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_duplicates_and_zero_slots() {
        let mut req = request(vec![participant("A", 1.0), participant("A", 1.0)], 1);
        assert!(req.validate().is_err());
        req.participants.pop();
        req.slot_count = 0;
        assert!(req.validate().is_err());
        req.slot_count = 1;
        assert!(req.validate().is_ok());
    }

    #[test]
    fn ad_rejects_foreign_keyword_tuples() {
        let kt = KeywordTuple { belong_ad: "other".into(), keyword: "k".into(), bidprice: 1.0 };
        assert!(Ad::new("me".into(), vec![kt], 10.0, 1.0).is_err());
        assert!(Ad::new("me".into(), vec![], 0.0, 1.0).is_err());
    }

    fn arb_auction() -> impl Strategy<Value = (AuctionRequest, Vec<f64>)> {
        (1usize..7, 1u32..4, any::<u64>()).prop_flat_map(|(n, slots, seed)| {
            (
                proptest::collection::vec(0.2f64..3.0, n),
                proptest::collection::vec(0.0f64..4.0, n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_map(move |(scores, bids, ctrs)| {
                    let ps = scores
                        .iter()
                        .zip(&ctrs)
                        .enumerate()
                        .map(|(i, (&bs, &ctr))| Participant {
                            ad: AdId::new(format!("ad{i}")),
                            bidscore: bs,
                            pcvr: 0.2,
                            true_ctr: ctr,
                            true_cvr: 0.6,
                            purchase_amount_mean: 5.0,
                            preset_bid: None,
                        })
                        .collect();
                    let mut req = request(ps, slots);
                    req.response_seed = seed;
                    (req, bids)
                })
        })
    }

    proptest! {
        #[test]
        fn payment_bounds_hold((req, bids) in arb_auction()) {
            let cfg = AuctionConfig::default();
            let out = run_auction(&req, &bids, &cfg);
            prop_assert!(out.slots.len() <= req.slot_count as usize);
            for s in &out.slots {
                let (i, p) = req.participant(&s.ad).unwrap();
                prop_assert!(s.price_per_click <= bids[i] + 1e-12);
                prop_assert!(s.price_per_click >= cfg.reserve / p.bidscore - 1e-12);
                prop_assert!(!s.purchased || s.clicked);
                prop_assert_eq!(s.purchased, s.purchase_amount > 0.0);
            }
            prop_assert_eq!(out.slots.len() + out.losers.len(), req.participants.len());
        }

        #[test]
        fn raising_a_bid_never_lowers_rank((req, bids) in arb_auction(), who in 0usize..7, bump in 0.0f64..2.0) {
            let who = who % bids.len();
            let rank_of = |b: &[f64]| {
                rank_all(&req, b, 0.0).iter().position(|&(i, _)| i == who)
            };
            let before = rank_of(&bids);
            let mut raised = bids.clone();
            raised[who] += bump;
            let after = rank_of(&raised);
            if let Some(b) = before {
                prop_assert!(after.unwrap() <= b);
            }
        }

        #[test]
        fn outcome_is_deterministic((req, bids) in arb_auction()) {
            let cfg = AuctionConfig::default();
            prop_assert_eq!(run_auction(&req, &bids, &cfg), run_auction(&req, &bids, &cfg));
        }
    }
}
