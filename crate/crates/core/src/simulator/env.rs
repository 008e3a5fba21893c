use std::ops::Range;
use std::sync::Arc;

use super::generate::AuctionLog;
use super::market::{BidContext, BidPolicy, BudgetMode, Market};
use crate::auction::{AdId, AuctionConfig, AuctionRequest, Participant};
use crate::bidder::{amdp_features, ActionGrid, AmdpScales, KbPolicy, LinearBidPolicy, RmdpStateBuilder, AMDP_INTERVAL};
use crate::dqn::{EnvStep, Environment};
use crate::mdp::{raw_features, HourAccumulator, HourAggregate, MdpState, StateScale, FEATURE_DIM, STEPS_PER_DAY};
use crate::{Error, Result};

/// Bidders an environment can host.
#[derive(Clone, Debug)]
pub enum EnvBidder {
    Linear(LinearBidPolicy),
    Kb(KbPolicy),
    Fixed(f64),
    Idle,
}

impl BidPolicy for EnvBidder {
    fn bid(&mut self, request: &AuctionRequest, me: &Participant, ctx: &BidContext) -> Result<f64> {
        match self {
            EnvBidder::Linear(p) => p.bid(request, me, ctx),
            EnvBidder::Kb(p) => p.bid(request, me, ctx),
            EnvBidder::Fixed(price) => Ok(*price),
            EnvBidder::Idle => Ok(0.0),
        }
    }
}

/// Advertisers under study appearing in `logs`, with `first` leading.
pub fn roster_from_logs<'a>(first: &AdId, logs: impl IntoIterator<Item = &'a AuctionLog>) -> Vec<AdId> {
    let mut roster = vec![first.clone()];
    for log in logs {
        for a in &log.auctions {
            for p in &a.participants {
                if !p.is_competitor() && !roster.contains(&p.ad) {
                    roster.push(p.ad.clone());
                }
            }
        }
    }
    roster
}

/// What one learning advertiser observes after an hour.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerStep {
    pub next: Option<MdpState>,
    pub reward: f64,
    pub cost: f64,
    pub budget_left: f64,
    pub aggregate: HourAggregate,
    /// Unnormalised features after the hour, with the α that was applied.
    pub raw: [f64; FEATURE_DIM],
}

impl LearnerStep {
    pub fn overspent(&self) -> bool {
        self.budget_left < 0.0
    }
}

/// A shared market stepped one hour at a time. Learners set their α per hour;
/// other advertisers follow fixed bidders.
pub struct MarketEnv {
    market: Market,
    bidders: Vec<EnvBidder>,
    learners: Vec<(usize, RmdpStateBuilder)>,
    log: Option<Arc<AuctionLog>>,
    ranges: Vec<Range<usize>>,
    hour: usize,
    alphas: Vec<f64>,
    done: Vec<bool>,
}

impl MarketEnv {
    pub fn new(
        config: AuctionConfig,
        roster: Vec<AdId>,
        bidders: Vec<EnvBidder>,
        learners: Vec<(AdId, RmdpStateBuilder)>,
    ) -> Result<Self> {
        if bidders.len() != roster.len() {
            return Err(Error::Contract("one bidder per advertiser".into()));
        }
        let market = Market::new(config, roster)?;
        let learners = learners
            .into_iter()
            .map(|(ad, states)| {
                let i = market
                    .index_of(&ad)
                    .ok_or_else(|| Error::InvalidInput(format!("learner {ad} is not in the market")))?;
                Ok((i, states))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = learners.len();
        Ok(Self {
            market,
            bidders,
            learners,
            log: None,
            ranges: Vec::new(),
            hour: STEPS_PER_DAY,
            alphas: vec![0.0; n],
            done: vec![true; n],
        })
    }

    pub fn learner_count(&self) -> usize {
        self.learners.len()
    }

    pub fn hour(&self) -> usize {
        self.hour
    }

    /// Start a day. `budgets` follow the market roster. Returns each learner's first state.
    pub fn reset(&mut self, log: Arc<AuctionLog>, budgets: &[f64]) -> Result<Vec<MdpState>> {
        let n = self.market.roster().len();
        self.market.open_day(budgets, &vec![BudgetMode::Capped; n])?;
        self.ranges = log.hour_ranges();
        self.log = Some(log);
        self.hour = 0;
        self.alphas.iter_mut().for_each(|a| *a = 0.0);
        self.done.iter_mut().for_each(|d| *d = false);
        self.learners
            .iter()
            .map(|(i, states)| {
                let acc = self.market.account(*i);
                states.state(acc.budget, acc.budget_left(), 1, None, 0.0)
            })
            .collect()
    }

    /// Run the current hour with one action per learner (`None` for learners
    /// whose episode already ended).
    pub fn step(&mut self, actions: &[Option<usize>]) -> Result<Vec<Option<LearnerStep>>> {
        if self.hour >= STEPS_PER_DAY {
            return Err(Error::Contract("stepping a finished episode; call reset first".into()));
        }
        if actions.len() != self.learners.len() {
            return Err(Error::Contract(format!("{} actions for {} learners", actions.len(), self.learners.len())));
        }
        for (j, ((i, states), action)) in self.learners.iter().zip(actions).enumerate() {
            match (self.done[j], action) {
                (false, Some(k)) => {
                    let alpha = states.grid.value(*k)?;
                    self.alphas[j] = alpha;
                    self.bidders[*i] = EnvBidder::Linear(LinearBidPolicy::new(alpha)?);
                }
                (true, None) => self.bidders[*i] = EnvBidder::Idle,
                (false, None) => return Err(Error::Contract(format!("learner {j} needs an action"))),
                (true, Some(_)) => return Err(Error::Contract(format!("learner {j} has already finished"))),
            }
        }
        let log = self.log.clone().expect("reset before step");
        let mut acc = vec![HourAccumulator::default(); self.market.roster().len()];
        for request in &log.auctions[self.ranges[self.hour].clone()] {
            self.market.run_auction(request, &mut self.bidders, |i, imp| acc[i].push(imp))?;
        }
        self.hour += 1;
        let last = self.hour == STEPS_PER_DAY;
        let mut out = Vec::with_capacity(self.learners.len());
        for (j, (i, states)) in self.learners.iter().enumerate() {
            if self.done[j] {
                out.push(None);
                continue;
            }
            let aggregate = acc[*i].finish();
            let account = self.market.account(*i);
            let (budget, budget_left) = (account.budget, account.budget_left());
            let scale = StateScale {
                budget,
                alpha_max: states.grid.max(),
                slot_count: states.slot_count,
                steps: STEPS_PER_DAY,
            };
            let raw = raw_features(budget_left, self.hour + 1, &aggregate, self.alphas[j], &scale);
            let overspent = budget_left < 0.0;
            let next = if last || overspent {
                None
            } else {
                Some(states.state(budget, budget_left, self.hour + 1, Some(&aggregate), self.alphas[j])?)
            };
            if last || overspent {
                self.done[j] = true;
                self.market.deactivate(*i);
            }
            out.push(Some(LearnerStep { next, reward: aggregate.pur_amt, cost: aggregate.cost, budget_left, aggregate, raw }));
        }
        Ok(out)
    }
}

/// One day a single learner trains on: its log and every roster budget.
#[derive(Clone, Debug)]
pub struct TrainingDay {
    pub log: Arc<AuctionLog>,
    pub budgets: Vec<f64>,
}

/// Single-learner hour-level environment; episode `e` replays day `e mod days`.
pub struct RmdpEnv {
    env: MarketEnv,
    days: Vec<TrainingDay>,
    scale: f64,
}

impl RmdpEnv {
    /// `roster[0]` is the learner; the rest bid with `others`.
    pub fn new(
        config: AuctionConfig,
        roster: Vec<AdId>,
        others: Vec<EnvBidder>,
        states: RmdpStateBuilder,
        days: Vec<TrainingDay>,
    ) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::InvalidInput("no training days".into()));
        }
        if days.iter().any(|d| d.budgets.len() != roster.len() || !(d.budgets[0] > 0.0)) {
            return Err(Error::InvalidInput("each day needs a positive learner budget and one budget per ad".into()));
        }
        let learner = roster[0].clone();
        let mut bidders = vec![EnvBidder::Idle];
        bidders.extend(others);
        let env = MarketEnv::new(config, roster, bidders, vec![(learner, states)])?;
        Ok(Self { env, days, scale: 1.0 })
    }

    /// Learner alone with its own auctions; other studied ads in them stay idle.
    pub fn single(config: AuctionConfig, ad: &AdId, states: RmdpStateBuilder, days: Vec<(Arc<AuctionLog>, f64)>) -> Result<Self> {
        let roster = roster_from_logs(ad, days.iter().map(|(l, _)| l.as_ref()));
        let n = roster.len();
        let days = days
            .into_iter()
            .map(|(log, budget)| {
                let mut budgets = vec![0.0; n];
                budgets[0] = budget;
                TrainingDay { log, budgets }
            })
            .collect();
        Self::new(config, roster, vec![EnvBidder::Idle; n - 1], states, days)
    }
}

impl Environment for RmdpEnv {
    fn horizon(&self) -> usize {
        STEPS_PER_DAY
    }

    fn reset(&mut self, episode: usize) -> Result<MdpState> {
        let day = &self.days[episode % self.days.len()];
        self.scale = day.budgets[0];
        let mut states = self.env.reset(day.log.clone(), &day.budgets)?;
        Ok(states.swap_remove(0))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let s = self.env.step(&[Some(action)])?.swap_remove(0).expect("learner active until its episode ends");
        Ok(EnvStep { next: s.next, reward: s.reward, reward_scale: self.scale, cost: s.cost, budget_left: s.budget_left })
    }
}

/// Auction-level environment: a decision sets a direct price for the ad's next
/// [`AMDP_INTERVAL`] auctions.
pub struct AmdpEnv {
    market: Market,
    bidders: Vec<EnvBidder>,
    ad: AdId,
    days: Vec<(Arc<AuctionLog>, f64)>,
    prices: ActionGrid,
    scales: AmdpScales,
    log: Option<Arc<AuctionLog>>,
    cursor: usize,
    price: f64,
    decision: usize,
}

impl AmdpEnv {
    /// `days` hold the ad's logs with their budgets.
    pub fn new(
        config: AuctionConfig,
        ad: &AdId,
        prices: ActionGrid,
        scales: AmdpScales,
        days: Vec<(Arc<AuctionLog>, f64)>,
    ) -> Result<Self> {
        scales.validate()?;
        if days.is_empty() || days.iter().any(|(_, b)| !(*b > 0.0)) {
            return Err(Error::InvalidInput("AMDP training needs days with positive budgets".into()));
        }
        let days: Vec<_> = days.into_iter().map(|(l, b)| (Arc::new(l.involving(std::slice::from_ref(ad))), b)).collect();
        let roster = roster_from_logs(ad, days.iter().map(|(l, _)| l.as_ref()));
        let bidders = vec![EnvBidder::Idle; roster.len()];
        Ok(Self {
            market: Market::new(config, roster)?,
            bidders,
            ad: ad.clone(),
            days,
            prices,
            scales,
            log: None,
            cursor: 0,
            price: 0.0,
            decision: 0,
        })
    }

    fn state_at(&self, log: &AuctionLog) -> Result<MdpState> {
        let account = self.market.account(0);
        let g = match log.auctions.get(self.cursor) {
            Some(request) => {
                let (_, me) = request.participant(&self.ad).expect("log filtered to the ad");
                amdp_features(
                    account.budget,
                    account.budget_left(),
                    self.cursor,
                    request,
                    me,
                    self.price,
                    self.prices.max(),
                    &self.scales,
                )
            }
            None => [0.0; FEATURE_DIM],
        };
        MdpState::new(account.budget_left().max(0.0), self.decision + 1, g)
    }
}

impl Environment for AmdpEnv {
    fn horizon(&self) -> usize {
        (self.scales.auctions / AMDP_INTERVAL as f64).ceil().max(1.0) as usize
    }

    fn reset(&mut self, episode: usize) -> Result<MdpState> {
        let (log, budget) = self.days[episode % self.days.len()].clone();
        let mut budgets = vec![0.0; self.bidders.len()];
        budgets[0] = budget;
        self.market.open_day(&budgets, &vec![BudgetMode::Capped; budgets.len()])?;
        self.cursor = 0;
        self.price = 0.0;
        self.decision = 0;
        let s = self.state_at(&log);
        self.log = Some(log);
        s
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let log = self.log.clone().ok_or_else(|| Error::Contract("reset before step".into()))?;
        if self.cursor >= log.auctions.len() && self.decision > 0 {
            return Err(Error::Contract("stepping a finished episode; call reset first".into()));
        }
        self.price = self.prices.value(action)?;
        self.bidders[0] = EnvBidder::Fixed(self.price);
        let end = (self.cursor + AMDP_INTERVAL).min(log.auctions.len());
        let mut acc = HourAccumulator::default();
        for request in &log.auctions[self.cursor..end] {
            self.market.run_auction(request, &mut self.bidders, |i, imp| {
                if i == 0 {
                    acc.push(imp)
                }
            })?;
        }
        self.cursor = end.max(self.cursor + 1);
        self.decision += 1;
        let agg = acc.finish();
        let account = self.market.account(0);
        let budget_left = account.budget_left();
        let next = if self.cursor >= log.auctions.len() || budget_left < 0.0 {
            self.cursor = self.cursor.max(log.auctions.len());
            None
        } else {
            Some(self.state_at(&log)?)
        };
        Ok(EnvStep { next, reward: agg.pur_amt, reward_scale: account.budget, cost: agg.cost, budget_left })
    }
}
