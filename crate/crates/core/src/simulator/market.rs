use std::collections::HashMap;

use serde::Serialize;

use super::generate::AuctionLog;
use crate::auction::{run_auction, AdId, AuctionConfig, AuctionOutcome, AuctionRequest, Participant};
use crate::mdp::{AdImpression, HourAccumulator, HourAggregate};
use crate::{Error, Result};

/// What a policy sees when an hour opens.
#[derive(Clone, Debug)]
pub struct HourView<'a> {
    pub hour: usize,
    pub budget: f64,
    pub budget_left: f64,
    pub previous: Option<&'a HourAggregate>,
}

#[derive(Clone, Debug)]
pub struct BidContext {
    pub hour: usize,
    pub budget: f64,
    pub budget_left: f64,
    /// How many auctions this advertiser has entered earlier in the day.
    pub auction_index: usize,
}

/// A bidding strategy for one advertiser.
pub trait BidPolicy {
    fn start_hour(&mut self, _view: &HourView<'_>) -> Result<()> {
        Ok(())
    }

    fn bid(&mut self, request: &AuctionRequest, me: &Participant, ctx: &BidContext) -> Result<f64>;
}

impl<T: BidPolicy + ?Sized> BidPolicy for Box<T> {
    fn start_hour(&mut self, view: &HourView<'_>) -> Result<()> {
        (**self).start_hour(view)
    }

    fn bid(&mut self, request: &AuctionRequest, me: &Participant, ctx: &BidContext) -> Result<f64> {
        (**self).bid(request, me, ctx)
    }
}

/// What happens once spend reaches the budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetMode {
    /// Bid 0 for the rest of the day once nothing is left.
    Shutdown,
    /// Keep bidding; spend may go negative and the caller decides what that means.
    Overdraft,
    /// Like `Shutdown`, but every bid is capped at the budget left, so a click
    /// can never overdraw the account.
    Capped,
}

#[derive(Clone, Debug)]
pub struct Account {
    pub budget: f64,
    pub spent: f64,
    pub mode: BudgetMode,
    pub active: bool,
    pub auctions_seen: usize,
}

impl Account {
    pub fn budget_left(&self) -> f64 {
        self.budget - self.spent
    }

    pub fn can_bid(&self) -> bool {
        self.active && (self.mode == BudgetMode::Overdraft || self.budget_left() > 0.0)
    }
}

/// Advertisers competing in a shared stream of auctions, with their spend accounts.
pub struct Market {
    config: AuctionConfig,
    roster: Vec<AdId>,
    lookup: HashMap<AdId, usize>,
    accounts: Vec<Account>,
    bids: Vec<f64>,
}

impl Market {
    pub fn new(config: AuctionConfig, roster: Vec<AdId>) -> Result<Self> {
        config.validate()?;
        let mut lookup = HashMap::with_capacity(roster.len());
        for (i, ad) in roster.iter().enumerate() {
            if lookup.insert(ad.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("ad {ad} appears twice in the market")));
            }
        }
        let accounts = roster
            .iter()
            .map(|_| Account { budget: 0.0, spent: 0.0, mode: BudgetMode::Shutdown, active: false, auctions_seen: 0 })
            .collect();
        Ok(Self { config, roster, lookup, accounts, bids: Vec::new() })
    }

    pub fn config(&self) -> &AuctionConfig {
        &self.config
    }

    pub fn roster(&self) -> &[AdId] {
        &self.roster
    }

    pub fn index_of(&self, ad: &AdId) -> Option<usize> {
        self.lookup.get(ad).copied()
    }

    pub fn account(&self, i: usize) -> &Account {
        &self.accounts[i]
    }

    pub fn open_day(&mut self, budgets: &[f64], modes: &[BudgetMode]) -> Result<()> {
        if budgets.len() != self.roster.len() || modes.len() != self.roster.len() {
            return Err(Error::Contract("one budget and mode per advertiser".into()));
        }
        for ((acc, &budget), &mode) in self.accounts.iter_mut().zip(budgets).zip(modes) {
            if !(budget >= 0.0 && budget.is_finite()) {
                return Err(Error::InvalidInput(format!("budget {budget} must be finite and non-negative")));
            }
            *acc = Account { budget, spent: 0.0, mode, active: true, auctions_seen: 0 };
        }
        Ok(())
    }

    /// Stop an advertiser from bidding for the rest of the day.
    pub fn deactivate(&mut self, i: usize) {
        self.accounts[i].active = false;
    }

    pub fn start_hour<P: BidPolicy>(
        &mut self,
        hour: usize,
        policies: &mut [P],
        previous: &[Option<HourAggregate>],
    ) -> Result<()> {
        for (i, p) in policies.iter_mut().enumerate() {
            let acc = &self.accounts[i];
            p.start_hour(&HourView {
                hour,
                budget: acc.budget,
                budget_left: acc.budget_left(),
                previous: previous.get(i).and_then(|x| x.as_ref()),
            })?;
        }
        Ok(())
    }

    /// Collect bids, run the auction, debit clicks and report each roster
    /// participant's impression through `sink`.
    pub fn run_auction<P: BidPolicy>(
        &mut self,
        request: &AuctionRequest,
        policies: &mut [P],
        mut sink: impl FnMut(usize, &AdImpression),
    ) -> Result<AuctionOutcome> {
        let hour = request.hour();
        self.bids.clear();
        for p in &request.participants {
            let bid = match p.preset_bid {
                Some(b) => b,
                None => {
                    let i = *self
                        .lookup
                        .get(&p.ad)
                        .ok_or_else(|| Error::InvalidInput(format!("no bidder registered for ad {}", p.ad)))?;
                    let acc = &self.accounts[i];
                    if acc.can_bid() {
                        let ctx = BidContext {
                            hour,
                            budget: acc.budget,
                            budget_left: acc.budget_left(),
                            auction_index: acc.auctions_seen,
                        };
                        let b = policies[i].bid(request, p, &ctx)?;
                        if !(b >= 0.0 && b.is_finite()) {
                            return Err(Error::InvalidInput(format!("ad {} bid {b}", p.ad)));
                        }
                        if acc.mode == BudgetMode::Capped {
                            b.min(ctx.budget_left)
                        } else {
                            b
                        }
                    } else {
                        0.0
                    }
                }
            };
            self.bids.push(bid);
        }
        let outcome = run_auction(request, &self.bids, &self.config);
        for (pi, p) in request.participants.iter().enumerate() {
            if p.is_competitor() {
                continue;
            }
            let i = self.lookup[&p.ad];
            let slot = outcome.slots.iter().find(|s| s.ad == p.ad);
            let imp = match slot {
                Some(s) => AdImpression {
                    pcvr: p.pcvr,
                    bid: self.bids[pi],
                    rank: Some(s.rank),
                    price_per_click: s.price_per_click,
                    clicked: s.clicked,
                    purchased: s.purchased,
                    purchase_amount: s.purchase_amount,
                },
                None => AdImpression { pcvr: p.pcvr, bid: self.bids[pi], ..Default::default() },
            };
            let acc = &mut self.accounts[i];
            acc.spent += imp.cost();
            acc.auctions_seen += 1;
            sink(i, &imp);
        }
        Ok(outcome)
    }
}

/// Hour-by-hour results of one advertiser over one day.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub hours: Vec<HourAggregate>,
    pub totals: HourAggregate,
    pub budget: f64,
    pub final_budget_left: f64,
}

impl EpisodeResult {
    pub fn cost(&self) -> f64 {
        self.totals.cost
    }

    pub fn pur_amt(&self) -> f64 {
        self.totals.pur_amt
    }

    /// Budget left equals budget minus total cost, bit for bit.
    pub fn budget_conserved(&self) -> bool {
        self.final_budget_left == self.budget - self.totals.cost
    }

    /// Treat the day's own spend as its budget.
    pub fn rebase_budget_on_cost(&mut self) {
        self.budget = self.totals.cost;
        self.final_budget_left = 0.0;
    }
}

/// Replay a day for every advertiser in the market. `policies` and `budgets`
/// are aligned with the market roster.
pub fn run_day<P: BidPolicy>(
    market: &mut Market,
    log: &AuctionLog,
    policies: &mut [P],
    budgets: &[f64],
    mode: BudgetMode,
) -> Result<Vec<EpisodeResult>> {
    let n = market.roster().len();
    if policies.len() != n {
        return Err(Error::Contract(format!("{} policies for {n} advertisers", policies.len())));
    }
    market.open_day(budgets, &vec![mode; n])?;
    let mut day_acc = vec![HourAccumulator::default(); n];
    let mut hours: Vec<Vec<HourAggregate>> = vec![Vec::with_capacity(24); n];
    let mut previous: Vec<Option<HourAggregate>> = vec![None; n];
    for (h, range) in log.hour_ranges().into_iter().enumerate() {
        market.start_hour(h, policies, &previous)?;
        let mut acc = vec![HourAccumulator::default(); n];
        for request in &log.auctions[range] {
            market.run_auction(request, policies, |i, imp| {
                acc[i].push(imp);
                day_acc[i].push(imp);
            })?;
        }
        for i in 0..n {
            let agg = acc[i].finish();
            hours[i].push(agg.clone());
            previous[i] = Some(agg);
        }
    }
    Ok((0..n)
        .map(|i| {
            let acc = market.account(i);
            EpisodeResult {
                hours: std::mem::take(&mut hours[i]),
                totals: day_acc[i].finish(),
                budget: acc.budget,
                final_budget_left: acc.budget_left(),
            }
        })
        .collect())
}

/// Single-advertiser replay under the evaluation budget rule.
///
/// Only auctions that include `ad` are replayed; other studied advertisers in
/// those auctions do not bid.
pub fn run_episode<P: BidPolicy>(
    log: &AuctionLog,
    ad: &AdId,
    policy: P,
    budget: f64,
    config: &AuctionConfig,
) -> Result<EpisodeResult> {
    if !(budget > 0.0) {
        return Err(Error::InvalidInput(format!("budget {budget} must be positive")));
    }
    let own = log.involving(std::slice::from_ref(ad));
    let mut roster = vec![ad.clone()];
    for a in &own.auctions {
        for p in &a.participants {
            if !p.is_competitor() && !roster.contains(&p.ad) {
                roster.push(p.ad.clone());
            }
        }
    }
    let mut policies: Vec<Box<dyn BidPolicy>> = vec![Box::new(policy)];
    let mut budgets = vec![budget];
    for _ in 1..roster.len() {
        policies.push(Box::new(Silent));
        budgets.push(0.0);
    }
    let mut market = Market::new(config.clone(), roster)?;
    let mut results = run_day(&mut market, &own, &mut policies, &budgets, BudgetMode::Shutdown)?;
    Ok(results.swap_remove(0))
}

/// Never bids.
pub(crate) struct Silent;

impl BidPolicy for Silent {
    fn bid(&mut self, _: &AuctionRequest, _: &Participant, _: &BidContext) -> Result<f64> {
        Ok(0.0)
    }
}
