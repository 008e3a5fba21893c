use std::sync::Arc;

use super::lab::Lab;
use super::metrics::{AlgoMetrics, MetricsReport};
use super::seeds::Stream;
use crate::auction::AdId;
use crate::bidder::{AmdpBidder, AmdpModel, KbPolicy, LinearBidPolicy, RmdpPolicy};
use crate::dqn::{train, QNetwork, TrainOutput};
use crate::multiagent::{train_massive, training_days, AgentPool, MassiveOutput};
use crate::simulator::{
    run_day, run_episode, AmdpEnv, AuctionLog, BidPolicy, BudgetMode, EnvBidder, EpisodeResult, Market, RmdpEnv,
    TrainingDay,
};
use crate::{Error, Result};

pub const KB: &str = "KB";
pub const CONST_ALPHA: &str = "CONST";
pub const RMDP: &str = "RMDP";
pub const AMDP: &str = "AMDP";
pub const M_RMDP: &str = "M-RMDP";

/// KB replays of ad `i` on `logs`; their spends are the budgets every other
/// algorithm gets on the same days.
pub fn kb_baseline(lab: &Lab, i: usize, logs: &[Arc<AuctionLog>]) -> Result<(Vec<EpisodeResult>, Vec<f64>)> {
    let mut results = Vec::with_capacity(logs.len());
    let mut budgets = Vec::with_capacity(logs.len());
    for log in logs {
        let mut r = lab.kb_episode(log, i)?;
        if !(r.cost() > 0.0) {
            return Err(Error::InvalidInput(format!("ad {}: KB spends nothing on day {}", lab.ad_id(i), log.day)));
        }
        r.rebase_budget_on_cost();
        budgets.push(r.budget);
        results.push(r);
    }
    Ok((results, budgets))
}

/// Replay a fresh policy per day under the given budgets.
pub fn replay<P: BidPolicy>(
    lab: &Lab,
    i: usize,
    logs: &[Arc<AuctionLog>],
    budgets: &[f64],
    mut make: impl FnMut() -> Result<P>,
) -> Result<Vec<EpisodeResult>> {
    logs.iter()
        .zip(budgets)
        .map(|(log, &b)| run_episode(log, lab.ad_id(i), make()?, b, &lab.config.auction))
        .collect()
}

pub fn train_rmdp(lab: &Lab, i: usize, logs: &[Arc<AuctionLog>], budgets: &[f64]) -> Result<TrainOutput> {
    let days = logs.iter().cloned().zip(budgets.iter().copied()).collect();
    let mut env = RmdpEnv::single(lab.config.auction.clone(), lab.ad_id(i), lab.states(i)?, days)?;
    train(&mut env, &lab.config.trainer, lab.seeds.learner(RMDP, i as u64))
}

pub fn train_amdp(lab: &Lab, i: usize, logs: &[Arc<AuctionLog>], budgets: &[f64]) -> Result<(AmdpModel, TrainOutput)> {
    let days = logs.iter().cloned().zip(budgets.iter().copied()).collect();
    let mut env = AmdpEnv::new(
        lab.config.auction.clone(),
        lab.ad_id(i),
        lab.amdp_prices(i)?,
        lab.calibration[i].amdp_scales.clone(),
        days,
    )?;
    let out = train(&mut env, lab.config.amdp_trainer(), lab.seeds.learner(AMDP, i as u64))?;
    let model = amdp_model(lab, i, out.network.clone(), out.log.batches.len() as u64)?;
    Ok((model, out))
}

/// Trained single-agent models for one ad.
pub struct AdRun {
    pub rmdp: TrainOutput,
    pub amdp: TrainOutput,
    pub amdp_model: Arc<AmdpModel>,
}

pub struct SingleAgentComparison {
    pub report: MetricsReport,
    pub runs: Vec<AdRun>,
}

/// Per ad: train the hour-level and auction-level learners on the train days
/// with KB-equal budgets, then replay KB, constant α, RMDP and AMDP on the train
/// and test days.
pub fn compare_single(lab: &Lab) -> Result<SingleAgentComparison> {
    let train_logs = lab.days(Stream::TrainDay, lab.config.train_days)?;
    let test_logs = lab.days(Stream::TestDay, lab.config.test_days)?;
    let mut report = MetricsReport::default();
    let mut runs = Vec::with_capacity(lab.ads.len());
    for i in 0..lab.ads.len() {
        let ad = lab.ad_id(i).to_string();
        let (kb_train, train_budgets) = kb_baseline(lab, i, &train_logs)?;
        log::info!("{ad}: training RMDP");
        let rmdp = train_rmdp(lab, i, &train_logs, &train_budgets)?;
        log::info!("{ad}: training AMDP");
        let (model, amdp) = train_amdp(lab, i, &train_logs, &train_budgets)?;
        let model = Arc::new(model);
        let net = Arc::new(rmdp.network.clone());
        let states = lab.states(i)?;
        let alpha = lab.calibration[i].alpha_ref;
        for (split, logs) in [("train", &train_logs), ("test", &test_logs)] {
            let (kb_results, budgets) = if split == "train" {
                (kb_train.clone(), train_budgets.clone())
            } else {
                kb_baseline(lab, i, logs)?
            };
            let kb = AlgoMetrics::from_results(&kb_results);
            let constant = replay(lab, i, logs, &budgets, || LinearBidPolicy::new(alpha))?;
            let rmdp_res = replay(lab, i, logs, &budgets, || Ok(RmdpPolicy::new(net.clone(), states.clone())))?;
            let amdp_res = replay(lab, i, logs, &budgets, || AmdpBidder::new(model.clone()))?;
            report.push(&ad, KB, split, kb.clone(), &kb);
            report.push(&ad, CONST_ALPHA, split, AlgoMetrics::from_results(&constant), &kb);
            report.push(&ad, RMDP, split, AlgoMetrics::from_results(&rmdp_res), &kb);
            report.push(&ad, AMDP, split, AlgoMetrics::from_results(&amdp_res), &kb);
        }
        runs.push(AdRun { rmdp, amdp, amdp_model: model });
    }
    Ok(SingleAgentComparison { report, runs })
}

/// KB policy of ad `i` as configured.
pub fn kb_policy(lab: &Lab, i: usize) -> Result<KbPolicy> {
    KbPolicy::from_ad(&lab.ads[i].ad)
}

/// Budgets per day from every configured ad bidding KB together in one market.
pub fn shared_kb_days(lab: &Lab, logs: &[Arc<AuctionLog>]) -> Result<Vec<(Vec<EpisodeResult>, Vec<f64>)>> {
    let roster: Vec<AdId> = lab.ads.iter().map(|a| a.ad.id.clone()).collect();
    let daily: Vec<f64> = lab.ads.iter().map(|a| a.ad.daily_budget).collect();
    let mut out = Vec::with_capacity(logs.len());
    for log in logs {
        let mut policies = (0..lab.ads.len()).map(|i| kb_policy(lab, i)).collect::<Result<Vec<_>>>()?;
        let mut market = Market::new(lab.config.auction.clone(), roster.clone())?;
        let mut results = run_day(&mut market, log, &mut policies, &daily, BudgetMode::Shutdown)?;
        let mut budgets = Vec::with_capacity(results.len());
        for (r, ad) in results.iter_mut().zip(&roster) {
            if !(r.cost() > 0.0) {
                return Err(Error::InvalidInput(format!("ad {ad}: KB spends nothing on day {}", log.day)));
            }
            r.rebase_budget_on_cost();
            budgets.push(r.budget);
        }
        out.push((results, budgets));
    }
    Ok(out)
}

/// Replay all configured ads together, one policy set per day.
pub fn replay_shared(
    lab: &Lab,
    logs: &[Arc<AuctionLog>],
    budgets: &[Vec<f64>],
    mut make: impl FnMut() -> Result<Vec<Box<dyn BidPolicy>>>,
) -> Result<Vec<Vec<EpisodeResult>>> {
    let roster: Vec<AdId> = lab.ads.iter().map(|a| a.ad.id.clone()).collect();
    logs.iter()
        .zip(budgets)
        .map(|(log, b)| {
            let mut market = Market::new(lab.config.auction.clone(), roster.clone())?;
            let mut policies = make()?;
            run_day(&mut market, log, &mut policies, b, BudgetMode::Shutdown)
        })
        .collect()
}

/// Independent learner for ad `i` in the shared market, the other ads bidding KB.
pub fn train_rmdp_shared(lab: &Lab, i: usize, logs: &[Arc<AuctionLog>], budgets: &[Vec<f64>]) -> Result<TrainOutput> {
    let n = lab.ads.len();
    let order: Vec<usize> = std::iter::once(i).chain((0..n).filter(|&k| k != i)).collect();
    let roster = order.iter().map(|&k| lab.ad_id(k).clone()).collect();
    let others = order[1..].iter().map(|&k| Ok(EnvBidder::Kb(kb_policy(lab, k)?))).collect::<Result<Vec<_>>>()?;
    let days = logs
        .iter()
        .zip(budgets)
        .map(|(log, b)| TrainingDay { log: log.clone(), budgets: order.iter().map(|&k| b[k]).collect() })
        .collect();
    let mut env = RmdpEnv::new(lab.config.auction.clone(), roster, others, lab.states(i)?, days)?;
    train(&mut env, &lab.config.trainer, lab.seeds.learner(RMDP, i as u64))
}

/// All configured ads trained jointly in one market with the mixed reward.
pub fn train_m_rmdp(lab: &Lab, logs: &[Arc<AuctionLog>], budgets: &[Vec<f64>]) -> Result<MassiveOutput> {
    let n = lab.ads.len();
    log::info!("training M-RMDP with {n} agents");
    let roster = (0..n).map(|i| lab.ad_id(i).clone()).collect();
    let learners = (0..n).map(|i| lab.states(i)).collect::<Result<Vec<_>>>()?;
    let pool = AgentPool::new(
        lab.config.auction.clone(),
        roster,
        learners,
        Vec::new(),
        training_days(logs, budgets),
        &lab.config.trainer,
        lab.config.lambda,
        lab.seeds.learner(M_RMDP, 0),
    )?;
    train_massive(pool, lab.config.trainer.episodes)
}

/// An AMDP model for ad `i` around a trained network.
pub fn amdp_model(lab: &Lab, i: usize, net: QNetwork, batches_trained: u64) -> Result<AmdpModel> {
    Ok(AmdpModel {
        net,
        prices: lab.amdp_prices(i)?,
        scales: lab.calibration[i].amdp_scales.clone(),
        batches_trained,
    })
}

pub struct MassiveComparison {
    pub report: MetricsReport,
    pub rmdp: Vec<TrainOutput>,
    pub m_rmdp: MassiveOutput,
}

impl MassiveComparison {
    /// Mean over agents of the per-agent PUR_AMT/COST on the test days.
    pub fn mean_headline(&self, algorithm: &str) -> f64 {
        self.report.mean_headline(algorithm, "test")
    }
}

/// All configured ads in one market: KB everywhere, independently trained RMDP
/// bidders deployed together, and jointly trained M-RMDP bidders.
pub fn compare_massive(lab: &Lab) -> Result<MassiveComparison> {
    let n = lab.ads.len();
    let train_logs = lab.days(Stream::TrainDay, lab.config.train_days)?;
    let test_logs = lab.days(Stream::TestDay, lab.config.test_days)?;
    let train_budgets: Vec<Vec<f64>> = shared_kb_days(lab, &train_logs)?.into_iter().map(|(_, b)| b).collect();
    let test_kb = shared_kb_days(lab, &test_logs)?;
    let test_budgets: Vec<Vec<f64>> = test_kb.iter().map(|(_, b)| b.clone()).collect();

    let mut rmdp = Vec::with_capacity(n);
    for i in 0..n {
        log::info!("{}: training RMDP in the shared market", lab.ad_id(i));
        rmdp.push(train_rmdp_shared(lab, i, &train_logs, &train_budgets)?);
    }
    let m_rmdp = train_m_rmdp(lab, &train_logs, &train_budgets)?;

    let deploy = |nets: Vec<Arc<QNetwork>>| {
        let states = (0..n).map(|i| lab.states(i)).collect::<Result<Vec<_>>>()?;
        replay_shared(lab, &test_logs, &test_budgets, || {
            Ok(nets
                .iter()
                .zip(&states)
                .map(|(net, s)| Box::new(RmdpPolicy::new(net.clone(), s.clone())) as Box<dyn BidPolicy>)
                .collect())
        })
    };
    let rmdp_days = deploy(rmdp.iter().map(|o| Arc::new(o.network.clone())).collect())?;
    let m_days = deploy(m_rmdp.networks.iter().cloned().map(Arc::new).collect())?;

    let mut report = MetricsReport::default();
    let per_ad = |days: &[Vec<EpisodeResult>], i: usize| days.iter().map(|d| d[i].clone()).collect::<Vec<_>>();
    let kb_days: Vec<Vec<EpisodeResult>> = test_kb.into_iter().map(|(r, _)| r).collect();
    for i in 0..n {
        let ad = lab.ad_id(i).to_string();
        let kb = AlgoMetrics::from_results(&per_ad(&kb_days, i));
        report.push(&ad, KB, "test", kb.clone(), &kb);
        report.push(&ad, RMDP, "test", AlgoMetrics::from_results(&per_ad(&rmdp_days, i)), &kb);
        report.push(&ad, M_RMDP, "test", AlgoMetrics::from_results(&per_ad(&m_days, i)), &kb);
    }
    Ok(MassiveComparison { report, rmdp, m_rmdp })
}
