//! Independent per-ad learners in one shared market, each rewarded with a blend
//! of its own PUR_AMT and the mean over all agents.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::auction::{AdId, AuctionConfig};
use crate::bidder::RmdpStateBuilder;
use crate::dqn::{DqnAgent, EpisodeRecord, QNetwork, TrainerConfig, TrainingLog, Transition};
use crate::mdp::{MdpState, STEPS_PER_DAY};
use crate::simulator::{mix_seed, AuctionLog, EnvBidder, MarketEnv, TrainingDay};
use crate::{Error, Result};

/// `(1 − λ)·own + λ·mean(all)`.
pub fn mixed_reward(own: f64, all: &[f64], lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
    }
    if all.is_empty() {
        return Err(Error::InvalidInput("no rewards to average".into()));
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    Ok((1.0 - lambda) * own + lambda * mean)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlobalRecord {
    pub episode: usize,
    pub agent: AdId,
    pub cost: f64,
    pub pur_amt: f64,
    pub mixed_reward: f64,
}

pub const GLOBAL_LOG_HEADER: [&str; 5] = ["episode", "agent", "cost", "pur_amt", "mixed_reward"];

pub fn write_global_log<W: Write>(records: &[GlobalRecord], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(GLOBAL_LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.episode.to_string(),
            r.agent.to_string(),
            r.cost.to_string(),
            r.pur_amt.to_string(),
            r.mixed_reward.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One learner per ad sharing a market, with their training days.
pub struct AgentPool {
    env: MarketEnv,
    ads: Vec<AdId>,
    agents: Vec<DqnAgent>,
    days: Vec<TrainingDay>,
    lambda: f64,
}

impl AgentPool {
    /// The first `learners.len()` roster entries must be the learners, in order;
    /// the remaining roster entries bid with `others`. Agent `j` is seeded with
    /// `mix_seed(seed, j)`.
    pub fn new(
        config: AuctionConfig,
        roster: Vec<AdId>,
        learners: Vec<RmdpStateBuilder>,
        others: Vec<EnvBidder>,
        days: Vec<TrainingDay>,
        trainer: &TrainerConfig,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        if learners.is_empty() || learners.len() + others.len() != roster.len() {
            return Err(Error::Contract("roster must list the learners first and then the other bidders".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidInput(format!("lambda {lambda} outside [0, 1]")));
        }
        if days.is_empty() || days.iter().any(|d| d.budgets.len() != roster.len()) {
            return Err(Error::InvalidInput("every training day needs one budget per roster entry".into()));
        }
        let n = learners.len();
        if days.iter().any(|d| d.budgets[..n].iter().any(|b| !(*b > 0.0))) {
            return Err(Error::InvalidInput("learner budgets must be positive".into()));
        }
        let ads = roster[..n].to_vec();
        let mut bidders = vec![EnvBidder::Idle; n];
        bidders.extend(others);
        let pairs = ads.iter().cloned().zip(learners).collect();
        let env = MarketEnv::new(config, roster, bidders, pairs)?;
        let agents = (0..n)
            .map(|j| DqnAgent::new(trainer.clone(), STEPS_PER_DAY, mix_seed(seed, j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { env, ads, agents, days, lambda })
    }

    pub fn ads(&self) -> &[AdId] {
        &self.ads
    }

    pub fn agents(&self) -> &[DqnAgent] {
        &self.agents
    }
}

pub struct MassiveOutput {
    pub networks: Vec<QNetwork>,
    pub logs: Vec<TrainingLog>,
    pub global: Vec<GlobalRecord>,
}

struct Running {
    state: Option<MdpState>,
    action: usize,
    record: EpisodeRecord,
    mixed: f64,
}

/// Lockstep training: every hour all active agents act, the market resolves the
/// hour once with all bids, rewards are blended, then each agent learns.
pub fn train_massive(mut pool: AgentPool, episodes: usize) -> Result<MassiveOutput> {
    let n = pool.agents.len();
    let mut global = Vec::with_capacity(episodes * n);
    for e in 0..episodes {
        let day = pool.days[e % pool.days.len()].clone();
        let first = pool.env.reset(day.log.clone(), &day.budgets)?;
        let mut run: Vec<Running> = first
            .into_iter()
            .map(|s| Running {
                state: Some(s),
                action: 0,
                record: EpisodeRecord { episode: e, pur_amt: 0.0, cost: 0.0, steps: 0, overspent: false },
                mixed: 0.0,
            })
            .collect();
        for a in &mut pool.agents {
            a.begin_episode(e);
        }
        while run.iter().any(|r| r.state.is_some()) {
            let mut actions = Vec::with_capacity(n);
            for (agent, r) in pool.agents.iter_mut().zip(&mut run) {
                actions.push(r.state.as_ref().map(|s| {
                    r.action = agent.act(s);
                    r.action
                }));
            }
            let steps = pool.env.step(&actions)?;
            let rewards: Vec<f64> = steps.iter().map(|s| s.as_ref().map_or(0.0, |s| s.reward)).collect();
            let lambda = pool.lambda;
            let work: Vec<(usize, Option<Transition>)> = steps
                .into_iter()
                .enumerate()
                .filter_map(|(j, step)| step.map(|s| (j, s)))
                .map(|(j, s)| {
                    let r = &mut run[j];
                    let mixed = mixed_reward(s.reward, &rewards, lambda)?;
                    r.record.pur_amt += s.reward;
                    r.record.cost += s.cost;
                    r.record.steps += 1;
                    r.mixed += mixed;
                    let state = r.state.take().expect("active agent has a state");
                    if s.overspent() {
                        r.record.overspent = true;
                        return Ok((j, None));
                    }
                    r.state = s.next.clone();
                    let scale = day.budgets[j];
                    Ok((j, Some(Transition { state, action: r.action, reward: mixed / scale, next: s.next })))
                })
                .collect::<Result<_>>()?;
            let mut slots: Vec<Option<Option<Transition>>> = (0..n).map(|_| None).collect();
            for (j, t) in work {
                slots[j] = Some(t);
            }
            pool.agents
                .par_iter_mut()
                .zip(slots.into_par_iter())
                .try_for_each(|(agent, slot)| -> Result<()> {
                    if let Some(Some(t)) = slot {
                        agent.absorb(t);
                        agent.learn(e)?;
                    }
                    Ok(())
                })?;
        }
        for (j, (agent, r)) in pool.agents.iter_mut().zip(run).enumerate() {
            global.push(GlobalRecord {
                episode: e,
                agent: pool.ads[j].clone(),
                cost: r.record.cost,
                pur_amt: r.record.pur_amt,
                mixed_reward: r.mixed,
            });
            agent.end_episode(r.record);
        }
    }
    let (networks, logs) = pool
        .agents
        .into_iter()
        .map(|a| {
            let (net, _, log) = a.into_parts();
            (net, log)
        })
        .unzip();
    Ok(MassiveOutput { networks, logs, global })
}

/// Convenience for building training days whose logs are shared between agents.
pub fn training_days(logs: &[Arc<AuctionLog>], budgets: &[Vec<f64>]) -> Vec<TrainingDay> {
    logs.iter().zip(budgets).map(|(log, b)| TrainingDay { log: log.clone(), budgets: b.clone() }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{Ad, KeywordTuple};
    use crate::bidder::ActionGrid;
    use crate::dqn::train;
    use crate::mdp::FeatureNorms;
    use crate::simulator::{generate_day, AdTraffic, DayProfile, MarketAd, RmdpEnv};
    use proptest::prelude::*;

    #[test]
    fn mixing_examples() {
        assert_eq!(mixed_reward(2.0, &[2.0, 6.0], 0.0).unwrap(), 2.0);
        assert_eq!(mixed_reward(2.0, &[2.0, 6.0], 1.0).unwrap(), 4.0);
        assert_eq!(mixed_reward(2.0, &[2.0, 6.0], 0.5).unwrap(), 3.0);
        assert!(mixed_reward(1.0, &[1.0], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn mixing_conserves_total(rs in prop::collection::vec(0.0f64..100.0, 1..12), lambda in 0.0f64..=1.0) {
            let total: f64 = rs.iter().sum();
            let mixed: f64 = rs.iter().map(|&r| mixed_reward(r, &rs, lambda).unwrap()).sum();
            prop_assert!((total - mixed).abs() < 1e-9 * (1.0 + total));
        }
    }

    fn ad(id: &str, kw: &str) -> MarketAd {
        let kt = KeywordTuple { belong_ad: id.into(), keyword: kw.into(), bidprice: 1.0 };
        MarketAd { ad: Ad::new(id.into(), vec![kt], 100.0, 10.0).unwrap(), traffic: AdTraffic::default() }
    }

    fn builder() -> RmdpStateBuilder {
        RmdpStateBuilder { grid: ActionGrid::new(8.0).unwrap(), norms: FeatureNorms::default(), slot_count: 3 }
    }

    fn small_trainer() -> TrainerConfig {
        TrainerConfig {
            layer_sizes: vec![15, 8, 6, 100],
            batch_size: 16,
            memory_capacity: 500,
            target_sync: 20,
            learning_rate: 1e-3,
            episodes: 4,
            ..TrainerConfig::default()
        }
    }

    fn logs(ads: &[MarketAd]) -> Vec<Arc<AuctionLog>> {
        (0..2).map(|s| Arc::new(generate_day(40 + s, &DayProfile::default(), ads).unwrap())).collect()
    }

    #[test]
    fn single_agent_pool_matches_plain_training() {
        let ads = [ad("a", "k1")];
        let logs = logs(&ads);
        let cfg = small_trainer();
        let days = training_days(&logs, &[vec![30.0], vec![40.0]]);
        let pool = AgentPool::new(AuctionConfig::default(), vec!["a".into()], vec![builder()], vec![], days, &cfg, 0.7, 9)
            .unwrap();
        let massive = train_massive(pool, cfg.episodes).unwrap();
        let mut env = RmdpEnv::single(
            AuctionConfig::default(),
            &"a".into(),
            builder(),
            vec![(logs[0].clone(), 30.0), (logs[1].clone(), 40.0)],
        )
        .unwrap();
        let plain = train(&mut env, &cfg, mix_seed(9, 0)).unwrap();
        assert_eq!(massive.networks[0], plain.network);
        assert_eq!(massive.logs[0], plain.log);
    }

    #[test]
    fn disjoint_agents_with_pure_competition_match_isolated_runs() {
        let ads = [ad("a", "k1"), ad("b", "k2")];
        let logs = logs(&ads);
        let cfg = small_trainer();
        let budgets = [vec![30.0, 25.0], vec![35.0, 20.0]];
        let days = training_days(&logs, &budgets);
        let roster = vec!["a".into(), "b".into()];
        let pool =
            AgentPool::new(AuctionConfig::default(), roster, vec![builder(), builder()], vec![], days, &cfg, 0.0, 3).unwrap();
        let massive = train_massive(pool, cfg.episodes).unwrap();
        for (j, id) in ["a", "b"].iter().enumerate() {
            let own: Vec<_> = logs.iter().zip(&budgets).map(|(l, b)| (l.clone(), b[j])).collect();
            let mut env = RmdpEnv::single(AuctionConfig::default(), &(*id).into(), builder(), own).unwrap();
            let plain = train(&mut env, &cfg, mix_seed(3, j as u64)).unwrap();
            assert_eq!(massive.networks[j], plain.network, "agent {id}");
        }
    }

    #[test]
    fn rerun_is_identical() {
        let ads = [ad("a", "k1"), ad("b", "k1"), ad("c", "k1")];
        let logs = logs(&ads);
        let cfg = small_trainer();
        let run = || {
            let days = training_days(&logs, &[vec![30.0; 3], vec![30.0; 3]]);
            let roster = vec!["a".into(), "b".into(), "c".into()];
            let pool =
                AgentPool::new(AuctionConfig::default(), roster, vec![builder(); 3], vec![], days, &cfg, 0.5, 11).unwrap();
            train_massive(pool, cfg.episodes).unwrap()
        };
        let (x, y) = (run(), run());
        assert_eq!(x.networks, y.networks);
        assert_eq!(x.global, y.global);
        let mut buf = Vec::new();
        write_global_log(&x.global, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * cfg.episodes);
    }
}
