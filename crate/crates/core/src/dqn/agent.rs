use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{QNetwork, RmsProp, DEFAULT_LAYER_SIZES};
use super::replay::{ReplayMemory, Transition};
use crate::mdp::{MdpState, FEATURE_DIM};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub batch_size: usize,
    /// Gradient steps between target-network refreshes.
    pub target_sync: u64,
    pub memory_capacity: usize,
    pub episodes: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the nominal step budget over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    pub layer_sizes: Vec<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            learning_rate: 1e-4,
            rms_decay: 0.95,
            rms_epsilon: 1e-6,
            batch_size: 300,
            target_sync: 1000,
            memory_capacity: 100_000,
            episodes: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.0,
            epsilon_decay_fraction: 0.8,
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.rms_decay) || !(self.rms_epsilon > 0.0) {
            return bad("RMSProp decay must lie in [0, 1) and epsilon be positive");
        }
        if self.batch_size == 0 || self.batch_size > self.memory_capacity {
            return bad("batch size must be in 1..=memory capacity");
        }
        if self.target_sync == 0 {
            return bad("target sync period must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || self.epsilon_end > self.epsilon_start
        {
            return bad("epsilon schedule must decrease within [0, 1]");
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return bad("epsilon decay fraction must be in (0, 1]");
        }
        if self.layer_sizes.len() < 2 || self.layer_sizes[0] != FEATURE_DIM || self.layer_sizes.contains(&0) {
            return bad("layer sizes must start with the state width and have positive entries");
        }
        Ok(())
    }

    /// ε at nominal step `position` out of `total`.
    pub fn epsilon_at(&self, position: usize, total: usize) -> f64 {
        let span = self.epsilon_decay_fraction * total as f64;
        let frac = if span <= 0.0 { 1.0 } else { (position as f64 / span).min(1.0) };
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action(net: &QNetwork, state: &MdpState) -> usize {
    argmax(&net.forward(&state.g))
}

pub fn select_action<R: Rng + ?Sized>(net: &QNetwork, state: &MdpState, epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..net.action_count())
    } else {
        greedy_action(net, state)
    }
}

/// `y = r` for terminal transitions, else `r + γ · max_a Q_target(s', a)`.
pub fn compute_targets(batch: &[&Transition], target: &QNetwork, gamma: f64) -> Vec<f64> {
    let live: Vec<&MdpState> = batch.iter().filter_map(|t| t.next.as_ref()).collect();
    let mut next_max = Vec::with_capacity(live.len());
    if !live.is_empty() && gamma != 0.0 {
        let q = target.forward_batch(stack(live.iter().map(|s| &s.g)).view());
        next_max.extend(q.rows().into_iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
    }
    let mut next_max = next_max.into_iter();
    batch
        .iter()
        .map(|t| match t.next {
            Some(_) if gamma != 0.0 => t.reward + gamma * next_max.next().expect("one max per live transition"),
            _ => t.reward,
        })
        .collect()
}

fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a [f64; FEATURE_DIM]>) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((n, FEATURE_DIM), flat).expect("rows of state width")
}

/// One gradient step on `batch`; returns the loss before the update.
pub fn train_step(net: &mut QNetwork, opt: &mut RmsProp, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let x = stack(batch.iter().map(|t| &t.state.g));
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grads) = net.loss_and_gradient(x.view(), &actions, targets);
    if !loss.is_finite() {
        return Err(Error::Diverged(format!("loss became {loss}")));
    }
    opt.apply(net, &grads);
    if !net.is_finite() {
        return Err(Error::Diverged("network weights became non-finite".into()));
    }
    Ok(loss)
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    /// `None` at the end of the episode or when the budget went negative.
    pub next: Option<MdpState>,
    /// PUR_AMT gained in the step.
    pub reward: f64,
    /// Divisor applied to the reward before it enters the Q targets.
    pub reward_scale: f64,
    pub cost: f64,
    pub budget_left: f64,
}

impl EnvStep {
    pub fn overspent(&self) -> bool {
        self.budget_left < 0.0
    }
}

/// An episodic environment; each episode is one day.
pub trait Environment {
    /// Nominal decisions per episode.
    fn horizon(&self) -> usize;

    fn reset(&mut self, episode: usize) -> Result<MdpState>;

    fn step(&mut self, action: usize) -> Result<EnvStep>;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchRecord {
    pub batch: u64,
    pub loss: f64,
    pub episode: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub pur_amt: f64,
    pub cost: f64,
    pub steps: usize,
    /// Episode ended early because a step overspent the budget.
    pub overspent: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub batches: Vec<BatchRecord>,
    pub episodes: Vec<EpisodeRecord>,
    /// ε used for every action taken, in order.
    pub epsilons: Vec<f64>,
    /// Gradient-step counts at which the target network was refreshed.
    pub target_syncs: Vec<u64>,
}

pub const TRAINING_LOG_HEADER: [&str; 4] = ["batch", "loss", "episode", "pur_amt"];

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(TRAINING_LOG_HEADER)?;
        for b in &self.batches {
            let pur = self.episodes.iter().find(|e| e.episode == b.episode).map_or(f64::NAN, |e| e.pur_amt);
            w.write_record([b.batch.to_string(), b.loss.to_string(), b.episode.to_string(), pur.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Train, episode and target networks with their replay memory and optimiser.
pub struct DqnAgent {
    config: TrainerConfig,
    train: QNetwork,
    episode: QNetwork,
    target: QNetwork,
    opt: RmsProp,
    memory: ReplayMemory,
    rng: ChaCha8Rng,
    horizon: usize,
    position: usize,
    learn_steps: u64,
    pub log: TrainingLog,
}

impl DqnAgent {
    pub fn new(config: TrainerConfig, horizon: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = QNetwork::new(&config.layer_sizes, &mut rng)?;
        let opt = RmsProp::new(&train, config.learning_rate, config.rms_decay, config.rms_epsilon);
        Ok(Self {
            memory: ReplayMemory::new(config.memory_capacity),
            episode: train.clone(),
            target: train.clone(),
            train,
            opt,
            rng,
            horizon: horizon.max(1),
            position: 0,
            learn_steps: 0,
            log: TrainingLog::default(),
            config,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn train_net(&self) -> &QNetwork {
        &self.train
    }

    pub fn episode_net(&self) -> &QNetwork {
        &self.episode
    }

    pub fn target_net(&self) -> &QNetwork {
        &self.target
    }

    pub fn optimizer(&self) -> &RmsProp {
        &self.opt
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn learn_steps(&self) -> u64 {
        self.learn_steps
    }

    fn total_steps(&self) -> usize {
        self.config.episodes * self.horizon
    }

    pub fn begin_episode(&mut self, episode: usize) {
        self.position = episode * self.horizon;
    }

    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.position, self.total_steps())
    }

    /// ε-greedy action from the episode network.
    pub fn act(&mut self, state: &MdpState) -> usize {
        let eps = self.epsilon();
        self.log.epsilons.push(eps);
        self.position += 1;
        select_action(&self.episode, state, eps, &mut self.rng)
    }

    pub fn absorb(&mut self, t: Transition) {
        self.memory.push(t);
    }

    /// Sample a batch and take one gradient step; `None` while memory is empty.
    pub fn learn(&mut self, episode: usize) -> Result<Option<f64>> {
        if self.memory.is_empty() {
            return Ok(None);
        }
        let batch = self.memory.sample(self.config.batch_size, &mut self.rng);
        let targets = compute_targets(&batch, &self.target, self.config.gamma);
        let loss = train_step(&mut self.train, &mut self.opt, &batch, &targets)?;
        self.learn_steps += 1;
        self.log.batches.push(BatchRecord { batch: self.learn_steps, loss, episode });
        if self.learn_steps.is_multiple_of(self.config.target_sync) {
            self.target.copy_from(&self.train);
            self.log.target_syncs.push(self.learn_steps);
        }
        Ok(Some(loss))
    }

    pub fn end_episode(&mut self, record: EpisodeRecord) {
        self.episode.copy_from(&self.train);
        self.log.episodes.push(record);
    }

    pub fn into_parts(self) -> (QNetwork, RmsProp, TrainingLog) {
        (self.train, self.opt, self.log)
    }
}

pub struct TrainOutput {
    pub network: QNetwork,
    pub optimizer: RmsProp,
    pub log: TrainingLog,
}

/// Deep Q-learning over `config.episodes` episodes of `env`.
///
/// A step that leaves the budget negative is not stored and ends the episode.
pub fn train<E: Environment + ?Sized>(env: &mut E, config: &TrainerConfig, seed: u64) -> Result<TrainOutput> {
    let mut agent = DqnAgent::new(config.clone(), env.horizon(), seed)?;
    for e in 0..config.episodes {
        agent.begin_episode(e);
        let mut state = env.reset(e)?;
        let mut record = EpisodeRecord { episode: e, pur_amt: 0.0, cost: 0.0, steps: 0, overspent: false };
        loop {
            let action = agent.act(&state);
            let step = env.step(action)?;
            record.pur_amt += step.reward;
            record.cost += step.cost;
            record.steps += 1;
            if step.overspent() {
                record.overspent = true;
                break;
            }
            let next = step.next.clone();
            agent.absorb(Transition { state, action, reward: step.reward / step.reward_scale, next: step.next });
            agent.learn(e)?;
            match next {
                Some(n) => state = n,
                None => break,
            }
        }
        agent.end_episode(record);
    }
    let (network, optimizer, log) = agent.into_parts();
    Ok(TrainOutput { network, optimizer, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: f64) -> MdpState {
        MdpState::new(1.0, 1, [v; FEATURE_DIM]).unwrap()
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 100]), 0);
    }

    #[test]
    fn target_examples() {
        let net = QNetwork::zeros(&[FEATURE_DIM, 2, 3]).unwrap();
        let terminal = Transition { state: state(0.0), action: 0, reward: 5.0, next: None };
        assert_eq!(compute_targets(&[&terminal], &net, 1.0), vec![5.0]);
        // constant net: every output equals the output bias
        let mut layers = net.layers().to_vec();
        layers[1].bias.fill(3.0);
        let net3 = QNetwork::from_layers(layers).unwrap();
        let live = Transition { state: state(0.0), action: 0, reward: 2.0, next: Some(state(0.5)) };
        assert_eq!(compute_targets(&[&live], &net3, 1.0), vec![5.0]);
        assert_eq!(compute_targets(&[&live, &terminal], &net3, 0.0), vec![2.0, 5.0]);
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        let c = TrainerConfig { episodes: 10, ..TrainerConfig::default() };
        assert_eq!(c.epsilon_at(0, 240), 1.0);
        assert!((c.epsilon_at(96, 240) - 0.5).abs() < 1e-12);
        assert_eq!(c.epsilon_at(192, 240), 0.0);
        assert_eq!(c.epsilon_at(239, 240), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        assert!(TrainerConfig { batch_size: 10, memory_capacity: 5, ..Default::default() }.validate().is_err());
        assert!(TrainerConfig { target_sync: 0, ..Default::default() }.validate().is_err());
        assert!(TrainerConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainerConfig { layer_sizes: vec![14, 100], ..Default::default() }.validate().is_err());
    }
}
