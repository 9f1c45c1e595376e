//! Multi-agent deep Q-learning: one DQN per V2V link, trained centrally on
//! the shared reward and executed from local observations.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    delivery_success, evaluate_links, Action, DeliveryTally, EnvStreams, Environment, Fingerprint,
    RewardParams, SimConfig, StepOutcome, Transmission, PAYLOAD_UNIT_BYTES,
};
use crate::error::{Error, Result};
use crate::nn::{
    checkpoint, Experience, QNetwork, ReplayMemory, RmsProp, RmsPropConfig, TrainingSample,
};
use crate::seed::{purpose, SeedHierarchy, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_episodes: usize,
    pub anneal_episodes: usize,
    pub epsilon_final: f64,
    pub gamma: f64,
    pub target_sync_period: usize,
    pub large_scale_refresh_period: usize,
    pub batch_size: usize,
    pub minibatches_per_episode: usize,
    pub replay_capacity: usize,
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub payload_bytes: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_episodes: 3000,
            anneal_episodes: 2400,
            epsilon_final: 0.02,
            gamma: 1.0,
            target_sync_period: 4,
            large_scale_refresh_period: 20,
            batch_size: 32,
            minibatches_per_episode: 10,
            replay_capacity: 100_000,
            hidden_layers: vec![500, 250, 120],
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            payload_bytes: 2 * PAYLOAD_UNIT_BYTES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_episodes", self.total_episodes),
            ("target_sync_period", self.target_sync_period),
            (
                "large_scale_refresh_period",
                self.large_scale_refresh_period,
            ),
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.anneal_episodes > self.total_episodes {
            return Err(Error::config(
                "anneal_episodes",
                format!(
                    "{} exceeds total_episodes {}",
                    self.anneal_episodes, self.total_episodes
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon_final) {
            return Err(Error::config("epsilon_final", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 1]"));
        }
        if self.batch_size > self.replay_capacity {
            return Err(Error::config("batch_size", "exceeds replay_capacity"));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::config(
                "hidden_layers",
                "layer sizes must be positive",
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "learning_rate",
                "must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err(Error::config("rmsprop_decay", "must lie in [0, 1)"));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::config("rmsprop_epsilon", "must be positive"));
        }
        if self.payload_bytes == 0 {
            return Err(Error::config("payload_bytes", "must be positive"));
        }
        Ok(())
    }

    pub fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
    }

    pub fn network_dims(&self, input: usize, actions: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(actions);
        dims
    }

    /// Fingerprint taken from the very last training step.
    pub fn final_fingerprint(&self) -> Fingerprint {
        let last = self.total_episodes - 1;
        Fingerprint::new(last, self.total_episodes, epsilon_schedule(last, self))
    }
}

/// Linear decay from 1 to `epsilon_final` over `anneal_episodes`, then flat.
pub fn epsilon_schedule(episode: usize, cfg: &TrainConfig) -> f64 {
    if episode >= cfg.anneal_episodes {
        return cfg.epsilon_final;
    }
    let progress = episode as f64 / cfg.anneal_episodes as f64;
    1.0 + (cfg.epsilon_final - 1.0) * progress
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice. Always consumes one uniform draw, plus one more
/// when exploring.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    debug_assert!(!q_values.is_empty());
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// `r + gamma * max_a Q_target(z', a)`, or just `r` for terminal samples.
pub fn td_targets(batch: &[&Experience], target: &QNetwork, gamma: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::usage("td_targets needs a non-empty batch"));
    }
    let open: Vec<usize> = (0..batch.len())
        .filter(|&i| !batch[i].terminal && gamma != 0.0)
        .collect();
    let mut targets: Vec<f64> = batch.iter().map(|e| e.reward).collect();
    if !open.is_empty() {
        let mut inputs = Vec::with_capacity(open.len() * target.input_dim());
        for &i in &open {
            inputs.extend_from_slice(&batch[i].next_obs);
        }
        let q = target.forward_batch(&inputs, open.len())?;
        let a = target.output_dim();
        for (row, &i) in open.iter().enumerate() {
            let next = &q[row * a..(row + 1) * a];
            targets[i] += gamma * next[argmax(next)];
        }
    }
    Ok(targets)
}

/// A learner: online and target networks, replay memory, optimizer state and
/// its private random streams.
#[derive(Debug, Clone)]
pub struct Agent {
    pub q: QNetwork,
    pub target: QNetwork,
    pub memory: ReplayMemory,
    pub optimizer: RmsProp,
    pub exploration: SimRng,
    pub replay_rng: SimRng,
}

impl Agent {
    pub fn new(
        dims: &[usize],
        cfg: &TrainConfig,
        seeds: &SeedHierarchy,
        index: u64,
    ) -> Result<Self> {
        let q = QNetwork::new(dims, &mut seeds.stream(purpose::INIT, index))?;
        Ok(Self {
            target: q.clone(),
            optimizer: RmsProp::new(&q, cfg.rmsprop()),
            q,
            memory: ReplayMemory::new(cfg.replay_capacity),
            exploration: seeds.stream(purpose::EXPLORATION, index),
            replay_rng: seeds.stream(purpose::REPLAY, index),
        })
    }

    pub fn act(&mut self, obs: &[f64], epsilon: f64) -> Result<usize> {
        let q = self.q.forward(obs)?;
        Ok(select_action(&q, epsilon, &mut self.exploration))
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.q);
    }

    /// Runs the per-episode mini-batch updates. Returns the mean loss, or
    /// `None` while the memory holds fewer than one batch.
    pub fn learn(&mut self, cfg: &TrainConfig) -> Result<Option<f64>> {
        if self.memory.len() < cfg.batch_size || cfg.minibatches_per_episode == 0 {
            return Ok(None);
        }
        let mut total = 0.0;
        for _ in 0..cfg.minibatches_per_episode {
            let batch = self.memory.sample(cfg.batch_size, &mut self.replay_rng)?;
            let targets = td_targets(&batch, &self.target, cfg.gamma)?;
            let samples: Vec<TrainingSample> = batch
                .iter()
                .zip(&targets)
                .map(|(e, &target)| TrainingSample {
                    obs: &e.obs,
                    action: e.action,
                    target,
                })
                .collect();
            let (grads, loss) = self.q.backward(&samples)?;
            self.optimizer.step(&mut self.q, &grads)?;
            total += loss / cfg.batch_size as f64;
        }
        Ok(Some(total / cfg.minibatches_per_episode as f64))
    }
}

/// Trained networks plus the fingerprint they were trained towards.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAgents {
    pub networks: Vec<QNetwork>,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Serialize, Deserialize)]
struct FingerprintFile {
    episode_fraction: f64,
    epsilon: f64,
    agents: usize,
}

impl TrainedAgents {
    /// Writes `agent_<k>.qnet` files and `fingerprint.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, net) in self.networks.iter().enumerate() {
            checkpoint::save(net, &dir.join(format!("agent_{k}.qnet")))?;
        }
        let meta = FingerprintFile {
            episode_fraction: self.fingerprint.episode_fraction,
            epsilon: self.fingerprint.epsilon,
            agents: self.networks.len(),
        };
        let path = dir.join("fingerprint.toml");
        let text = toml::to_string(&meta).map_err(|e| Error::usage(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("fingerprint.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: FingerprintFile = toml::from_str(&text).map_err(|e| Error::Checkpoint {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let networks = (0..meta.agents)
            .map(|k| checkpoint::load(&dir.join(format!("agent_{k}.qnet"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            networks,
            fingerprint: Fingerprint {
                episode_fraction: meta.episode_fraction,
                epsilon: meta.epsilon,
            },
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    /// Undiscounted sum of the shared reward over the episode.
    pub episode_return: f64,
    /// Mean over steps of the V2I sum capacity (bits/s).
    pub mean_v2i_capacity: f64,
    /// Fraction of V2V payloads delivered over all episodes so far.
    pub delivery_rate_so_far: f64,
    pub mean_loss: Option<f64>,
}

pub struct TrainOutput {
    pub agents: Vec<Agent>,
    pub log: Vec<EpisodeLog>,
    pub trained: TrainedAgents,
}

/// How the reward weights are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Share of the reward given to V2I capacity after normalisation.
    pub v2i_weight: f64,
    /// Share given to the V2V terms after normalisation.
    pub v2v_weight: f64,
    /// `beta` as a multiple of the largest per-link rate seen while calibrating.
    pub beta_factor: f64,
    pub calibration_steps: usize,
    /// Explicit raw weights; when all three are set calibration is skipped.
    pub lambda_c: Option<f64>,
    pub lambda_d: Option<f64>,
    pub beta: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            v2i_weight: 0.1,
            v2v_weight: 0.9,
            beta_factor: 1.5,
            calibration_steps: 1000,
            lambda_c: None,
            lambda_d: None,
            beta: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("v2i_weight", self.v2i_weight),
            ("v2v_weight", self.v2v_weight),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.beta_factor > 1.0 && self.beta_factor.is_finite()) {
            return Err(Error::config("beta_factor", "must exceed 1"));
        }
        if self.calibration_steps == 0 {
            return Err(Error::config("calibration_steps", "must be positive"));
        }
        match (self.lambda_c, self.lambda_d, self.beta) {
            (None, None, None) => Ok(()),
            (Some(lambda_c), Some(lambda_d), Some(beta)) => RewardParams {
                lambda_c,
                lambda_d,
                beta,
            }
            .validate(),
            _ => Err(Error::config(
                "lambda_c",
                "lambda_c, lambda_d and beta must be given together",
            )),
        }
    }

    pub fn resolve(&self, sim: &SimConfig, seed: u64) -> Result<RewardParams> {
        self.validate()?;
        if let (Some(lambda_c), Some(lambda_d), Some(beta)) =
            (self.lambda_c, self.lambda_d, self.beta)
        {
            return Ok(RewardParams {
                lambda_c,
                lambda_d,
                beta,
            });
        }
        calibrate_reward(sim, self, &SeedHierarchy::new(seed))
    }
}

/// Scales both reward terms by their means under uniformly random actions.
///
/// Rates are measured with every V2V link transmitting, on the training road
/// layout, with fading redrawn each step and large-scale fading refreshed
/// every episode length.
pub fn calibrate_reward(
    sim: &SimConfig,
    rc: &RewardConfig,
    seeds: &SeedHierarchy,
) -> Result<RewardParams> {
    let mut env = Environment::new(sim, EnvStreams::calibration(seeds))?;
    let mut rng = seeds.stream(purpose::CALIBRATION, 0);
    let (m, k) = (sim.m_links, sim.k_links);
    let levels = sim.power_levels();
    let mut v2i_total = 0.0;
    let mut v2v_total = 0.0;
    let mut v2v_max: f64 = 0.0;
    for step in 0..rc.calibration_steps {
        // Episode-0 geometry throughout; only fast fading changes.
        if step > 0 {
            env.reset(false)?;
        }
        let tx: Vec<Option<Transmission>> = (0..k)
            .map(|_| {
                let a = Action::from_flat(rng.random_range(0..m * levels), levels);
                Some(Transmission {
                    subband: a.subband,
                    power_mw: env.radio().v2v_power_mw[a.power_idx],
                })
            })
            .collect();
        let rates = evaluate_links(env.gains(), env.radio(), &tx);
        v2i_total += rates.v2i_capacity.iter().sum::<f64>();
        v2v_total += rates.v2v_rate.iter().sum::<f64>();
        v2v_max = rates.v2v_rate.iter().fold(v2v_max, |a, &b| a.max(b));
    }
    let n = rc.calibration_steps as f64;
    let params = RewardParams {
        lambda_c: rc.v2i_weight / (v2i_total / n),
        lambda_d: rc.v2v_weight / (v2v_total / n),
        beta: rc.beta_factor * v2v_max,
    };
    params.validate().map_err(|_| {
        Error::Domain(format!(
            "reward calibration produced degenerate weights {params:?}"
        ))
    })?;
    Ok(params)
}

/// The environment configuration used while training.
pub fn training_sim(sim: &SimConfig, cfg: &TrainConfig) -> SimConfig {
    SimConfig {
        payload_bytes: cfg.payload_bytes,
        ..sim.clone()
    }
}

/// Centralised training of one DQN per V2V link on the shared reward.
pub fn train(
    sim: &SimConfig,
    cfg: &TrainConfig,
    reward: &RewardParams,
    seed: u64,
) -> Result<TrainOutput> {
    train_with_observer(sim, cfg, reward, seed, |_, _| {})
}

/// [`train`], calling `observer(episode, outcome)` after every step.
pub fn train_with_observer<F>(
    sim: &SimConfig,
    cfg: &TrainConfig,
    reward: &RewardParams,
    seed: u64,
    mut observer: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, &StepOutcome),
{
    cfg.validate()?;
    reward.validate()?;
    let sim = training_sim(sim, cfg);
    sim.validate()?;
    let seeds = SeedHierarchy::new(seed);
    let mut env = Environment::new(&sim, EnvStreams::training(&seeds))?;
    let k_links = sim.k_links;
    let levels = sim.power_levels();
    let dims = cfg.network_dims(sim.observation_len(), sim.action_count());
    let mut agents = (0..k_links)
        .map(|k| Agent::new(&dims, cfg, &seeds, k as u64))
        .collect::<Result<Vec<_>>>()?;

    let mut log = Vec::with_capacity(cfg.total_episodes);
    let mut tally = DeliveryTally::default();
    for episode in 0..cfg.total_episodes {
        let refresh = episode > 0 && episode % cfg.large_scale_refresh_period == 0;
        env.reset(refresh)?;
        let epsilon = epsilon_schedule(episode, cfg);
        let fp = Some(Fingerprint::new(episode, cfg.total_episodes, epsilon));

        let mut obs: Vec<Vec<f64>> = (0..k_links).map(|k| env.observe(k, fp)).collect();
        let mut episode_return = 0.0;
        let mut v2i_sum = 0.0;
        let mut steps = 0usize;
        loop {
            let mut flat = Vec::with_capacity(k_links);
            for (agent, o) in agents.iter_mut().zip(&obs) {
                flat.push(agent.act(o, epsilon)?);
            }
            let actions: Vec<Action> = flat.iter().map(|&a| Action::from_flat(a, levels)).collect();
            let outcome = env.step(&actions, reward)?;
            observer(episode, &outcome);
            episode_return += outcome.reward;
            v2i_sum += outcome.v2i_sum_capacity();
            steps += 1;

            let next: Vec<Vec<f64>> = (0..k_links).map(|k| env.observe(k, fp)).collect();
            for (k, agent) in agents.iter_mut().enumerate() {
                agent.memory.push(Experience {
                    obs: std::mem::take(&mut obs[k]),
                    action: flat[k],
                    reward: outcome.reward,
                    next_obs: next[k].clone(),
                    terminal: outcome.done,
                });
            }
            obs = next;
            if outcome.done {
                break;
            }
        }
        tally.record(&delivery_success(&env.state().remaining_bits));

        let mut loss_sum = 0.0;
        let mut loss_count = 0;
        for agent in &mut agents {
            if let Some(l) = agent.learn(cfg)? {
                loss_sum += l;
                loss_count += 1;
            }
        }
        if (episode + 1) % cfg.target_sync_period == 0 {
            agents.iter_mut().for_each(Agent::sync_target);
        }
        log.push(EpisodeLog {
            episode,
            epsilon,
            episode_return,
            mean_v2i_capacity: v2i_sum / steps as f64,
            delivery_rate_so_far: tally.rate(),
            mean_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
        });
        if (episode + 1) % 100 == 0 {
            log::info!(
                "episode {} epsilon {:.3} return {:.2} delivery so far {:.3}",
                episode + 1,
                epsilon,
                episode_return,
                tally.rate()
            );
        }
    }
    let trained = TrainedAgents {
        networks: agents.iter().map(|a| a.q.clone()).collect(),
        fingerprint: cfg.final_fingerprint(),
    };
    Ok(TrainOutput {
        agents,
        log,
        trained,
    })
}
