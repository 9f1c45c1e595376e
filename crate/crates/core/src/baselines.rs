//! Comparison schemes: uniformly random allocation, centralised exhaustive
//! search over V2V sum rate, all V2V links off, and a single shared DQN whose
//! agents take turns.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    compute_capacity, compute_sinr_v2v, delivery_success, evaluate_links, Action, DeliveryTally,
    EnvStreams, Environment, LinkDecision, RewardParams, SimConfig, Transmission,
};
use crate::error::{Error, Result};
use crate::evaluation::JointPolicy;
use crate::marl::{argmax, epsilon_schedule, training_sim, Agent, EpisodeLog, TrainConfig};
use crate::nn::{Experience, QNetwork};
use crate::seed::{SeedHierarchy, SimRng};

/// Default bound on the joint action space searched by [`MaxV2vPolicy`].
pub const DEFAULT_SEARCH_CAP: u128 = 10_000_000;

/// Every allocation scheme the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Marl,
    Sarl,
    Random,
    #[serde(rename = "maxv2v")]
    MaxV2v,
    #[serde(rename = "nov2v")]
    NoV2v,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Marl,
        Scheme::Sarl,
        Scheme::Random,
        Scheme::MaxV2v,
        Scheme::NoV2v,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Marl => "marl",
            Scheme::Sarl => "sarl",
            Scheme::Random => "random",
            Scheme::MaxV2v => "maxv2v",
            Scheme::NoV2v => "nov2v",
        }
    }

    pub fn needs_training(self) -> bool {
        matches!(self, Scheme::Marl | Scheme::Sarl)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("scheme", format!("unknown scheme '{s}'")))
    }
}

/// One uniform draw from `[0, action_count)` per link.
pub fn random_actions<R: Rng + ?Sized>(
    k_links: usize,
    action_count: usize,
    rng: &mut R,
) -> Vec<usize> {
    (0..k_links)
        .map(|_| rng.random_range(0..action_count))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: SimRng,
}

impl RandomPolicy {
    pub fn new(rng: SimRng) -> Self {
        Self { rng }
    }
}

impl JointPolicy for RandomPolicy {
    fn decide(&mut self, env: &Environment) -> Result<Vec<LinkDecision>> {
        let cfg = env.config();
        let levels = cfg.power_levels();
        Ok(
            random_actions(cfg.k_links, cfg.action_count(), &mut self.rng)
                .into_iter()
                .map(|a| LinkDecision::Transmit(Action::from_flat(a, levels)))
                .collect(),
        )
    }
}

/// V2I capacities with every V2V transmitter off.
pub fn no_v2v_upper_bound(env: &Environment) -> Vec<f64> {
    env.no_v2v_capacities()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoV2vPolicy;

impl JointPolicy for NoV2vPolicy {
    fn decide(&mut self, env: &Environment) -> Result<Vec<LinkDecision>> {
        Ok(vec![LinkDecision::Silent; env.config().k_links])
    }
}

/// Sum of V2V rates that `decisions` would achieve on the current draw.
pub fn v2v_sum_rate(env: &Environment, decisions: &[LinkDecision]) -> f64 {
    let tx = env.transmissions(decisions);
    evaluate_links(env.gains(), env.radio(), &tx)
        .v2v_rate
        .iter()
        .sum()
}

/// Size of the joint action space, `(actions per link)^links`, if it is at most `cap`.
pub fn joint_space_size(action_count: usize, k_links: usize, cap: u128) -> Result<u128> {
    let size = (action_count as u128)
        .checked_pow(k_links as u32)
        .unwrap_or(u128::MAX);
    if size > cap {
        return Err(Error::Capacity { size, cap });
    }
    Ok(size)
}

/// Joint action maximising the V2V sum rate on the current draw.
///
/// Links that already delivered stay silent and are not searched. Joint
/// indices are ordered lexicographically by link; the lowest index wins ties.
pub fn max_v2v_exhaustive(env: &Environment, cap: u128) -> Result<Vec<LinkDecision>> {
    let cfg = env.config();
    let (k_links, levels, n_actions) = (cfg.k_links, cfg.power_levels(), cfg.action_count());
    joint_space_size(n_actions, k_links, cap)?;
    let radio = env.radio();
    let gains = env.gains();
    let active: Vec<usize> = (0..k_links)
        .filter(|&k| !env.state().delivered[k])
        .collect();
    let mut decisions = vec![LinkDecision::Silent; k_links];
    if active.is_empty() {
        return Ok(decisions);
    }
    let total = (n_actions as u128).pow(active.len() as u32) as u64;
    let mut tx: Vec<Option<Transmission>> = vec![None; k_links];
    let mut digits = vec![0usize; active.len()];
    let mut best = (f64::NEG_INFINITY, 0u64);
    for index in 0..total {
        let mut rest = index;
        for slot in (0..active.len()).rev() {
            digits[slot] = (rest % n_actions as u64) as usize;
            rest /= n_actions as u64;
        }
        for (slot, &k) in active.iter().enumerate() {
            let a = Action::from_flat(digits[slot], levels);
            tx[k] = Some(Transmission {
                subband: a.subband,
                power_mw: radio.v2v_power_mw[a.power_idx],
            });
        }
        let mut sum = 0.0;
        for k in 0..k_links {
            sum += compute_capacity(compute_sinr_v2v(gains, radio, &tx, k), radio.subband_hz);
        }
        if sum > best.0 {
            best = (sum, index);
        }
    }
    let mut rest = best.1;
    for slot in (0..active.len()).rev() {
        let flat = (rest % n_actions as u64) as usize;
        rest /= n_actions as u64;
        decisions[active[slot]] = LinkDecision::Transmit(Action::from_flat(flat, levels));
    }
    Ok(decisions)
}

#[derive(Debug, Clone, Copy)]
pub struct MaxV2vPolicy {
    pub cap: u128,
}

impl MaxV2vPolicy {
    /// Fails up front when the joint space of `sim` exceeds `cap`.
    pub fn new(sim: &SimConfig, cap: u128) -> Result<Self> {
        joint_space_size(sim.action_count(), sim.k_links, cap)?;
        Ok(Self { cap })
    }
}

impl JointPolicy for MaxV2vPolicy {
    fn decide(&mut self, env: &Environment) -> Result<Vec<LinkDecision>> {
        max_v2v_exhaustive(env, self.cap)
    }
}

/// One shared network; at step `t` only link `t mod K` revises its choice.
#[derive(Debug, Clone)]
pub struct SarlPolicy {
    pub network: QNetwork,
    current: Vec<usize>,
    step: usize,
}

impl SarlPolicy {
    pub fn new(network: QNetwork) -> Self {
        Self {
            network,
            current: Vec::new(),
            step: 0,
        }
    }

    fn greedy(&self, env: &Environment, k: usize) -> Result<usize> {
        let q = self.network.forward(&env.observe(k, None))?;
        if q.len() != env.config().action_count() {
            return Err(Error::usage(
                "network output does not match the action space",
            ));
        }
        Ok(argmax(&q))
    }
}

impl JointPolicy for SarlPolicy {
    fn begin_episode(&mut self, env: &Environment) -> Result<()> {
        self.current = (0..env.config().k_links)
            .map(|k| self.greedy(env, k))
            .collect::<Result<_>>()?;
        self.step = 0;
        Ok(())
    }

    fn decide(&mut self, env: &Environment) -> Result<Vec<LinkDecision>> {
        let k_links = env.config().k_links;
        if self.current.len() != k_links {
            self.begin_episode(env)?;
        }
        let j = self.step % k_links;
        self.current[j] = self.greedy(env, j)?;
        self.step += 1;
        let levels = env.config().power_levels();
        Ok(self
            .current
            .iter()
            .map(|&a| LinkDecision::Transmit(Action::from_flat(a, levels)))
            .collect())
    }
}

pub struct SarlOutput {
    pub agent: Agent,
    pub log: Vec<EpisodeLog>,
}

/// Trains the shared single-agent network.
///
/// Mirrors the multi-agent loop except that observations carry no
/// fingerprint, one network and memory serve every link, and each step only
/// the revising link's transition is stored. Initial choices at episode
/// start are epsilon-greedy for every link.
pub fn sarl_train(
    sim: &SimConfig,
    cfg: &TrainConfig,
    reward: &RewardParams,
    seed: u64,
) -> Result<SarlOutput> {
    sarl_train_with_observer(sim, cfg, reward, seed, |_, _| {})
}

/// [`sarl_train`], calling `observer(episode, joint_flat_actions)` after each step.
pub fn sarl_train_with_observer<F>(
    sim: &SimConfig,
    cfg: &TrainConfig,
    reward: &RewardParams,
    seed: u64,
    mut observer: F,
) -> Result<SarlOutput>
where
    F: FnMut(usize, &[usize]),
{
    cfg.validate()?;
    reward.validate()?;
    let sim = training_sim(sim, cfg);
    sim.validate()?;
    let seeds = SeedHierarchy::new(seed);
    let mut env = Environment::new(&sim, EnvStreams::training(&seeds))?;
    let k_links = sim.k_links;
    let levels = sim.power_levels();
    let dims = cfg.network_dims(sim.local_observation_len(), sim.action_count());
    let mut agent = Agent::new(&dims, cfg, &seeds, 0)?;

    let mut log = Vec::with_capacity(cfg.total_episodes);
    let mut tally = DeliveryTally::default();
    for episode in 0..cfg.total_episodes {
        let refresh = episode > 0 && episode % cfg.large_scale_refresh_period == 0;
        env.reset(refresh)?;
        let epsilon = epsilon_schedule(episode, cfg);
        let mut current = Vec::with_capacity(k_links);
        for k in 0..k_links {
            current.push(agent.act(&env.observe(k, None), epsilon)?);
        }
        let mut episode_return = 0.0;
        let mut v2i_sum = 0.0;
        let mut t = 0usize;
        loop {
            let j = t % k_links;
            let obs = env.observe(j, None);
            let a = agent.act(&obs, epsilon)?;
            current[j] = a;
            let actions: Vec<Action> = current
                .iter()
                .map(|&f| Action::from_flat(f, levels))
                .collect();
            let outcome = env.step(&actions, reward)?;
            observer(episode, &current);
            episode_return += outcome.reward;
            v2i_sum += outcome.v2i_sum_capacity();
            agent.memory.push(Experience {
                obs,
                action: a,
                reward: outcome.reward,
                next_obs: env.observe(j, None),
                terminal: outcome.done,
            });
            t += 1;
            if outcome.done {
                break;
            }
        }
        tally.record(&delivery_success(&env.state().remaining_bits));
        let loss = agent.learn(cfg)?;
        if (episode + 1) % cfg.target_sync_period == 0 {
            agent.sync_target();
        }
        log.push(EpisodeLog {
            episode,
            epsilon,
            episode_return,
            mean_v2i_capacity: v2i_sum / t as f64,
            delivery_rate_so_far: tally.rate(),
            mean_loss: loss,
        });
    }
    Ok(SarlOutput { agent, log })
}
