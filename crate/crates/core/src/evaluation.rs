//! Running a fixed joint policy over evaluation episodes and summarising the
//! two figures of merit: V2I sum capacity and V2V payload delivery.
//!
//! Every scheme evaluated with the same seed sees the same vehicle drop,
//! mobility and fading draws, so results can be compared step by step.

use serde::Serialize;

use crate::env::{
    delivery_success, Action, DeliveryTally, EnvStreams, Environment, LinkDecision, RewardParams,
    SimConfig,
};
use crate::error::{Error, Result};
use crate::marl::{argmax, TrainedAgents};
use crate::seed::SeedHierarchy;

/// A rule mapping the current environment to one decision per V2V link.
pub trait JointPolicy {
    /// Called after every reset, before the first decision.
    fn begin_episode(&mut self, _env: &Environment) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, env: &Environment) -> Result<Vec<LinkDecision>>;
}

/// Greedy execution of trained per-link networks on local observations.
#[derive(Debug, Clone)]
pub struct MarlPolicy {
    pub agents: TrainedAgents,
}

impl JointPolicy for MarlPolicy {
    fn decide(&mut self, env: &Environment) -> Result<Vec<LinkDecision>> {
        let k_links = env.config().k_links;
        if self.agents.networks.len() != k_links {
            return Err(Error::usage(format!(
                "{} trained agents for {k_links} V2V links",
                self.agents.networks.len()
            )));
        }
        let levels = env.config().power_levels();
        let fp = Some(self.agents.fingerprint);
        self.agents
            .networks
            .iter()
            .enumerate()
            .map(|(k, net)| {
                let q = net.forward(&env.observe(k, fp))?;
                if q.len() != env.config().action_count() {
                    return Err(Error::usage(
                        "network output does not match the action space",
                    ));
                }
                Ok(LinkDecision::Transmit(Action::from_flat(
                    argmax(&q),
                    levels,
                )))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub payload_bytes: u64,
    pub record_trace: bool,
}

/// One `(step, link)` row of an evaluation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: usize,
    pub step: usize,
    pub link: usize,
    /// `None` when the link did not transmit.
    pub subband: Option<usize>,
    pub power_dbm: Option<f64>,
    pub v2v_rate_bps: f64,
    pub remaining_bits: f64,
    pub v2i_sum_capacity_bps: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEpisode {
    /// Mean over steps of the V2I sum capacity (bits/s).
    pub mean_v2i_capacity: f64,
    pub success: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub episodes: Vec<EvalEpisode>,
    /// V2I sum capacity of every step, in order.
    pub step_v2i: Vec<f64>,
    /// V2I sum capacity with all V2V links off, on the same draws.
    pub step_v2i_bound: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

impl EvalRun {
    /// Steps where the policy beat the interference-free bound.
    pub fn bound_violations(&self) -> usize {
        self.step_v2i
            .iter()
            .zip(&self.step_v2i_bound)
            .filter(|(v, b)| v > b)
            .count()
    }

    pub fn delivery(&self) -> DeliveryTally {
        let mut tally = DeliveryTally::default();
        for e in &self.episodes {
            tally.record(&e.success);
        }
        tally
    }

    pub fn metrics(&self, scheme: &str, payload_bytes: u64) -> Metrics {
        let means: Vec<f64> = self.episodes.iter().map(|e| e.mean_v2i_capacity).collect();
        let tally = self.delivery();
        Metrics {
            scheme: scheme.to_string(),
            payload_bytes,
            episodes: self.episodes.len(),
            v2i_sum_capacity_bps_mean: mean(&means),
            v2i_ci95: normal_ci95(&means),
            delivery_probability: tally.rate(),
            delivery_ci95: wilson_ci95(tally.successes, tally.trials),
        }
    }
}

/// Aggregate results of one scheme at one payload size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub scheme: String,
    pub payload_bytes: u64,
    pub episodes: usize,
    pub v2i_sum_capacity_bps_mean: f64,
    pub v2i_ci95: f64,
    pub delivery_probability: f64,
    pub delivery_ci95: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Half-width of the normal-approximation 95% interval of the mean.
pub fn normal_ci95(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    Z95 * (var / n as f64).sqrt()
}

/// Half-width of the Wilson score 95% interval for `successes / trials`.
pub fn wilson_ci95(successes: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    Z95 / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()
}

/// Runs `policy` for `opts.episodes` episodes on the evaluation streams of `seed`.
///
/// Large-scale fading is refreshed before every episode after the first.
pub fn evaluate_policy(
    policy: &mut dyn JointPolicy,
    sim: &SimConfig,
    reward: &RewardParams,
    opts: EvalOptions,
    seed: u64,
) -> Result<EvalRun> {
    evaluate_policy_with(policy, sim, reward, opts, seed, |_, _| Ok(()))
}

/// [`evaluate_policy`] with a hook run on the environment before each decision.
pub fn evaluate_policy_with<F>(
    policy: &mut dyn JointPolicy,
    sim: &SimConfig,
    reward: &RewardParams,
    opts: EvalOptions,
    seed: u64,
    mut before_step: F,
) -> Result<EvalRun>
where
    F: FnMut(&Environment, usize) -> Result<()>,
{
    if opts.episodes == 0 {
        return Err(Error::config("eval_episodes", "must be positive"));
    }
    let sim = SimConfig {
        payload_bytes: opts.payload_bytes,
        ..sim.clone()
    };
    let seeds = SeedHierarchy::new(seed);
    let mut env = Environment::new(&sim, EnvStreams::evaluation(&seeds))?;
    let power_dbm = sim.v2v_power_levels_dbm.clone();
    let mut run = EvalRun {
        episodes: Vec::with_capacity(opts.episodes),
        step_v2i: Vec::new(),
        step_v2i_bound: Vec::new(),
        trace: Vec::new(),
    };
    for episode in 0..opts.episodes {
        env.reset(episode > 0)?;
        policy.begin_episode(&env)?;
        let mut v2i_total = 0.0;
        let mut steps = 0usize;
        loop {
            before_step(&env, episode)?;
            let bound: f64 = env.no_v2v_capacities().iter().sum();
            let decisions = policy.decide(&env)?;
            let tx = env.transmissions(&decisions);
            let outcome = env.step_decisions(&decisions, reward)?;
            let v2i = outcome.v2i_sum_capacity();
            run.step_v2i.push(v2i);
            run.step_v2i_bound.push(bound);
            v2i_total += v2i;
            if opts.record_trace {
                for (link, t) in tx.iter().enumerate() {
                    let (subband, power) = match (t, decisions[link]) {
                        (Some(t), LinkDecision::Transmit(a)) => {
                            (Some(t.subband), Some(power_dbm[a.power_idx]))
                        }
                        _ => (None, None),
                    };
                    run.trace.push(TraceRow {
                        episode,
                        step: steps,
                        link,
                        subband,
                        power_dbm: power,
                        v2v_rate_bps: outcome.v2v_rates[link],
                        remaining_bits: outcome.remaining_bits[link],
                        v2i_sum_capacity_bps: v2i,
                        reward: outcome.reward,
                    });
                }
            }
            steps += 1;
            if outcome.done {
                break;
            }
        }
        run.episodes.push(EvalEpisode {
            mean_v2i_capacity: v2i_total / steps as f64,
            success: delivery_success(&env.state().remaining_bits),
        });
    }
    Ok(run)
}

/// Greedy evaluation of trained agents, summarised.
pub fn evaluate(
    agents: &TrainedAgents,
    sim: &SimConfig,
    reward: &RewardParams,
    episodes: usize,
    payload_bytes: u64,
    seed: u64,
) -> Result<Metrics> {
    let mut policy = MarlPolicy {
        agents: agents.clone(),
    };
    let opts = EvalOptions {
        episodes,
        payload_bytes,
        record_trace: false,
    };
    Ok(evaluate_policy(&mut policy, sim, reward, opts, seed)?.metrics("marl", payload_bytes))
}
