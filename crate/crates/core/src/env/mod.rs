//! The episodic spectrum-sharing environment.
//!
//! One episode spans the V2V time budget. Every step each V2V link picks a
//! sub-band and a power level; the environment scores the joint choice,
//! drains payloads, and redraws small-scale fading for the next step.
//! Large-scale fading only changes on [`Environment::reset`] with refresh.

mod config;
pub mod radio;

use serde::{Deserialize, Serialize};

pub use config::{
    db_to_linear, dbm_to_mw, linear_to_db, SimConfig, PAYLOAD_UNIT_BYTES, ZERO_POWER_DBM,
};
pub use radio::{
    compute_capacity, compute_interference_v2v, compute_sinr_v2i, compute_sinr_v2v, evaluate_links,
    LinkRates, RadioParams, Transmission,
};

use crate::channel::{ChannelGains, FastFadingState, LargeScaleState};
use crate::error::{Error, Result};
use crate::seed::{purpose, SeedHierarchy, SimRng};
use crate::topology::TopologyState;

/// Scale applied to dB-valued observation entries.
pub const OBS_DB_SCALE: f64 = 120.0;

/// One agent's choice: a sub-band and an index into the power levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub subband: usize,
    pub power_idx: usize,
}

impl Action {
    pub fn new(subband: usize, power_idx: usize) -> Self {
        Self { subband, power_idx }
    }

    pub fn to_flat(self, power_levels: usize) -> usize {
        self.subband * power_levels + self.power_idx
    }

    pub fn from_flat(flat: usize, power_levels: usize) -> Self {
        Self {
            subband: flat / power_levels,
            power_idx: flat % power_levels,
        }
    }
}

/// What the environment is told to do with one V2V link in a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDecision {
    Transmit(Action),
    /// Transmitter switched off entirely.
    Silent,
}

/// Reward weights in raw units: `R = lambda_c * sum(C_v2i) + lambda_d * sum(L_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub lambda_c: f64,
    pub lambda_d: f64,
    /// Per-link reward once its payload is delivered (bits/s scale).
    pub beta: f64,
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_d", self.lambda_d),
            ("beta", self.beta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `(e, epsilon)` appended to observations during multi-agent training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fingerprint {
    /// Training episode index divided by the total number of episodes.
    pub episode_fraction: f64,
    pub epsilon: f64,
}

impl Fingerprint {
    pub fn new(episode: usize, total_episodes: usize, epsilon: f64) -> Self {
        Self {
            episode_fraction: episode as f64 / total_episodes.max(1) as f64,
            epsilon,
        }
    }
}

/// The full environment state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub large_scale: LargeScaleState,
    pub fast_fading: FastFadingState,
    /// Gains composed from the two fading components above.
    pub gains: ChannelGains,
    pub remaining_bits: Vec<f64>,
    pub remaining_ms: Vec<f64>,
    pub step_t: usize,
    pub delivered: Vec<bool>,
    /// Interference measured during the previous step, `[k * M + m]`.
    pub measured_interference: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// bits/s per V2I link.
    pub v2i_capacities: Vec<f64>,
    /// bits/s per V2V link actually achieved in this step.
    pub v2v_rates: Vec<f64>,
    /// The `L_k` terms entering the reward.
    pub v2v_reward_terms: Vec<f64>,
    pub delivered_bits: Vec<f64>,
    pub remaining_bits: Vec<f64>,
    /// `[k * M + m]` in mW.
    pub interference: Vec<f64>,
    pub all_delivered: bool,
    pub done: bool,
}

impl StepOutcome {
    pub fn v2i_sum_capacity(&self) -> f64 {
        self.v2i_capacities.iter().sum()
    }
}

/// Random streams that drive one environment instance.
#[derive(Debug, Clone)]
pub struct EnvStreams {
    pub topology: SimRng,
    pub mobility: SimRng,
    pub shadowing: SimRng,
    pub fading: SimRng,
}

impl EnvStreams {
    pub fn training(seeds: &SeedHierarchy) -> Self {
        Self {
            topology: seeds.stream(purpose::TOPOLOGY, 0),
            mobility: seeds.stream(purpose::MOBILITY, 0),
            shadowing: seeds.stream(purpose::SHADOWING, 0),
            fading: seeds.stream(purpose::FADING, 0),
        }
    }

    /// Same road layout as training, fresh mobility and fading.
    pub fn evaluation(seeds: &SeedHierarchy) -> Self {
        Self {
            topology: seeds.stream(purpose::TOPOLOGY, 0),
            mobility: seeds.stream(purpose::EVAL_MOBILITY, 0),
            shadowing: seeds.stream(purpose::EVAL_SHADOWING, 0),
            fading: seeds.stream(purpose::EVAL_FADING, 0),
        }
    }

    pub fn calibration(seeds: &SeedHierarchy) -> Self {
        Self {
            topology: seeds.stream(purpose::TOPOLOGY, 0),
            mobility: seeds.stream(purpose::CALIBRATION, 1),
            shadowing: seeds.stream(purpose::SHADOWING, 0),
            fading: seeds.stream(purpose::CALIBRATION, 2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    cfg: SimConfig,
    radio: RadioParams,
    topology: TopologyState,
    state: EnvState,
    streams: EnvStreams,
    payload_bits: f64,
}

impl Environment {
    /// Drops vehicles, draws initial shadowing and fading, and leaves the
    /// environment ready for its first step.
    pub fn new(cfg: &SimConfig, mut streams: EnvStreams) -> Result<Self> {
        cfg.validate()?;
        let topology = TopologyState::drop_vehicles(cfg, &mut streams.topology)?;
        let large_scale = LargeScaleState::initialize(cfg, &topology, &mut streams.shadowing)?;
        let fast_fading = FastFadingState::sample(cfg.m_links, cfg.k_links, &mut streams.fading);
        let gains = ChannelGains::compose(&large_scale, &fast_fading);
        let k = cfg.k_links;
        let mut env = Self {
            cfg: cfg.clone(),
            radio: RadioParams::from_config(cfg),
            topology,
            state: EnvState {
                large_scale,
                fast_fading,
                gains,
                remaining_bits: vec![0.0; k],
                remaining_ms: vec![0.0; k],
                step_t: 0,
                delivered: vec![false; k],
                measured_interference: Vec::new(),
                done: false,
            },
            streams,
            payload_bits: cfg.payload_bits(),
        };
        env.reset_payloads();
        Ok(env)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn radio(&self) -> &RadioParams {
        &self.radio
    }

    pub fn topology(&self) -> &TopologyState {
        &self.topology
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn gains(&self) -> &ChannelGains {
        &self.state.gains
    }

    pub fn payload_bits(&self) -> f64 {
        self.payload_bits
    }

    /// Changes the payload used from the next reset on.
    pub fn set_payload_bytes(&mut self, bytes: u64) -> Result<()> {
        if bytes == 0 {
            return Err(Error::config("payload_bytes", "must be positive"));
        }
        self.payload_bits = bytes as f64 * 8.0;
        Ok(())
    }

    /// Starts a new episode.
    ///
    /// With `refresh_large_scale`, vehicles advance by one large-scale update
    /// interval and path loss/shadowing are recomputed. Fast fading is always
    /// redrawn; payloads and time budgets are restored.
    pub fn reset(&mut self, refresh_large_scale: bool) -> Result<()> {
        if refresh_large_scale {
            let dt = self.cfg.large_scale_update_ms as f64 * 1e-3;
            let moved = self
                .topology
                .update_positions(dt, &mut self.streams.mobility)?;
            self.state.large_scale.refresh(
                &self.cfg,
                &self.topology,
                &moved,
                &mut self.streams.shadowing,
            )?;
            self.topology = moved;
        }
        self.redraw_fast_fading();
        self.reset_payloads();
        Ok(())
    }

    fn reset_payloads(&mut self) {
        let k = self.cfg.k_links;
        let m = self.cfg.m_links;
        self.state.remaining_bits = vec![self.payload_bits; k];
        self.state.remaining_ms = vec![self.cfg.time_budget_ms as f64; k];
        self.state.delivered = vec![false; k];
        self.state.step_t = 0;
        self.state.done = false;
        // Nothing has been measured yet: only the V2I transmitters are on air.
        let mut interference = Vec::with_capacity(k * m);
        for link in 0..k {
            for band in 0..m {
                interference.push(self.radio.v2i_power_mw * self.state.gains.v2i_v2v(band, link));
            }
        }
        self.state.measured_interference = interference;
    }

    fn redraw_fast_fading(&mut self) {
        self.state.fast_fading =
            FastFadingState::sample(self.cfg.m_links, self.cfg.k_links, &mut self.streams.fading);
        self.state.gains = ChannelGains::compose(&self.state.large_scale, &self.state.fast_fading);
    }

    /// Transmissions implied by `decisions`; delivered links stay silent.
    pub fn transmissions(&self, decisions: &[LinkDecision]) -> Vec<Option<Transmission>> {
        decisions
            .iter()
            .enumerate()
            .map(|(k, d)| match d {
                LinkDecision::Transmit(a) if !self.state.delivered[k] => Some(Transmission {
                    subband: a.subband,
                    power_mw: self.radio.v2v_power_mw[a.power_idx],
                }),
                _ => None,
            })
            .collect()
    }

    pub fn step(&mut self, actions: &[Action], reward: &RewardParams) -> Result<StepOutcome> {
        let decisions: Vec<LinkDecision> =
            actions.iter().map(|&a| LinkDecision::Transmit(a)).collect();
        self.step_decisions(&decisions, reward)
    }

    pub fn step_decisions(
        &mut self,
        decisions: &[LinkDecision],
        reward: &RewardParams,
    ) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::usage("step called on a finished episode"));
        }
        let (m, k) = (self.cfg.m_links, self.cfg.k_links);
        if decisions.len() != k {
            return Err(Error::usage(format!(
                "expected {k} link decisions, got {}",
                decisions.len()
            )));
        }
        for d in decisions {
            if let LinkDecision::Transmit(a) = d {
                if a.subband >= m || a.power_idx >= self.cfg.power_levels() {
                    return Err(Error::usage(format!("action {a:?} out of range")));
                }
            }
        }

        let tx = self.transmissions(decisions);
        let rates = evaluate_links(&self.state.gains, &self.radio, &tx);
        let dt = self.cfg.step_seconds();

        let mut delivered_bits = vec![0.0; k];
        let mut l_terms = vec![0.0; k];
        for link in 0..k {
            if tx[link].is_some() {
                let (sent, left) =
                    drain_payload(self.state.remaining_bits[link], rates.v2v_rate[link], dt);
                delivered_bits[link] = sent;
                self.state.remaining_bits[link] = left;
                if left <= 0.0 {
                    self.state.delivered[link] = true;
                }
            }
            l_terms[link] = if self.state.remaining_bits[link] > 0.0 {
                rates.v2v_rate[link]
            } else {
                reward.beta
            };
        }
        let v2i_sum: f64 = rates.v2i_capacity.iter().sum();
        let l_sum: f64 = l_terms.iter().sum();
        let r = reward.lambda_c * v2i_sum + reward.lambda_d * l_sum;

        self.state.step_t += 1;
        let left =
            self.cfg.time_budget_ms as f64 - (self.state.step_t as f64) * self.cfg.step_ms as f64;
        self.state.remaining_ms.iter_mut().for_each(|t| *t = left);
        let all_delivered = self.state.delivered.iter().all(|&d| d);
        let done = self.state.step_t >= self.cfg.steps_per_episode()
            || (self.cfg.early_exit_on_delivery && all_delivered);
        self.state.done = done;
        self.state.measured_interference = rates.interference.clone();
        self.redraw_fast_fading();

        debug_assert_eq!(rates.v2i_capacity.len(), m);
        Ok(StepOutcome {
            reward: r,
            v2i_capacities: rates.v2i_capacity,
            v2v_rates: rates.v2v_rate,
            v2v_reward_terms: l_terms,
            delivered_bits,
            remaining_bits: self.state.remaining_bits.clone(),
            interference: rates.interference,
            all_delivered,
            done,
        })
    }

    /// Local observation of agent `k`, normalised.
    ///
    /// Layout: own channel (M), other transmitters' channels to this
    /// receiver (M per other link, ascending link index), own transmitter to
    /// the base station (M), V2I transmitters to this receiver (M), measured
    /// interference (M), remaining payload, remaining time, and optionally
    /// the fingerprint.
    pub fn observe(&self, k: usize, fingerprint: Option<Fingerprint>) -> Vec<f64> {
        let (m, k_links) = (self.cfg.m_links, self.cfg.k_links);
        let g = &self.state.gains;
        let db = |x: f64| 10.0 * x.log10() / OBS_DB_SCALE;
        let len = if fingerprint.is_some() {
            self.cfg.observation_len()
        } else {
            self.cfg.local_observation_len()
        };
        let mut obs = Vec::with_capacity(len);
        obs.extend((0..m).map(|b| db(g.signal(k, b))));
        for other in (0..k_links).filter(|&o| o != k) {
            obs.extend((0..m).map(|b| db(g.v2v(other, k, b))));
        }
        obs.extend((0..m).map(|b| db(g.v2v_bs(k, b))));
        obs.extend((0..m).map(|b| db(g.v2i_v2v(b, k))));
        obs.extend((0..m).map(|b| db(self.state.measured_interference[k * m + b])));
        obs.push(self.state.remaining_bits[k] / self.payload_bits);
        obs.push(self.state.remaining_ms[k] / self.cfg.time_budget_ms as f64);
        if let Some(fp) = fingerprint {
            obs.push(fp.episode_fraction);
            obs.push(fp.epsilon);
        }
        debug_assert_eq!(obs.len(), len);
        obs
    }

    /// V2I capacities with every V2V transmitter off, for the current draw.
    pub fn no_v2v_capacities(&self) -> Vec<f64> {
        let tx = vec![None; self.cfg.k_links];
        evaluate_links(&self.state.gains, &self.radio, &tx).v2i_capacity
    }
}

/// Per-link success of a finished episode given its final remaining payload.
/// Bits sent at `rate_bps` for `dt_s` seconds, floored at delivery.
/// Returns `(sent, remaining)`.
pub fn drain_payload(remaining_bits: f64, rate_bps: f64, dt_s: f64) -> (f64, f64) {
    let sent = (rate_bps * dt_s).min(remaining_bits);
    let left = remaining_bits - sent;
    (sent, if left <= 0.0 { 0.0 } else { left })
}

pub fn delivery_success(final_remaining_bits: &[f64]) -> Vec<bool> {
    final_remaining_bits.iter().map(|&b| b <= 0.0).collect()
}

/// Running count of successful deliveries over links and episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DeliveryTally {
    pub successes: u64,
    pub trials: u64,
}

impl DeliveryTally {
    pub fn record(&mut self, success: &[bool]) {
        self.successes += success.iter().filter(|&&s| s).count() as u64;
        self.trials += success.len() as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig {
            m_links: 2,
            k_links: 2,
            num_vehicles: Some(4),
            ..SimConfig::default()
        }
    }

    fn params() -> RewardParams {
        RewardParams {
            lambda_c: 0.1,
            lambda_d: 0.9,
            beta: 1e7,
        }
    }

    fn env(cfg: &SimConfig, seed: u64) -> Environment {
        Environment::new(cfg, EnvStreams::training(&SeedHierarchy::new(seed))).unwrap()
    }

    #[test]
    fn action_flat_encoding_is_bijective() {
        for flat in 0..16 {
            let a = Action::from_flat(flat, 4);
            assert!(a.subband < 4 && a.power_idx < 4);
            assert_eq!(a.to_flat(4), flat);
        }
    }

    #[test]
    fn reset_restores_payload_and_budget() {
        let cfg = SimConfig::default();
        let mut e = env(&cfg, 1);
        e.reset(true).unwrap();
        assert!(e.state().remaining_bits.iter().all(|&b| b == 8.0 * 2120.0));
        assert!(e.state().remaining_ms.iter().all(|&t| t == 100.0));
        assert_eq!(e.state().step_t, 0);
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = SimConfig::default();
        let mut a = env(&cfg, 9);
        let mut b = env(&cfg, 9);
        for refresh in [true, false, true] {
            a.reset(refresh).unwrap();
            b.reset(refresh).unwrap();
            assert_eq!(a.state(), b.state());
        }
    }

    #[test]
    fn episode_runs_for_the_time_budget() {
        let cfg = small_cfg();
        let mut e = env(&cfg, 2);
        e.reset(false).unwrap();
        let actions = [Action::new(0, 0), Action::new(1, 0)];
        let mut steps = 0;
        loop {
            let out = e.step(&actions, &params()).unwrap();
            steps += 1;
            assert_eq!(e.state().remaining_ms[0], 100.0 - steps as f64);
            if out.done {
                break;
            }
        }
        assert_eq!(steps, 100);
        assert!(matches!(e.step(&actions, &params()), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_power_moves_no_payload() {
        let cfg = small_cfg();
        let mut e = env(&cfg, 3);
        e.reset(false).unwrap();
        let off = [Action::new(0, 3), Action::new(1, 3)];
        for _ in 0..5 {
            let upper = e.no_v2v_capacities();
            let out = e.step(&off, &params()).unwrap();
            for (c, u) in out.v2i_capacities.iter().zip(&upper) {
                assert!(((c - u) / u).abs() < 1e-6);
            }
            assert!(out.v2v_rates.iter().all(|&r| r < 1e-3));
        }
        assert!(e.state().remaining_bits.iter().all(|&b| b > 16959.0));
    }

    #[test]
    fn drain_floors_at_delivery() {
        assert_eq!(drain_payload(16960.0, 5e6, 1e-3), (5000.0, 11960.0));
        assert_eq!(drain_payload(3000.0, 5e6, 1e-3), (3000.0, 0.0));
        assert_eq!(drain_payload(3000.0, 0.0, 1e-3), (0.0, 3000.0));
    }

    #[test]
    fn payload_drains_and_delivered_links_earn_beta() {
        let cfg = small_cfg();
        let mut e = env(&cfg, 4);
        e.reset(false).unwrap();
        let actions = [Action::new(0, 0), Action::new(1, 0)];
        let mut total = [0.0; 2];
        let mut seen_delivery = false;
        loop {
            let before = e.state().remaining_bits.clone();
            let delivered_before = e.state().delivered.clone();
            let out = e.step(&actions, &params()).unwrap();
            for k in 0..2 {
                total[k] += out.delivered_bits[k];
                assert!(out.remaining_bits[k] <= before[k]);
                if delivered_before[k] {
                    assert_eq!(out.v2v_reward_terms[k], params().beta);
                    assert_eq!(out.v2v_rates[k], 0.0);
                    seen_delivery = true;
                }
                if out.remaining_bits[k] > 0.0 {
                    assert_eq!(out.v2v_reward_terms[k], out.v2v_rates[k]);
                }
            }
            let expected = 0.1 * out.v2i_capacities.iter().sum::<f64>()
                + 0.9 * out.v2v_reward_terms.iter().sum::<f64>();
            assert_eq!(out.reward, expected);
            if out.done {
                break;
            }
        }
        for k in 0..2 {
            let rem = e.state().remaining_bits[k];
            assert_eq!(total[k], 16960.0 - rem.max(0.0));
        }
        assert!(seen_delivery);
    }

    #[test]
    fn observation_layout() {
        let cfg = SimConfig::default();
        let mut e = env(&cfg, 5);
        e.reset(false).unwrap();
        let fp = Fingerprint::new(300, 3000, 0.5);
        let z = e.observe(2, Some(fp));
        assert_eq!(z.len(), 32);
        assert!(z.iter().all(|v| v.is_finite()));
        assert_eq!(z[28], 1.0);
        assert_eq!(z[29], 1.0);
        assert_eq!(z[30], 0.1);
        assert_eq!(z[31], 0.5);
        assert_eq!(e.observe(2, None).len(), 30);
    }

    #[test]
    fn delivery_accounting() {
        assert_eq!(delivery_success(&[16960.0]), vec![false]);
        assert_eq!(delivery_success(&[0.0, 5.0]), vec![true, false]);
        let mut t = DeliveryTally::default();
        for ep in 0..100 {
            let ok = [ep < 95, ep < 95, ep < 95, ep < 95];
            t.record(&ok);
        }
        assert_eq!(t.successes, 380);
        assert_eq!(t.rate(), 0.95);
    }
}
