//! Path loss, correlated shadowing and Rayleigh fading for every link family.
//!
//! V2I (vehicle to base station) links use `128.1 + 37.6 log10(d[km])` on
//! the 3-D distance. Vehicle-to-vehicle links use the WINNER+ B1 Manhattan
//! line-of-sight model:
//!
//! ```text
//! d_bp = 4 (h_tx - 1)(h_rx - 1) f_c / c
//! PL   = 22.7 log10 d + 41 + 20 log10(f_c[GHz] / 5)                         3 m <= d <= d_bp
//! PL   = 40 log10 d + 9.45 - 17.3 log10(h_tx - 1) - 17.3 log10(h_rx - 1)
//!        + 2.7 log10(f_c[GHz] / 5)                                          d > d_bp
//! ```
//!
//! Shadowing follows a first-order autoregression in the distance moved.
//! Small-scale power gains are i.i.d. unit-mean exponential per sub-band.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::env::SimConfig;
use crate::error::{Error, Result};
use crate::topology::{Node, TopologyState};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Distances below this are clamped in the V2V model.
pub const MIN_V2V_DISTANCE_M: f64 = 3.0;

pub const V2I_INTERCEPT_DB: f64 = 128.1;
pub const V2I_SLOPE_DB: f64 = 37.6;

pub const B1_NEAR_SLOPE: f64 = 22.7;
pub const B1_NEAR_INTERCEPT: f64 = 41.0;
pub const B1_NEAR_FREQ_SLOPE: f64 = 20.0;
pub const B1_FAR_SLOPE: f64 = 40.0;
pub const B1_FAR_INTERCEPT: f64 = 9.45;
pub const B1_FAR_HEIGHT_SLOPE: f64 = 17.3;
pub const B1_FAR_FREQ_SLOPE: f64 = 2.7;

/// V2I path loss in dB for a distance in kilometres.
pub fn pathloss_v2i(d_km: f64) -> Result<f64> {
    if !(d_km > 0.0) || !d_km.is_finite() {
        return Err(Error::Domain(format!(
            "V2I path loss needs a positive distance, got {d_km} km"
        )));
    }
    Ok(V2I_INTERCEPT_DB + V2I_SLOPE_DB * d_km.log10())
}

pub fn breakpoint_distance_m(carrier_ghz: f64, h_tx: f64, h_rx: f64) -> f64 {
    4.0 * (h_tx - 1.0) * (h_rx - 1.0) * carrier_ghz * 1e9 / SPEED_OF_LIGHT
}

/// Line-of-sight V2V path loss in dB for a distance in metres.
pub fn pathloss_v2v(d_m: f64, carrier_ghz: f64, h_tx: f64, h_rx: f64) -> f64 {
    let d = d_m.max(MIN_V2V_DISTANCE_M);
    let freq = (carrier_ghz / 5.0).log10();
    if d <= breakpoint_distance_m(carrier_ghz, h_tx, h_rx) {
        B1_NEAR_SLOPE * d.log10() + B1_NEAR_INTERCEPT + B1_NEAR_FREQ_SLOPE * freq
    } else {
        B1_FAR_SLOPE * d.log10() + B1_FAR_INTERCEPT
            - B1_FAR_HEIGHT_SLOPE * (h_tx - 1.0).log10()
            - B1_FAR_HEIGHT_SLOPE * (h_rx - 1.0).log10()
            + B1_FAR_FREQ_SLOPE * freq
    }
}

/// One AR(1) shadowing update after moving `delta_d` metres.
pub fn update_shadowing<R: Rng + ?Sized>(
    prev_db: f64,
    delta_d: f64,
    std_db: f64,
    decorrelation_m: f64,
    rng: &mut R,
) -> f64 {
    let rho = (-delta_d / decorrelation_m).exp();
    if rho == 1.0 {
        return prev_db;
    }
    let n: f64 = StandardNormal.sample(rng);
    rho * prev_db + (1.0 - rho * rho).sqrt() * std_db * n
}

/// Unit-mean exponential power gain (Rayleigh amplitude).
pub fn sample_fast_fading<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let h: f64 = Exp1.sample(rng);
        if h > 0.0 {
            return h;
        }
    }
}

/// Linear power gain from its dB components and a small-scale factor.
pub fn compose_gain(pl_db: f64, shadow_db: f64, tx_gain_db: f64, rx_gain_db: f64, h: f64) -> f64 {
    10f64.powf((tx_gain_db + rx_gain_db - pl_db - shadow_db) / 10.0) * h
}

/// Large-scale gains (antenna gains minus path loss and shadowing, dB).
///
/// Entries are per ordered link, identical on every sub-band.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScaleState {
    pub m: usize,
    pub k: usize,
    /// `[tx * K + rx]`: V2V transmitter `tx` to V2V receiver `rx`.
    pub v2v_db: Vec<f64>,
    /// `[k]`: V2V transmitter to base station.
    pub v2v_bs_db: Vec<f64>,
    /// `[m]`: V2I transmitter to base station.
    pub v2i_bs_db: Vec<f64>,
    /// `[m * K + k]`: V2I transmitter to V2V receiver.
    pub v2i_v2v_db: Vec<f64>,
    /// Symmetric vehicle-pair shadowing, `[i * N + j]`.
    pub vehicle_shadow_db: Vec<f64>,
    /// Vehicle-to-base-station shadowing.
    pub bs_shadow_db: Vec<f64>,
}

impl LargeScaleState {
    pub fn initialize<R: Rng + ?Sized>(
        cfg: &SimConfig,
        topo: &TopologyState,
        rng: &mut R,
    ) -> Result<Self> {
        let n = topo.vehicles.len();
        let mut vehicle_shadow_db = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let n: f64 = StandardNormal.sample(rng);
                let s = cfg.v2v_shadow_std_db * n;
                vehicle_shadow_db[i * topo.vehicles.len() + j] = s;
                vehicle_shadow_db[j * topo.vehicles.len() + i] = s;
            }
        }
        let bs_shadow_db = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                cfg.v2i_shadow_std_db * z
            })
            .collect();
        let mut state = Self {
            m: cfg.m_links,
            k: cfg.k_links,
            v2v_db: Vec::new(),
            v2v_bs_db: Vec::new(),
            v2i_bs_db: Vec::new(),
            v2i_v2v_db: Vec::new(),
            vehicle_shadow_db,
            bs_shadow_db,
        };
        state.recompute(cfg, topo)?;
        Ok(state)
    }

    /// Moves shadowing forward for the motion between `before` and `after`
    /// and recomputes all large-scale gains at the new positions.
    pub fn refresh<R: Rng + ?Sized>(
        &mut self,
        cfg: &SimConfig,
        before: &TopologyState,
        after: &TopologyState,
        rng: &mut R,
    ) -> Result<()> {
        let moved = before.displacements(after);
        let n = moved.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let s = update_shadowing(
                    self.vehicle_shadow_db[i * n + j],
                    moved[i] + moved[j],
                    cfg.v2v_shadow_std_db,
                    cfg.v2v_decorrelation_m,
                    rng,
                );
                self.vehicle_shadow_db[i * n + j] = s;
                self.vehicle_shadow_db[j * n + i] = s;
            }
        }
        for (i, d) in moved.iter().enumerate() {
            self.bs_shadow_db[i] = update_shadowing(
                self.bs_shadow_db[i],
                *d,
                cfg.v2i_shadow_std_db,
                cfg.v2i_decorrelation_m,
                rng,
            );
        }
        self.recompute(cfg, after)
    }

    fn recompute(&mut self, cfg: &SimConfig, topo: &TopologyState) -> Result<()> {
        let n = topo.vehicles.len();
        let veh_gain = cfg.vehicle_antenna_gain_dbi;
        let bs_gain = cfg.bs_antenna_gain_dbi;
        let h_veh = cfg.vehicle_antenna_height_m;
        let dh = cfg.bs_antenna_height_m - h_veh;

        let v2v = |a: usize, b: usize| {
            let d = topo.pair_distance(Node::Vehicle(a), Node::Vehicle(b));
            let pl = pathloss_v2v(d, cfg.carrier_ghz, h_veh, h_veh);
            let shadow = if a == b {
                0.0
            } else {
                self.vehicle_shadow_db[a * n + b]
            };
            2.0 * veh_gain - pl - shadow
        };
        let to_bs = |a: usize| -> Result<f64> {
            let d = topo.pair_distance(Node::Vehicle(a), Node::BaseStation);
            let pl = pathloss_v2i(d.hypot(dh) / 1000.0)?;
            Ok(veh_gain + bs_gain - pl - self.bs_shadow_db[a])
        };

        let pairs = &topo.v2v_pairs;
        let mut v2v_db = Vec::with_capacity(self.k * self.k);
        for &(tx, _) in pairs {
            for &(_, rx) in pairs {
                v2v_db.push(v2v(tx, rx));
            }
        }
        let v2v_bs_db = pairs
            .iter()
            .map(|&(tx, _)| to_bs(tx))
            .collect::<Result<_>>()?;
        let v2i_bs_db = topo
            .v2i_vehicles
            .iter()
            .map(|&v| to_bs(v))
            .collect::<Result<_>>()?;
        let mut v2i_v2v_db = Vec::with_capacity(self.m * self.k);
        for &v in &topo.v2i_vehicles {
            for &(_, rx) in pairs {
                v2i_v2v_db.push(v2v(v, rx));
            }
        }
        self.v2v_db = v2v_db;
        self.v2v_bs_db = v2v_bs_db;
        self.v2i_bs_db = v2i_bs_db;
        self.v2i_v2v_db = v2i_v2v_db;
        Ok(())
    }
}

/// Small-scale power factors, laid out like [`ChannelGains`].
#[derive(Debug, Clone, PartialEq)]
pub struct FastFadingState {
    pub v2v: Vec<f64>,
    pub v2v_bs: Vec<f64>,
    pub v2i_bs: Vec<f64>,
    pub v2i_v2v: Vec<f64>,
}

impl FastFadingState {
    pub fn sample<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Self {
        let mut draw = |n: usize| (0..n).map(|_| sample_fast_fading(rng)).collect::<Vec<_>>();
        Self {
            v2v: draw(k * k * m),
            v2v_bs: draw(k * m),
            v2i_bs: draw(m),
            v2i_v2v: draw(m * k),
        }
    }

    /// Unit factors everywhere: gains reduce to the large-scale part.
    pub fn unit(m: usize, k: usize) -> Self {
        Self {
            v2v: vec![1.0; k * k * m],
            v2v_bs: vec![1.0; k * m],
            v2i_bs: vec![1.0; m],
            v2i_v2v: vec![1.0; m * k],
        }
    }
}

/// Instantaneous linear channel power gains for one coherence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGains {
    pub m: usize,
    pub k: usize,
    /// `[(tx * K + rx) * M + band]`; `tx == rx` is the desired V2V channel.
    pub v2v: Vec<f64>,
    /// `[k * M + band]`: V2V transmitter to base station.
    pub v2v_bs: Vec<f64>,
    /// `[m]`: V2I link `m` on its own sub-band.
    pub v2i_bs: Vec<f64>,
    /// `[m * K + k]`: V2I transmitter `m` to V2V receiver `k` on sub-band `m`.
    pub v2i_v2v: Vec<f64>,
}

impl ChannelGains {
    pub fn compose(large: &LargeScaleState, fast: &FastFadingState) -> Self {
        let (m, k) = (large.m, large.k);
        let lin = |db: f64, h: f64| compose_gain(0.0, -db, 0.0, 0.0, h);
        let mut v2v = Vec::with_capacity(k * k * m);
        for pair in 0..k * k {
            for band in 0..m {
                v2v.push(lin(large.v2v_db[pair], fast.v2v[pair * m + band]));
            }
        }
        let mut v2v_bs = Vec::with_capacity(k * m);
        for tx in 0..k {
            for band in 0..m {
                v2v_bs.push(lin(large.v2v_bs_db[tx], fast.v2v_bs[tx * m + band]));
            }
        }
        let v2i_bs = (0..m)
            .map(|i| lin(large.v2i_bs_db[i], fast.v2i_bs[i]))
            .collect();
        let v2i_v2v = (0..m * k)
            .map(|i| lin(large.v2i_v2v_db[i], fast.v2i_v2v[i]))
            .collect();
        Self {
            m,
            k,
            v2v,
            v2v_bs,
            v2i_bs,
            v2i_v2v,
        }
    }

    #[inline]
    pub fn v2v(&self, tx: usize, rx: usize, band: usize) -> f64 {
        self.v2v[(tx * self.k + rx) * self.m + band]
    }

    #[inline]
    pub fn signal(&self, k: usize, band: usize) -> f64 {
        self.v2v(k, k, band)
    }

    #[inline]
    pub fn v2v_bs(&self, k: usize, band: usize) -> f64 {
        self.v2v_bs[k * self.m + band]
    }

    #[inline]
    pub fn v2i_bs(&self, m: usize) -> f64 {
        self.v2i_bs[m]
    }

    #[inline]
    pub fn v2i_v2v(&self, m: usize, k: usize) -> f64 {
        self.v2i_v2v[m * self.k + k]
    }
}
