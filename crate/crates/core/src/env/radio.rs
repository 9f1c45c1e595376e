//! SINR, interference and Shannon capacity for one joint transmission.

use crate::channel::ChannelGains;
use crate::env::SimConfig;

/// Transmit powers (mW), effective noise powers (mW) and sub-band width.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub v2i_power_mw: f64,
    pub v2v_power_mw: Vec<f64>,
    pub noise_bs_mw: f64,
    pub noise_vehicle_mw: f64,
    pub subband_hz: f64,
}

impl RadioParams {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            v2i_power_mw: cfg.v2i_power_mw(),
            v2v_power_mw: cfg.v2v_power_mw(),
            noise_bs_mw: cfg.noise_bs_mw(),
            noise_vehicle_mw: cfg.noise_vehicle_mw(),
            subband_hz: cfg.subband_hz(),
        }
    }
}

/// What one V2V transmitter radiates during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub subband: usize,
    pub power_mw: f64,
}

/// Per-link results of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRates {
    pub v2i_sinr: Vec<f64>,
    /// bits/s per V2I link on its own sub-band.
    pub v2i_capacity: Vec<f64>,
    pub v2v_sinr: Vec<f64>,
    /// bits/s per V2V link on its chosen sub-band, zero when silent.
    pub v2v_rate: Vec<f64>,
    /// `[k * M + m]`: interference at V2V receiver `k` on sub-band `m` (mW).
    pub interference: Vec<f64>,
}

pub fn compute_capacity(sinr: f64, bandwidth_hz: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr).log2()
}

pub fn compute_sinr_v2i(
    gains: &ChannelGains,
    radio: &RadioParams,
    tx: &[Option<Transmission>],
    m: usize,
) -> f64 {
    let mut interference = 0.0;
    for (k, t) in tx.iter().enumerate() {
        if let Some(t) = t {
            if t.subband == m {
                interference += t.power_mw * gains.v2v_bs(k, m);
            }
        }
    }
    radio.v2i_power_mw * gains.v2i_bs(m) / (radio.noise_bs_mw + interference)
}

/// Interference at V2V receiver `k` on sub-band `m`; never includes link `k`.
pub fn compute_interference_v2v(
    gains: &ChannelGains,
    radio: &RadioParams,
    tx: &[Option<Transmission>],
    k: usize,
    m: usize,
) -> f64 {
    let mut interference = radio.v2i_power_mw * gains.v2i_v2v(m, k);
    for (other, t) in tx.iter().enumerate() {
        if other == k {
            continue;
        }
        if let Some(t) = t {
            if t.subband == m {
                interference += t.power_mw * gains.v2v(other, k, m);
            }
        }
    }
    interference
}

pub fn compute_sinr_v2v(
    gains: &ChannelGains,
    radio: &RadioParams,
    tx: &[Option<Transmission>],
    k: usize,
) -> f64 {
    match tx[k] {
        Some(t) => {
            let i = compute_interference_v2v(gains, radio, tx, k, t.subband);
            t.power_mw * gains.signal(k, t.subband) / (radio.noise_vehicle_mw + i)
        }
        None => 0.0,
    }
}

pub fn evaluate_links(
    gains: &ChannelGains,
    radio: &RadioParams,
    tx: &[Option<Transmission>],
) -> LinkRates {
    let (m_links, k_links) = (gains.m, gains.k);
    let v2i_sinr: Vec<f64> = (0..m_links)
        .map(|m| compute_sinr_v2i(gains, radio, tx, m))
        .collect();
    let v2i_capacity = v2i_sinr
        .iter()
        .map(|&s| compute_capacity(s, radio.subband_hz))
        .collect();
    let mut interference = Vec::with_capacity(k_links * m_links);
    for k in 0..k_links {
        for m in 0..m_links {
            interference.push(compute_interference_v2v(gains, radio, tx, k, m));
        }
    }
    let v2v_sinr: Vec<f64> = (0..k_links)
        .map(|k| match tx[k] {
            Some(t) => {
                let i = interference[k * m_links + t.subband];
                t.power_mw * gains.signal(k, t.subband) / (radio.noise_vehicle_mw + i)
            }
            None => 0.0,
        })
        .collect();
    let v2v_rate = v2v_sinr
        .iter()
        .map(|&s| compute_capacity(s, radio.subband_hz))
        .collect();
    LinkRates {
        v2i_sinr,
        v2i_capacity,
        v2v_sinr,
        v2v_rate,
        interference,
    }
}
