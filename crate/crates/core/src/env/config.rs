use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transmit power that stands for "V2V transmitter off".
pub const ZERO_POWER_DBM: f64 = -100.0;

/// Bytes in one payload unit; payloads are multiples of this.
pub const PAYLOAD_UNIT_BYTES: u64 = 1060;

/// Physical and protocol parameters of one simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of V2I links, which is also the number of sub-bands.
    pub m_links: usize,
    /// Number of V2V links (agents).
    pub k_links: usize,
    /// Vehicles on the map; `None` means the fewest that can host every link.
    pub num_vehicles: Option<usize>,
    pub carrier_ghz: f64,
    /// Total bandwidth, split evenly into `m_links` sub-bands.
    pub total_bandwidth_hz: f64,
    pub bs_antenna_height_m: f64,
    pub vehicle_antenna_height_m: f64,
    pub bs_antenna_gain_dbi: f64,
    pub vehicle_antenna_gain_dbi: f64,
    pub bs_noise_figure_db: f64,
    pub vehicle_noise_figure_db: f64,
    pub v2i_power_dbm: f64,
    pub v2v_power_levels_dbm: Vec<f64>,
    pub noise_dbm: f64,
    pub time_budget_ms: u32,
    pub step_ms: u32,
    pub payload_bytes: u64,
    pub v2i_shadow_std_db: f64,
    pub v2v_shadow_std_db: f64,
    pub v2i_decorrelation_m: f64,
    pub v2v_decorrelation_m: f64,
    pub area_width_m: f64,
    pub area_height_m: f64,
    pub grid_columns: usize,
    pub grid_rows: usize,
    pub lane_width_m: f64,
    pub lanes_per_direction: usize,
    pub speed_mps: f64,
    /// Interval by which vehicles advance at each large-scale refresh.
    pub large_scale_update_ms: u32,
    /// End an episode as soon as every payload is delivered.
    pub early_exit_on_delivery: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m_links: 4,
            k_links: 4,
            num_vehicles: None,
            carrier_ghz: 2.0,
            total_bandwidth_hz: 4e6,
            bs_antenna_height_m: 25.0,
            vehicle_antenna_height_m: 1.5,
            bs_antenna_gain_dbi: 8.0,
            vehicle_antenna_gain_dbi: 3.0,
            bs_noise_figure_db: 5.0,
            vehicle_noise_figure_db: 9.0,
            v2i_power_dbm: 23.0,
            v2v_power_levels_dbm: vec![23.0, 10.0, 5.0, ZERO_POWER_DBM],
            noise_dbm: -114.0,
            time_budget_ms: 100,
            step_ms: 1,
            payload_bytes: 2 * PAYLOAD_UNIT_BYTES,
            v2i_shadow_std_db: 8.0,
            v2v_shadow_std_db: 3.0,
            v2i_decorrelation_m: 50.0,
            v2v_decorrelation_m: 10.0,
            // 1299 m x 750 m halved in both directions.
            area_width_m: 649.5,
            area_height_m: 375.0,
            grid_columns: 3,
            grid_rows: 3,
            lane_width_m: 3.5,
            lanes_per_direction: 2,
            speed_mps: 10.0,
            large_scale_update_ms: 100,
            early_exit_on_delivery: false,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("must be a positive number, got {v}"),
                ))
            }
        };
        if self.m_links == 0 {
            return Err(Error::config("m_links", "must be at least 1"));
        }
        if self.k_links == 0 {
            return Err(Error::config("k_links", "must be at least 1"));
        }
        let needed = self.m_links.max(self.k_links + 1);
        if self.vehicle_count() < needed {
            return Err(Error::config(
                "num_vehicles",
                format!(
                    "{} vehicles cannot host {} V2I and {} V2V links (need at least {needed})",
                    self.vehicle_count(),
                    self.m_links,
                    self.k_links
                ),
            ));
        }
        positive("carrier_ghz", self.carrier_ghz)?;
        positive("total_bandwidth_hz", self.total_bandwidth_hz)?;
        positive("bs_antenna_height_m", self.bs_antenna_height_m)?;
        if !(self.vehicle_antenna_height_m > 1.0) {
            return Err(Error::config(
                "vehicle_antenna_height_m",
                "must exceed 1 m (effective height enters the breakpoint distance)",
            ));
        }
        if self.v2v_power_levels_dbm.is_empty() {
            return Err(Error::config("v2v_power_levels_dbm", "must not be empty"));
        }
        if !self.v2v_power_levels_dbm.contains(&ZERO_POWER_DBM) {
            return Err(Error::config(
                "v2v_power_levels_dbm",
                "must contain the -100 dBm (transmitter off) level",
            ));
        }
        if self.v2v_power_levels_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::config(
                "v2v_power_levels_dbm",
                "levels must be finite",
            ));
        }
        if self.step_ms == 0 {
            return Err(Error::config("step_ms", "must be at least 1"));
        }
        if self.time_budget_ms == 0 || !self.time_budget_ms.is_multiple_of(self.step_ms) {
            return Err(Error::config(
                "time_budget_ms",
                format!("must be a positive multiple of step_ms ({})", self.step_ms),
            ));
        }
        if self.payload_bytes == 0 {
            return Err(Error::config("payload_bytes", "must be positive"));
        }
        for (key, v) in [
            ("v2i_shadow_std_db", self.v2i_shadow_std_db),
            ("v2v_shadow_std_db", self.v2v_shadow_std_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, "must be non-negative"));
            }
        }
        positive("v2i_decorrelation_m", self.v2i_decorrelation_m)?;
        positive("v2v_decorrelation_m", self.v2v_decorrelation_m)?;
        positive("area_width_m", self.area_width_m)?;
        positive("area_height_m", self.area_height_m)?;
        positive("lane_width_m", self.lane_width_m)?;
        positive("speed_mps", self.speed_mps)?;
        if self.grid_columns == 0 {
            return Err(Error::config("grid_columns", "must be at least 1"));
        }
        if self.grid_rows == 0 {
            return Err(Error::config("grid_rows", "must be at least 1"));
        }
        if self.lanes_per_direction == 0 {
            return Err(Error::config("lanes_per_direction", "must be at least 1"));
        }
        let half_road = self.lane_width_m * self.lanes_per_direction as f64;
        if 2.0 * half_road >= self.area_width_m / self.grid_columns as f64
            || 2.0 * half_road >= self.area_height_m / self.grid_rows as f64
        {
            return Err(Error::config(
                "lane_width_m",
                "roads are wider than the blocks",
            ));
        }
        if self.large_scale_update_ms == 0 {
            return Err(Error::config("large_scale_update_ms", "must be at least 1"));
        }
        Ok(())
    }

    /// `num_vehicles`, or `max(M, K + 1)` when unset.
    pub fn vehicle_count(&self) -> usize {
        self.num_vehicles
            .unwrap_or_else(|| self.m_links.max(self.k_links + 1))
    }

    /// Bandwidth of one sub-band.
    pub fn subband_hz(&self) -> f64 {
        self.total_bandwidth_hz / self.m_links as f64
    }

    pub fn power_levels(&self) -> usize {
        self.v2v_power_levels_dbm.len()
    }

    /// Size of one agent's action space.
    pub fn action_count(&self) -> usize {
        self.power_levels() * self.m_links
    }

    pub fn steps_per_episode(&self) -> usize {
        (self.time_budget_ms / self.step_ms) as usize
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_ms as f64 * 1e-3
    }

    pub fn payload_bits(&self) -> f64 {
        self.payload_bytes as f64 * 8.0
    }

    /// Observation length without the two fingerprint entries.
    pub fn local_observation_len(&self) -> usize {
        self.m_links * (self.k_links + 3) + 2
    }

    /// Observation length with the `(episode, epsilon)` fingerprint.
    pub fn observation_len(&self) -> usize {
        self.local_observation_len() + 2
    }

    pub fn noise_bs_mw(&self) -> f64 {
        dbm_to_mw(self.noise_dbm + self.bs_noise_figure_db)
    }

    pub fn noise_vehicle_mw(&self) -> f64 {
        dbm_to_mw(self.noise_dbm + self.vehicle_noise_figure_db)
    }

    pub fn v2i_power_mw(&self) -> f64 {
        dbm_to_mw(self.v2i_power_dbm)
    }

    pub fn v2v_power_mw(&self) -> Vec<f64> {
        self.v2v_power_levels_dbm
            .iter()
            .map(|&p| dbm_to_mw(p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_the_reference_setup() {
        let c = SimConfig::default();
        c.validate().unwrap();
        assert_eq!((c.m_links, c.k_links), (4, 4));
        assert_eq!(c.time_budget_ms, 100);
        assert_eq!(c.noise_dbm, -114.0);
        assert_eq!(c.v2v_power_levels_dbm, vec![23.0, 10.0, 5.0, -100.0]);
        assert_eq!(c.subband_hz(), 1e6);
        assert_eq!(c.steps_per_episode(), 100);
        assert_eq!(c.observation_len(), 32);
        assert_eq!(c.action_count(), 16);
    }

    #[test]
    fn constraint_errors_name_the_key() {
        let mut c = SimConfig::default();
        c.m_links = 0;
        match c.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "m_links"),
            other => panic!("unexpected {other:?}"),
        }
        let mut c = SimConfig::default();
        c.v2v_power_levels_dbm = vec![23.0, 10.0];
        assert!(
            matches!(c.validate(), Err(Error::Config { key, .. }) if key == "v2v_power_levels_dbm")
        );
        let mut c = SimConfig::default();
        c.time_budget_ms = 101;
        c.step_ms = 2;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "time_budget_ms"));
    }

    #[test]
    fn too_few_vehicles_is_a_configuration_error() {
        let c = SimConfig {
            m_links: 2,
            k_links: 2,
            num_vehicles: Some(1),
            ..SimConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "num_vehicles"));
    }

    #[test]
    fn effective_noise_includes_the_noise_figure() {
        let c = SimConfig::default();
        approx::assert_relative_eq!(c.noise_bs_mw(), 10f64.powf(-10.9), max_relative = 1e-12);
        approx::assert_relative_eq!(
            c.noise_vehicle_mw(),
            10f64.powf(-10.5),
            max_relative = 1e-12
        );
        approx::assert_relative_eq!(
            dbm_to_mw(23.0),
            199.526_231_496_887_96,
            max_relative = 1e-12
        );
    }
}
