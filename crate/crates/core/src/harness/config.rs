use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{Scheme, DEFAULT_SEARCH_CAP};
use crate::env::{SimConfig, PAYLOAD_UNIT_BYTES};
use crate::error::{Error, Result};
use crate::marl::{RewardConfig, TrainConfig};

/// One scheme, or every scheme in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemeChoice {
    One(Scheme),
    All,
}

impl SchemeChoice {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeChoice::One(s) => vec![s],
            SchemeChoice::All => Scheme::ALL.to_vec(),
        }
    }
}

impl FromStr for SchemeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(SchemeChoice::All)
        } else {
            s.parse().map(SchemeChoice::One)
        }
    }
}

impl TryFrom<String> for SchemeChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SchemeChoice> for String {
    fn from(c: SchemeChoice) -> String {
        c.to_string()
    }
}

impl fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeChoice::One(s) => write!(f, "{s}"),
            SchemeChoice::All => f.write_str("all"),
        }
    }
}

/// Everything needed to reproduce one experiment.
///
/// Scalar keys come first so the echoed TOML keeps them above the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scheme: SchemeChoice,
    pub seed: u64,
    pub eval_episodes: usize,
    /// Payload sizes to evaluate, in units of 1060 bytes.
    pub payload_multipliers: Vec<u64>,
    pub output_dir: PathBuf,
    /// Largest joint action space the exhaustive baseline may search.
    pub search_cap: u64,
    /// Also write SVG charts next to the CSV files.
    pub plots: bool,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub reward: RewardConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scheme: SchemeChoice::One(Scheme::Marl),
            seed: 1,
            eval_episodes: 200,
            payload_multipliers: (1..=6).collect(),
            output_dir: PathBuf::from("runs/default"),
            search_cap: DEFAULT_SEARCH_CAP as u64,
            plots: true,
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        self.reward.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be positive"));
        }
        if self.payload_multipliers.is_empty() {
            return Err(Error::config("payload_multipliers", "must not be empty"));
        }
        if self.payload_multipliers.contains(&0) {
            return Err(Error::config(
                "payload_multipliers",
                "multipliers must be positive",
            ));
        }
        if self.search_cap == 0 {
            return Err(Error::config("search_cap", "must be positive"));
        }
        Ok(())
    }

    pub fn payload_bytes(&self) -> Vec<u64> {
        self.payload_multipliers
            .iter()
            .map(|m| m * PAYLOAD_UNIT_BYTES)
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Parses TOML text; missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_the_defaults() {
        let spec = parse_config("").unwrap();
        assert_eq!(spec, ExperimentSpec::default());
        assert_eq!((spec.sim.m_links, spec.sim.k_links), (4, 4));
        assert_eq!(spec.sim.time_budget_ms, 100);
        assert_eq!(spec.sim.noise_dbm, -114.0);
        assert_eq!(spec.sim.v2v_power_levels_dbm, vec![23.0, 10.0, 5.0, -100.0]);
        assert_eq!(
            spec.payload_bytes(),
            vec![1060, 2120, 3180, 4240, 5300, 6360]
        );
    }

    #[test]
    fn echo_round_trips() {
        let spec = parse_config(
            "scheme = \"all\"\nseed = 9\n[sim]\nm_links = 2\nk_links = 2\nnum_vehicles = 7\n",
        )
        .unwrap();
        let echoed = spec.to_toml().unwrap();
        assert_eq!(parse_config(&echoed).unwrap(), spec);
        assert_eq!(
            parse_config(&ExperimentSpec::default().to_toml().unwrap()).unwrap(),
            ExperimentSpec::default()
        );
    }

    #[test]
    fn constraint_errors_name_the_key() {
        let err = parse_config("[sim]\nm_links = 0\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "m_links"),
            "{err}"
        );
        let err = parse_config("payload_multipliers = [1, 0]\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "payload_multipliers"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_and_bad_types_are_parse_errors() {
        let err = parse_config("[sim]\nm_linkz = 3\n").unwrap_err();
        assert!(
            matches!(err, Error::Parse(ref m) if m.contains("m_linkz")),
            "{err}"
        );
        let err = parse_config("seed = \"one\"\n").unwrap_err();
        assert!(
            matches!(err, Error::Parse(ref m) if m.contains("seed")),
            "{err}"
        );
        let err = parse_config("scheme = \"dqn\"\n").unwrap_err();
        assert!(err.to_string().contains("dqn"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
