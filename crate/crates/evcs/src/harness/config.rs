//! Experiment configuration, read from a TOML document.

use std::path::{Path, PathBuf};

use milp::Budget;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::behavior::BinningConfig;
use crate::data::SynthConfig;
use crate::par::Exec;
use crate::policy::PolicyKind;
use crate::station::{PriceSchedule, StationConfig};

/// Station parameters; anything left out takes the reference value for `n`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSettings {
    pub n: Option<usize>,
    pub dt_minutes: Option<u32>,
    pub e_max: Option<f64>,
    pub c_max: Option<f64>,
    pub xi: Option<f64>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    /// 24 hourly prices in EUR/kWh.
    pub prices: Option<Vec<f64>>,
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSettings {
    pub samples: usize,
    pub reduced: usize,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        Self { samples: 20, reduced: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub max_nodes: usize,
    pub relative_gap: f64,
    /// Rounds of root cuts on the overrun rows; 0 turns them off.
    #[serde(default = "default_cut_rounds")]
    pub cut_rounds: usize,
}

fn default_cut_rounds() -> usize {
    Budget::default().cut_rounds
}

impl Default for SolverSettings {
    fn default() -> Self {
        let b = Budget::default();
        Self {
            max_nodes: b.max_nodes,
            relative_gap: b.relative_gap,
            cut_rounds: b.cut_rounds,
        }
    }
}

impl SolverSettings {
    pub fn budget(&self) -> Budget {
        Budget {
            max_nodes: self.max_nodes,
            relative_gap: self.relative_gap,
            cut_rounds: self.cut_rounds,
            ..Budget::default()
        }
    }
}

/// Where the sessions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum World {
    /// A fresh synthetic station per seed: `train_days` to fit the model and
    /// build the load table, then `test_days` to evaluate on.
    Synthetic {
        train_days: usize,
        test_days: usize,
        generator: SynthConfig,
    },
    /// Fixed traces; seeds only vary the policies' sampling.
    Traces {
        train: PathBuf,
        test: PathBuf,
        /// Fitted model to use instead of fitting one on `train`.
        #[serde(default)]
        model: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub policies: Vec<PolicyKind>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub exec: Exec,
    #[serde(default)]
    pub station: StationSettings,
    #[serde(default)]
    pub scenarios: ScenarioSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub binning: BinningConfig,
    /// Weight used when running the clairvoyant controller to build the
    /// request-based controller's load table; defaults to the station's.
    #[serde(default)]
    pub table_alpha: Option<f64>,
    pub world: World,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let c: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        // relative trace paths are taken from the config's directory
        if let (World::Traces { train, test, model }, Some(dir)) = (&mut c.world, path.parent()) {
            for p in [Some(train), Some(test), model.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.policies.is_empty() || self.alphas.is_empty() || self.seeds.is_empty() {
            return bad("policies, alphas and seeds must be nonempty");
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad("alphas must be positive");
        }
        let s = &self.scenarios;
        if s.samples == 0 || s.reduced == 0 || s.reduced > s.samples {
            return bad("scenario counts need 1 <= reduced <= samples");
        }
        if !(self.solver.relative_gap >= 0.0) || self.solver.max_nodes == 0 {
            return bad("solver budget must allow at least one node");
        }
        if let World::Synthetic {
            train_days,
            test_days,
            generator,
        } = &self.world
        {
            if *train_days == 0 || *test_days == 0 {
                return bad("train_days and test_days must be positive");
            }
            if generator.dt_minutes != self.station_config(self.alphas[0])?.dt_minutes {
                return bad("generator and station step lengths differ");
            }
        }
        self.binning.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.station_config(self.alphas[0]).map(|_| ())
    }

    /// Slot count: the station's, else the generator's, else 32.
    pub fn n_slots(&self) -> usize {
        match (&self.station.n, &self.world) {
            (Some(n), _) => *n,
            (None, World::Synthetic { generator, .. }) => generator.n_slots,
            _ => 32,
        }
    }

    pub fn station_config(&self, alpha: f64) -> Result<StationConfig, HarnessError> {
        let s = &self.station;
        let r = StationConfig::reference(self.n_slots());
        let c = StationConfig {
            n: r.n,
            dt_minutes: s.dt_minutes.unwrap_or(r.dt_minutes),
            e_max: s.e_max.unwrap_or(r.e_max),
            c_max: s.c_max.unwrap_or(r.c_max),
            xi: s.xi.unwrap_or(r.xi),
            eta: s.eta.unwrap_or(r.eta),
            alpha,
            prices: s.prices.clone().map_or(r.prices, |hourly| PriceSchedule { hourly }),
            horizon: s.horizon.unwrap_or(r.horizon),
        };
        c.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn table_station(&self) -> Result<StationConfig, HarnessError> {
        let alpha = self.table_alpha.or(self.station.alpha).unwrap_or(StationConfig::reference(1).alpha);
        self.station_config(alpha)
    }
}
