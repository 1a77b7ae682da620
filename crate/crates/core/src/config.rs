//! Scenario and run configuration.
//!
//! Configuration files are TOML with two tables:
//!
//! ```toml
//! [scenario]          # one key per `ScenarioConfig` field
//! grid_k = 30
//! h_min = 2.5e-9
//!
//! [train]             # one key per `TrainConfig` field
//! episodes = 60
//! ```
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected and the error names them.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// How the trend channel propagates detected movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendMode {
    /// One random walker per seed cell.
    Stochastic,
    /// Deterministic propagation of the walkers' expected deposits.
    Expectation,
}

impl std::str::FromStr for TrendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(TrendMode::Stochastic),
            "expectation" => Ok(TrendMode::Expectation),
            other => Err(Error::config(
                "trend_mode",
                format!("expected `stochastic` or `expectation`, got `{other}`"),
            )),
        }
    }
}

/// Physical and learning constants of one scenario.
///
/// Units are SI throughout: meters, seconds, watts, joules, hertz, bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Cells per side of the area of interest.
    pub grid_k: usize,
    /// Edge length of one cell.
    pub cell_size: f64,
    /// Fixed UAV flight altitude.
    pub altitude_h: f64,
    pub uav_speed: f64,
    /// Long-run mean ground-user speed.
    pub gu_mean_speed: f64,
    /// Speed memory factor in [0, 1].
    pub gu_inertia: f64,
    /// Heading change per turn step.
    pub steer_angle: f64,
    /// Probability a ground user keeps its heading in a slot.
    pub gu_greedy_eps: f64,
    pub fly_power: f64,
    /// Flight energy the UAV carries.
    pub energy_budget: f64,
    pub slot_tau: f64,
    /// Hover time used for uploads within one slot.
    pub hover_tau_c: f64,
    /// Bandwidth of one resource block.
    pub bandwidth_w: f64,
    pub tx_power: f64,
    /// Noise power (variance, not amplitude).
    pub noise_sigma2: f64,
    /// Channel power gain at 1 m.
    pub ref_gain_alpha: f64,
    /// Path-loss exponent.
    pub pathloss_kps: f64,
    /// Rician factor; `inf` selects the pure line-of-sight limit.
    pub rician_ks: f64,
    /// Minimum channel-coefficient magnitude for a usable link.
    pub h_min: f64,
    /// Data generated by every ground user per slot.
    pub arrival_bits: f64,
    /// Probability the agent takes the greedy action.
    pub agent_eta: f64,
    pub discount_gamma: f64,
    /// Prediction horizon of the trend channel.
    pub trend_steps: usize,
    /// Per-step decay of the trend channel; follows `discount_gamma` when unset.
    pub trend_gamma: Option<f64>,
    pub trend_mode: TrendMode,
    pub max_steps_per_episode: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            grid_k: 30,
            cell_size: 30.0,
            altitude_h: 40.0,
            uav_speed: 30.0,
            gu_mean_speed: 1.0,
            gu_inertia: 0.9,
            steer_angle: FRAC_PI_2,
            gu_greedy_eps: 0.9,
            fly_power: 110.0,
            energy_budget: 1.0e7,
            slot_tau: 1.0,
            hover_tau_c: 0.1,
            bandwidth_w: 2.0e6,
            tx_power: 0.1,
            noise_sigma2: 1.0e-18,
            ref_gain_alpha: 1.0e-5,
            pathloss_kps: 2.0,
            rician_ks: 1.0,
            h_min: 2.5e-9,
            arrival_bits: 5.0e-3,
            agent_eta: 0.9,
            discount_gamma: 0.9,
            trend_steps: 3,
            trend_gamma: None,
            trend_mode: TrendMode::Expectation,
            max_steps_per_episode: 3000,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Side length of the area of interest in meters.
    pub fn aoi_side(&self) -> f64 {
        self.grid_k as f64 * self.cell_size
    }

    pub fn trend_gamma(&self) -> f64 {
        self.trend_gamma.unwrap_or(self.discount_gamma)
    }

    /// Checks every invariant; the error names the first offending key.
    pub fn validate(&self) -> Result<()> {
        fn positive(key: &str, v: f64) -> Result<()> {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be > 0, got {v}")))
            }
        }
        fn finite_positive(key: &str, v: f64) -> Result<()> {
            positive(key, v)?;
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, "must be finite"))
            }
        }
        fn unit(key: &str, v: f64) -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("must lie in [0, 1], got {v}")))
            }
        }
        fn open_unit(key: &str, v: f64) -> Result<()> {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must lie in (0, 1), got {v}")))
            }
        }

        if self.grid_k < 2 {
            return Err(Error::config("grid_k", "must be at least 2"));
        }
        finite_positive("cell_size", self.cell_size)?;
        finite_positive("altitude_h", self.altitude_h)?;
        finite_positive("uav_speed", self.uav_speed)?;
        if !(self.gu_mean_speed >= 0.0 && self.gu_mean_speed.is_finite()) {
            return Err(Error::config("gu_mean_speed", "must be finite and >= 0"));
        }
        unit("gu_inertia", self.gu_inertia)?;
        finite_positive("steer_angle", self.steer_angle)?;
        unit("gu_greedy_eps", self.gu_greedy_eps)?;
        finite_positive("fly_power", self.fly_power)?;
        // An infinite budget disables the energy constraint.
        positive("energy_budget", self.energy_budget)?;
        finite_positive("slot_tau", self.slot_tau)?;
        finite_positive("hover_tau_c", self.hover_tau_c)?;
        if self.hover_tau_c >= self.slot_tau {
            return Err(Error::config("hover_tau_c", "hover time must be shorter than the slot"));
        }
        finite_positive("bandwidth_w", self.bandwidth_w)?;
        finite_positive("tx_power", self.tx_power)?;
        finite_positive("noise_sigma2", self.noise_sigma2)?;
        finite_positive("ref_gain_alpha", self.ref_gain_alpha)?;
        finite_positive("pathloss_kps", self.pathloss_kps)?;
        if self.rician_ks.is_nan() || self.rician_ks < 0.0 {
            return Err(Error::config("rician_ks", "must be >= 0"));
        }
        finite_positive("h_min", self.h_min)?;
        if !(self.arrival_bits >= 0.0 && self.arrival_bits.is_finite()) {
            return Err(Error::config("arrival_bits", "must be finite and >= 0"));
        }
        unit("agent_eta", self.agent_eta)?;
        open_unit("discount_gamma", self.discount_gamma)?;
        if let Some(g) = self.trend_gamma {
            open_unit("trend_gamma", g)?;
        }
        if self.max_steps_per_episode == 0 {
            return Err(Error::config("max_steps_per_episode", "must be positive"));
        }
        Ok(())
    }
}

/// Everything a CLI run needs: the scenario plus the training schedule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string()))?;
        let mut cfg = RunConfig::default();
        for (key, value) in doc {
            let table = match value {
                toml::Value::Table(t) => t,
                _ => {
                    return Err(Error::config(
                        key,
                        "top-level keys must be the tables [scenario] or [train]",
                    ))
                }
            };
            match key.as_str() {
                "scenario" => cfg.scenario = merge_table(&cfg.scenario, &table)?,
                "train" => cfg.train = merge_table(&cfg.train, &table)?,
                _ => return Err(Error::config(key, "unknown table")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key=value` override. Bare keys resolve against the
    /// scenario table first, then the train table; `train.key` and
    /// `scenario.key` select a table explicitly.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
        let key = key.trim();
        let value = parse_override_value(raw.trim());
        let (table, field) = match key.split_once('.') {
            Some((t, f)) => (Some(t), f),
            None => (None, key),
        };
        let in_scenario = field_names(&self.scenario).contains(&field.to_string());
        let in_train = field_names(&self.train).contains(&field.to_string());
        let mut single = toml::Table::new();
        single.insert(field.to_string(), value);
        match (table, in_scenario, in_train) {
            (Some("scenario"), _, _) | (None, true, _) => {
                self.scenario = merge_table(&self.scenario, &single).map_err(|e| rename(e, key))?
            }
            (Some("train"), _, _) | (None, false, true) => {
                self.train = merge_table(&self.train, &single).map_err(|e| rename(e, key))?
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }
}

fn rename(err: Error, key: &str) -> Error {
    match err {
        Error::Config { message, .. } => Error::config(key, message),
        other => other,
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn to_table<T: Serialize>(value: &T) -> toml::Table {
    match toml::Value::try_from(value).expect("configs always serialize") {
        toml::Value::Table(t) => t,
        _ => unreachable!("config structs serialize to tables"),
    }
}

fn field_names<T: Serialize + Default>(_: &T) -> Vec<String> {
    // Optional fields that are unset are skipped by the serializer, so list
    // names from a value with every option populated.
    let mut names: Vec<String> = to_table(&T::default()).keys().cloned().collect();
    names.push("trend_gamma".to_string());
    names
}

/// Overlays `overrides` onto `base`, naming the first key that is unknown or
/// fails to deserialize.
fn merge_table<T>(base: &T, overrides: &toml::Table) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let known = field_names(base);
    let base_table = to_table(base);
    for key in overrides.keys() {
        if !known.contains(key) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
    }
    for (key, value) in overrides {
        let mut probe = base_table.clone();
        probe.insert(key.clone(), value.clone());
        if let Err(e) = probe.try_into::<T>() {
            return Err(Error::config(key.clone(), e.to_string().trim().to_string()));
        }
    }
    let mut merged = base_table;
    for (key, value) in overrides {
        merged.insert(key.clone(), value.clone());
    }
    merged
        .try_into::<T>()
        .map_err(|e| Error::config("<table>", e.to_string()))
}
