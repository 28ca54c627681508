//! Experiment configuration: a single JSON document selecting a game, a
//! learning mode, initial state, stepsize schedule, and run controls. Named
//! presets reproduce the built-in example setups; explicit top-level fields
//! override preset values.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{ConvergenceCriterion, LearnMode, ScheduleSpec};
use crate::error::{Error, Result};

/// Full learning mode: which estimator drives the run and which strategy
/// update it feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    #[serde(rename = "eq")]
    Eq,
    #[serde(rename = "br")]
    Br,
    #[serde(rename = "map-eq")]
    MapEq,
    #[serde(rename = "map-br")]
    MapBr,
    #[serde(rename = "ols-eq")]
    OlsEq,
    #[serde(rename = "ols-br")]
    OlsBr,
}

impl RunMode {
    pub fn learn_mode(&self) -> LearnMode {
        match self {
            RunMode::Eq | RunMode::MapEq | RunMode::OlsEq => LearnMode::Eq,
            RunMode::Br | RunMode::MapBr | RunMode::OlsBr => LearnMode::Br,
        }
    }

    pub fn uses_belief(&self) -> bool {
        matches!(self, RunMode::Eq | RunMode::Br)
    }

    pub fn uses_map(&self) -> bool {
        matches!(self, RunMode::MapEq | RunMode::MapBr)
    }

    pub fn uses_ols(&self) -> bool {
        matches!(self, RunMode::OlsEq | RunMode::OlsBr)
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunMode::Eq => "eq",
            RunMode::Br => "br",
            RunMode::MapEq => "map-eq",
            RunMode::MapBr => "map-br",
            RunMode::OlsEq => "ols-eq",
            RunMode::OlsBr => "ols-br",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameSelector {
    pub id: String,
    /// Per-game constant overrides, passed to the registry builder.
    #[serde(default)]
    pub overrides: Value,
}

/// Grid for MAP modes over a continuous parameter box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapGridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: Vec<f64>,
}

impl MapGridConfig {
    pub fn build(&self) -> Result<crate::belief::MapGrid> {
        crate::belief::MapGrid::new(self.lower.clone(), self.upper.clone(), self.step.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub game: GameSelector,
    pub mode: RunMode,
    /// Initial belief as probabilities; must be strictly positive everywhere.
    pub initial_belief: Vec<f64>,
    /// Initial strategy profile, one vector per player.
    pub initial_strategy: Vec<Vec<f64>>,
    pub schedule: ScheduleSpec,
    pub max_steps: usize,
    #[serde(default)]
    pub convergence: ConvergenceCriterion,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Belief-simplex resolution for the fixed-point enumeration attached to
    /// simulation summaries.
    #[serde(default = "default_fp_grid")]
    pub fixed_point_grid: f64,
    #[serde(default = "default_fp_dedup")]
    pub fixed_point_dedup: f64,
    /// Required for MAP modes.
    #[serde(default)]
    pub map_grid: Option<MapGridConfig>,
    /// Optional initial parameter estimate for OLS modes.
    #[serde(default)]
    pub ols_initial: Option<Vec<f64>>,
    /// Default output directory; the CLI `--out` flag overrides it.
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_runs() -> usize {
    1
}

fn default_fp_grid() -> f64 {
    0.01
}

fn default_fp_dedup() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.initial_belief.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Config(
                "initial belief must be strictly positive on every parameter".into(),
            ));
        }
        if self.mode.uses_map() && self.map_grid.is_none() {
            return Err(Error::Config("MAP modes require a `map_grid`".into()));
        }
        Ok(())
    }
}

/// Built-in presets reproducing the example setups. Explicit top-level keys
/// in the user document replace preset values; `game.overrides` merge on top
/// of the preset's.
pub fn preset(name: &str) -> Option<Value> {
    let third = 1.0 / 3.0;
    let v = match name {
        // Cournot, equilibrium updates, full adoption each step.
        "example1" => json!({
            "game": {"id": "cournot"},
            "mode": "eq",
            "initial_belief": [0.1, 0.9],
            "initial_strategy": [[0.25], [0.25]],
            "schedule": {"kind": "constant", "value": 1.0},
            "max_steps": 2000,
            "runs": 200,
            "master_seed": 20240601,
        }),
        // Coordination with safe margin, equilibrium updates, players
        // alternating full adoption.
        "example2" => json!({
            "game": {"id": "coordination_safe_margin"},
            "mode": "eq",
            "initial_belief": [third, third, third],
            "initial_strategy": [[1.0], [2.0]],
            "schedule": {"kind": "alternating"},
            "max_steps": 5000,
            "runs": 100,
            "master_seed": 20240602,
        }),
        // Public good, equilibrium updates, two-phase harmonic stepsizes.
        "example3" => json!({
            "game": {"id": "public_good"},
            "mode": "eq",
            "initial_belief": [0.5, 0.4, 0.1],
            "initial_strategy": [[1.0], [0.0]],
            "schedule": {"kind": "phase_shifted_harmonic"},
            "max_steps": 30000,
            "runs": 100,
            "master_seed": 20240603,
        }),
        // Cournot, best-response updates, harmonic stepsizes. The tighter
        // window tolerance keeps detection from firing while the 1/t updates
        // are still closing the strategy gap.
        "example4" => json!({
            "game": {"id": "cournot"},
            "mode": "br",
            "initial_belief": [0.1, 0.9],
            "initial_strategy": [[0.25], [0.25]],
            "schedule": {"kind": "harmonic"},
            "max_steps": 400000,
            "convergence": {"window": 50, "eps_theta": 1e-7, "eps_q": 1e-7},
            "runs": 200,
            "master_seed": 20240604,
        }),
        // Coordination with safe margin, best-response updates.
        "example5" => json!({
            "game": {"id": "coordination_safe_margin"},
            "mode": "br",
            "initial_belief": [third, third, third],
            "initial_strategy": [[1.0], [2.0]],
            "schedule": {"kind": "alternating_harmonic"},
            "max_steps": 30000,
            "runs": 100,
            "master_seed": 20240605,
        }),
        // Public good, best-response updates, two-phase harmonic stepsizes.
        "example6" => json!({
            "game": {"id": "public_good"},
            "mode": "br",
            "initial_belief": [0.5, 0.4, 0.1],
            "initial_strategy": [[1.0], [0.0]],
            "schedule": {"kind": "phase_shifted_harmonic"},
            "max_steps": 30000,
            "runs": 100,
            "master_seed": 20240606,
        }),
        // Coordination with increasing penalty, best-response updates.
        "example7" => json!({
            "game": {"id": "coordination_increasing_penalty"},
            "mode": "br",
            "initial_belief": [0.5, 0.5],
            "initial_strategy": [[0.3], [3.0]],
            "schedule": {"kind": "harmonic"},
            "max_steps": 30000,
            "runs": 100,
            "master_seed": 20240607,
        }),
        _ => return None,
    };
    Some(v)
}

pub fn preset_names() -> Vec<&'static str> {
    vec!["example1", "example2", "example3", "example4", "example5", "example6", "example7"]
}

/// Parses a config document, expanding an optional `"preset"` field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut doc: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    let merged = if let Some(name) = obj.remove("preset") {
        let name = name
            .as_str()
            .ok_or_else(|| Error::Config("preset must be a string".into()))?
            .to_string();
        let mut base = preset(&name)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
        let base_obj = base.as_object_mut().unwrap();
        for (k, v) in obj.iter() {
            if k == "game" {
                // merge game id and overrides separately so an override does
                // not discard the preset's game id
                let base_game = base_obj.entry("game").or_insert_with(|| json!({}));
                if let (Some(bg), Some(ug)) = (base_game.as_object_mut(), v.as_object()) {
                    for (gk, gv) in ug {
                        bg.insert(gk.clone(), gv.clone());
                    }
                    continue;
                }
            }
            base_obj.insert(k.clone(), v.clone());
        }
        base
    } else {
        doc
    };
    let config: ExperimentConfig =
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("{e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}
