//! Concrete game models and the name-keyed registry the CLI selects from.
//!
//! Every game is constructed from an optional JSON override object so that
//! each constant (parameter values, noise variances, boxes, selection
//! anchors) can be changed from a config file without touching code.

use std::sync::Arc;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{ChannelPoint, GameModel, StrategyProfile};

mod cournot;
mod finite_matrix;
mod increasing_penalty;
mod public_good;
mod safe_margin;

pub use cournot::CournotGame;
pub use finite_matrix::FiniteMatrixGame;
pub use increasing_penalty::IncreasingPenaltyGame;
pub use public_good::PublicGoodGame;
pub use safe_margin::SafeMarginGame;

type GameBuilder = fn(&Value) -> Result<Arc<dyn GameModel>>;
type PointBuilder = fn(&Value) -> Result<Arc<dyn PointParamGame>>;

struct RegistryEntry {
    id: &'static str,
    build: GameBuilder,
    build_point: Option<PointBuilder>,
}

static REGISTRY: &[RegistryEntry] = &[
    RegistryEntry {
        id: "cournot",
        build: |v| Ok(Arc::new(CournotGame::from_overrides(v)?) as Arc<dyn GameModel>),
        build_point: Some(|v| Ok(Arc::new(CournotGame::from_overrides(v)?) as Arc<dyn PointParamGame>)),
    },
    RegistryEntry {
        id: "coordination_safe_margin",
        build: |v| Ok(Arc::new(SafeMarginGame::from_overrides(v)?) as Arc<dyn GameModel>),
        build_point: None,
    },
    RegistryEntry {
        id: "public_good",
        build: |v| Ok(Arc::new(PublicGoodGame::from_overrides(v)?) as Arc<dyn GameModel>),
        build_point: Some(|v| {
            Ok(Arc::new(PublicGoodGame::from_overrides(v)?) as Arc<dyn PointParamGame>)
        }),
    },
    RegistryEntry {
        id: "coordination_increasing_penalty",
        build: |v| Ok(Arc::new(IncreasingPenaltyGame::from_overrides(v)?) as Arc<dyn GameModel>),
        build_point: None,
    },
    RegistryEntry {
        id: "finite_matrix",
        build: |v| Ok(Arc::new(FiniteMatrixGame::from_overrides(v)?) as Arc<dyn GameModel>),
        build_point: None,
    },
];

/// Registered game ids, in registration order.
pub fn game_ids() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.id).collect()
}

/// Builds a game by id. `overrides` is a JSON object (or `null`) whose fields
/// replace the game's default constants.
pub fn build(id: &str, overrides: &Value) -> Result<Arc<dyn GameModel>> {
    let entry = REGISTRY
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::UnknownGame(id.to_string()))?;
    (entry.build)(overrides)
}

/// Builds the continuous-parameter view of a game (for MAP and OLS modes).
pub fn build_point(id: &str, overrides: &Value) -> Result<Arc<dyn PointParamGame>> {
    let entry = REGISTRY
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::UnknownGame(id.to_string()))?;
    let builder = entry.build_point.ok_or(Error::MissingCapability {
        game: id.to_string(),
        capability: "a continuous-parameter view (MAP/OLS modes)",
    })?;
    (builder)(overrides)
}

/// Continuous-parameter view of a game: the same channel, equilibrium and
/// best-response structure evaluated at a raw parameter point instead of a
/// belief over the finite set. Drives the MAP and OLS learning modes.
pub trait PointParamGame: GameModel {
    /// Dimension of the continuous parameter vector.
    fn point_dim(&self) -> usize;

    fn point_observation_mean(&self, s: &[f64], at: &ChannelPoint) -> Vec<f64>;

    fn point_observation_variances(&self, s: &[f64]) -> Vec<f64>;

    fn point_equilibrium(&self, s: &[f64]) -> StrategyProfile;

    fn point_best_response(&self, s: &[f64], q: &StrategyProfile, i: usize) -> f64;

    /// Regressor (without the intercept) for the affine observation model
    /// used by OLS.
    fn ols_regressor(&self, q: &StrategyProfile) -> Vec<f64>;

    /// Maps OLS coefficients `(slopes..., intercept)` back to a parameter
    /// point.
    fn point_from_ols(&self, coeffs: &[f64]) -> Vec<f64>;
}

/// Deserializes a config struct from a JSON override object, treating `null`
/// as an empty object.
pub(crate) fn parse_overrides<T: serde::de::DeserializeOwned + Default>(v: &Value) -> Result<T> {
    match v {
        Value::Null => Ok(T::default()),
        Value::Object(_) => {
            serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("game overrides: {e}")))
        }
        other => Err(Error::Config(format!("game overrides must be an object, got {other}"))),
    }
}

/// Expected payoff of player `i` under belief `theta` at profile `q`.
pub fn expected_payoff(
    game: &dyn GameModel,
    theta: &crate::model::Belief,
    q: &StrategyProfile,
    i: usize,
) -> f64 {
    (0..theta.len())
        .map(|s| {
            let p = theta.prob(s);
            if p == 0.0 {
                0.0
            } else {
                p * game.mean_payoff(s, q)[i]
            }
        })
        .sum()
}

/// Maximizes a concave scalar function on `[lo, hi]` by golden-section
/// search.
pub(crate) fn golden_section_max(lo: f64, hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
