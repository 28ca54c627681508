//! Two-player public good investment.
//!
//! The unit return is `r = α^s + q_1 + q_2 + ε^s` with parameter-dependent
//! noise variance, and player payoffs are `c_i = q_i (α^s - 2 q_i + q_{-i} +
//! ε^s)`. The pair (total investment, unit return) is a sufficient statistic,
//! so the channel carries the return alone. The game is dominance solvable:
//! iterated best-response interval elimination contracts to `g(θ) = ᾱ(θ)/3`.

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::games::PointParamGame;
use crate::model::{
    Belief, Capabilities, ChannelPoint, EqSet, GameModel, ParameterSet, PlayerSpace,
    StrategyProfile, StrategySpace,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PublicGoodConfig {
    pub alphas: Vec<f64>,
    pub variances: Vec<f64>,
    pub labels: Vec<String>,
    pub true_index: usize,
    pub strategy_upper: f64,
}

impl Default for PublicGoodConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 1.0, 2.0],
            variances: vec![3.0, 5.0, 10.0],
            labels: vec!["l".into(), "m".into(), "h".into()],
            true_index: 1,
            strategy_upper: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PublicGoodGame {
    cfg: PublicGoodConfig,
    params: ParameterSet,
    space: StrategySpace,
}

impl PublicGoodGame {
    pub fn from_overrides(v: &Value) -> Result<Self> {
        Self::new(super::parse_overrides(v)?)
    }

    pub fn new(cfg: PublicGoodConfig) -> Result<Self> {
        if cfg.alphas.len() != cfg.labels.len() || cfg.variances.len() != cfg.labels.len() {
            return Err(Error::Config("public_good: alphas/variances/labels lengths differ".into()));
        }
        if cfg.variances.iter().any(|v| *v <= 0.0) {
            return Err(Error::Config("public_good: variances must be positive".into()));
        }
        let params = ParameterSet::new(cfg.labels.clone(), cfg.true_index)?;
        let space = StrategySpace::new(vec![
            PlayerSpace::scalar_box(0.0, cfg.strategy_upper),
            PlayerSpace::scalar_box(0.0, cfg.strategy_upper),
        ])?;
        Ok(Self { cfg, params, space })
    }

    fn alpha_bar(&self, theta: &Belief) -> f64 {
        self.cfg.alphas.iter().enumerate().map(|(s, a)| theta.prob(s) * a).sum()
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(0.0, self.cfg.strategy_upper)
    }
}

impl GameModel for PublicGoodGame {
    fn id(&self) -> &str {
        "public_good"
    }

    fn num_players(&self) -> usize {
        2
    }

    fn space(&self) -> &StrategySpace {
        &self.space
    }

    fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_equilibrium_map: true,
            has_best_response_map: true,
            has_potential: false,
            payoff_concave_in_own_strategy: true,
        }
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn observation_mean(&self, s: usize, at: &ChannelPoint) -> Vec<f64> {
        let q = match at {
            ChannelPoint::Strategies(q) => q,
            ChannelPoint::Actions(_) => unreachable!("continuous strategies"),
        };
        vec![self.cfg.alphas[s] + q.scalar(0) + q.scalar(1)]
    }

    fn observation_variances(&self, s: usize) -> Vec<f64> {
        vec![self.cfg.variances[s]]
    }

    fn mean_payoff(&self, s: usize, q: &StrategyProfile) -> Vec<f64> {
        let a = self.cfg.alphas[s];
        let (q1, q2) = (q.scalar(0), q.scalar(1));
        vec![q1 * (a - 2.0 * q1 + q2), q2 * (a - 2.0 * q2 + q1)]
    }

    fn equilibrium_selection(&self, theta: &Belief) -> Option<StrategyProfile> {
        let g = self.clamp(self.alpha_bar(theta) / 3.0);
        Some(StrategyProfile::from_scalars(&[g, g]))
    }

    fn equilibrium_set(&self, theta: &Belief) -> Option<EqSet> {
        self.equilibrium_selection(theta).map(EqSet::Point)
    }

    fn best_response(&self, theta: &Belief, q: &StrategyProfile, i: usize) -> Option<(f64, f64)> {
        let h = self.clamp((self.alpha_bar(theta) + q.scalar(1 - i)) / 4.0);
        Some((h, h))
    }
}

impl PointParamGame for PublicGoodGame {
    fn point_dim(&self) -> usize {
        1
    }

    fn point_observation_mean(&self, s: &[f64], at: &ChannelPoint) -> Vec<f64> {
        let q = match at {
            ChannelPoint::Strategies(q) => q,
            ChannelPoint::Actions(_) => unreachable!("continuous strategies"),
        };
        vec![s[0] + q.scalar(0) + q.scalar(1)]
    }

    fn point_observation_variances(&self, _s: &[f64]) -> Vec<f64> {
        vec![self.cfg.variances[self.cfg.true_index]]
    }

    fn point_equilibrium(&self, s: &[f64]) -> StrategyProfile {
        let g = self.clamp(s[0] / 3.0);
        StrategyProfile::from_scalars(&[g, g])
    }

    fn point_best_response(&self, s: &[f64], q: &StrategyProfile, i: usize) -> f64 {
        self.clamp((s[0] + q.scalar(1 - i)) / 4.0)
    }

    fn ols_regressor(&self, q: &StrategyProfile) -> Vec<f64> {
        vec![q.scalar(0) + q.scalar(1)]
    }

    fn point_from_ols(&self, coeffs: &[f64]) -> Vec<f64> {
        // r = 1·q̃ + α: intercept is the return level
        vec![coeffs[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> PublicGoodGame {
        PublicGoodGame::new(PublicGoodConfig::default()).unwrap()
    }

    #[test]
    fn return_mean_plug_in() {
        let g = game();
        let q = StrategyProfile::from_scalars(&[1.0 / 3.0, 1.0 / 3.0]);
        let at = ChannelPoint::Strategies(q);
        assert!((g.observation_mean(1, &at)[0] - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_and_best_response_fixed_point() {
        let g = game();
        let complete = Belief::from_probs(&[0.0, 1.0, 0.0]).unwrap();
        let e = g.equilibrium_selection(&complete).unwrap();
        assert!((e.scalar(0) - 1.0 / 3.0).abs() < 1e-15);
        let (h, _) = g.best_response(&complete, &e, 0).unwrap();
        assert!((h - 1.0 / 3.0).abs() < 1e-15);
    }
}
