//! Two-firm Cournot competition with unknown demand parameters.
//!
//! The market price is `p = α^s - β^s (q_1 + q_2) + ε` with `ε ~ N(0, σ²)`.
//! Firm payoffs are `c_i = q_i · p`, so the pair (total quantity, price) is a
//! sufficient statistic and the observation channel carries the price alone.

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
pub struct CournotConfig {
    /// `(α, β)` per parameter.
    pub params: Vec<(f64, f64)>,
    pub labels: Vec<String>,
    pub true_index: usize,
    /// Variance of the price noise (shared by all parameters).
    pub noise_variance: f64,
    /// Production levels live in `[0, strategy_upper]`.
    pub strategy_upper: f64,
}

impl Default for CournotConfig {
    fn default() -> Self {
        Self {
            params: vec![(2.0, 1.0), (4.0, 3.0)],
            labels: vec!["s1".into(), "s2".into()],
            true_index: 0,
            noise_variance: 0.5,
            strategy_upper: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CournotGame {
    cfg: CournotConfig,
    params: ParameterSet,
    space: StrategySpace,
}

impl CournotGame {
    pub fn from_overrides(v: &Value) -> Result<Self> {
        Self::new(super::parse_overrides(v)?)
    }

    pub fn new(cfg: CournotConfig) -> Result<Self> {
        if cfg.params.len() != cfg.labels.len() {
            return Err(Error::Config("cournot: params and labels lengths differ".into()));
        }
        if cfg.params.iter().any(|(_, b)| *b <= 0.0) {
            return Err(Error::Config("cournot: slopes β must be positive".into()));
        }
        if !(cfg.noise_variance > 0.0) {
            return Err(Error::Config("cournot: noise variance must be positive".into()));
        }
        let params = ParameterSet::new(cfg.labels.clone(), cfg.true_index)?;
        let space = StrategySpace::new(vec![
            PlayerSpace::scalar_box(0.0, cfg.strategy_upper),
            PlayerSpace::scalar_box(0.0, cfg.strategy_upper),
        ])?;
        Ok(Self { cfg, params, space })
    }

    fn total(at: &ChannelPoint) -> f64 {
        match at {
            ChannelPoint::Strategies(q) => q.scalar(0) + q.scalar(1),
            ChannelPoint::Actions(_) => unreachable!("cournot has continuous strategies"),
        }
    }

    fn mixed_coeffs(&self, theta: &Belief) -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for (s, (alpha, beta)) in self.cfg.params.iter().enumerate() {
            let p = theta.prob(s);
            a += p * alpha;
            b += p * beta;
        }
        (a, b)
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(0.0, self.cfg.strategy_upper)
    }
}

impl GameModel for CournotGame {
    fn id(&self) -> &str {
        "cournot"
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
            has_potential: true,
            payoff_concave_in_own_strategy: true,
        }
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn observation_mean(&self, s: usize, at: &ChannelPoint) -> Vec<f64> {
        let (alpha, beta) = self.cfg.params[s];
        vec![alpha - beta * Self::total(at)]
    }

    fn observation_variances(&self, _s: usize) -> Vec<f64> {
        vec![self.cfg.noise_variance]
    }

    fn mean_payoff(&self, s: usize, q: &StrategyProfile) -> Vec<f64> {
        let price = self.observation_mean(s, &ChannelPoint::Strategies(q.clone()))[0];
        vec![q.scalar(0) * price, q.scalar(1) * price]
    }

    fn equilibrium_selection(&self, theta: &Belief) -> Option<StrategyProfile> {
        let (a, b) = self.mixed_coeffs(theta);
        let g = self.clamp(a / (3.0 * b));
        Some(StrategyProfile::from_scalars(&[g, g]))
    }

    fn equilibrium_set(&self, theta: &Belief) -> Option<EqSet> {
        self.equilibrium_selection(theta).map(EqSet::Point)
    }

    fn best_response(&self, theta: &Belief, q: &StrategyProfile, i: usize) -> Option<(f64, f64)> {
        let (a, b) = self.mixed_coeffs(theta);
        let opp = q.scalar(1 - i);
        let h = self.clamp((a - b * opp) / (2.0 * b));
        Some((h, h))
    }

    fn potential(&self, s: usize, q: &StrategyProfile) -> Option<f64> {
        let (alpha, beta) = self.cfg.params[s];
        let (q1, q2) = (q.scalar(0), q.scalar(1));
        Some(alpha * (q1 + q2) - beta * (q1 * q1 + q2 * q2) - beta * q1 * q2)
    }
}

impl PointParamGame for CournotGame {
    fn point_dim(&self) -> usize {
        2
    }

    fn point_observation_mean(&self, s: &[f64], at: &ChannelPoint) -> Vec<f64> {
        vec![s[0] - s[1] * Self::total(at)]
    }

    fn point_observation_variances(&self, _s: &[f64]) -> Vec<f64> {
        vec![self.cfg.noise_variance]
    }

    fn point_equilibrium(&self, s: &[f64]) -> StrategyProfile {
        let g = self.clamp(s[0] / (3.0 * s[1]));
        StrategyProfile::from_scalars(&[g, g])
    }

    fn point_best_response(&self, s: &[f64], q: &StrategyProfile, i: usize) -> f64 {
        let opp = q.scalar(1 - i);
        self.clamp((s[0] - s[1] * opp) / (2.0 * s[1]))
    }

    fn ols_regressor(&self, q: &StrategyProfile) -> Vec<f64> {
        vec![q.scalar(0) + q.scalar(1)]
    }

    fn point_from_ols(&self, coeffs: &[f64]) -> Vec<f64> {
        // price = -β·q̃ + α  =>  slope -β, intercept α
        vec![coeffs[1], -coeffs[0]]
    }
}
