//! Coordination game with an increasing penalty.
//!
//! Strategy gaps below 1 cost `(q_1 - q_2)²`; each unit of gap beyond 1 is
//! penalized at rate `s`, costing `(1 + s(|q_1 - q_2| - 1))²`. Player 1 pays
//! `q_1` on top, player 2 earns `q_2`. For every belief the equilibrium set
//! is the line `q_2 - q_1 = 1/2`, inside the penalty-free region, which is
//! why fixed points of the learning dynamics here are complete-information
//! equilibria even when the belief stays mixed.
//!
//! Best responses have no closed form and are found by golden-section search
//! on the concave expected payoff.

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::games::{expected_payoff, golden_section_max};
use crate::model::{
    Belief, Capabilities, ChannelPoint, EqSet, GameModel, ParameterSet, PlayerSpace,
    StrategyProfile, StrategySpace,
};

const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncreasingPenaltyConfig {
    pub penalties: Vec<f64>,
    pub labels: Vec<String>,
    pub true_index: usize,
    pub noise_variance: f64,
    pub boxes: Vec<(f64, f64)>,
    /// Equilibrium selection: `g_1(θ)` is this value clamped to the feasible
    /// segment of the `q_2 - q_1 = 1/2` line.
    pub anchor: f64,
}

impl Default for IncreasingPenaltyConfig {
    fn default() -> Self {
        Self {
            penalties: vec![2.0, 4.0],
            labels: vec!["s1".into(), "s2".into()],
            true_index: 0,
            noise_variance: 1.0,
            boxes: vec![(0.0, 2.0), (1.0, 4.0)],
            anchor: 0.85,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IncreasingPenaltyGame {
    cfg: IncreasingPenaltyConfig,
    params: ParameterSet,
    space: StrategySpace,
}

impl IncreasingPenaltyGame {
    pub fn from_overrides(v: &Value) -> Result<Self> {
        Self::new(super::parse_overrides(v)?)
    }

    pub fn new(cfg: IncreasingPenaltyConfig) -> Result<Self> {
        if cfg.penalties.len() != cfg.labels.len() {
            return Err(Error::Config("increasing_penalty: penalties/labels lengths differ".into()));
        }
        if cfg.boxes.len() != 2 {
            return Err(Error::Config("increasing_penalty: exactly two players".into()));
        }
        if !(cfg.noise_variance > 0.0) {
            return Err(Error::Config("increasing_penalty: noise variance must be positive".into()));
        }
        // The equilibrium line sits at gap 1/2 only while the marginal
        // penalty beyond the kink exceeds the linear terms.
        if cfg.penalties.iter().any(|s| *s <= 0.5) {
            return Err(Error::Config("increasing_penalty: penalty rates must exceed 1/2".into()));
        }
        let params = ParameterSet::new(cfg.labels.clone(), cfg.true_index)?;
        let space = StrategySpace::new(
            cfg.boxes.iter().map(|(l, u)| PlayerSpace::scalar_box(*l, *u)).collect(),
        )?;
        Ok(Self { cfg, params, space })
    }

    fn gap_cost(&self, s: usize, gap: f64) -> f64 {
        let d = gap.abs();
        if d <= 1.0 {
            d * d
        } else {
            let c = 1.0 + self.cfg.penalties[s] * (d - 1.0);
            c * c
        }
    }

    fn player_box(&self, i: usize) -> (f64, f64) {
        self.cfg.boxes[i]
    }
}

impl GameModel for IncreasingPenaltyGame {
    fn id(&self) -> &str {
        "coordination_increasing_penalty"
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
        2
    }

    fn observation_mean(&self, s: usize, at: &ChannelPoint) -> Vec<f64> {
        let q = match at {
            ChannelPoint::Strategies(q) => q,
            ChannelPoint::Actions(_) => unreachable!("continuous strategies"),
        };
        self.mean_payoff(s, q)
    }

    fn observation_variances(&self, _s: usize) -> Vec<f64> {
        vec![self.cfg.noise_variance; 2]
    }

    fn mean_payoff(&self, s: usize, q: &StrategyProfile) -> Vec<f64> {
        let (q1, q2) = (q.scalar(0), q.scalar(1));
        let cost = self.gap_cost(s, q1 - q2);
        vec![-cost - q1, -cost + q2]
    }

    fn equilibrium_selection(&self, _theta: &Belief) -> Option<StrategyProfile> {
        let gap = 0.5;
        let (l1, u1) = self.player_box(0);
        let (l2, u2) = self.player_box(1);
        let q1 = self.cfg.anchor.clamp(l1.max(l2 - gap), u1.min(u2 - gap));
        Some(StrategyProfile::from_scalars(&[q1, q1 + gap]))
    }

    fn equilibrium_set(&self, _theta: &Belief) -> Option<EqSet> {
        Some(EqSet::OffsetLine { offset: 0.5 })
    }

    fn best_response(&self, theta: &Belief, q: &StrategyProfile, i: usize) -> Option<(f64, f64)> {
        let (lo, hi) = self.player_box(i);
        let h = golden_section_max(lo, hi, GOLDEN_TOL, |x| {
            let mut trial = q.clone();
            trial.player_mut(i)[0] = x;
            expected_payoff(self, theta, &trial, i)
        });
        Some((h, h))
    }

    fn potential(&self, s: usize, q: &StrategyProfile) -> Option<f64> {
        let (q1, q2) = (q.scalar(0), q.scalar(1));
        Some(-self.gap_cost(s, q1 - q2) - q1 + q2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> IncreasingPenaltyGame {
        IncreasingPenaltyGame::new(IncreasingPenaltyConfig::default()).unwrap()
    }

    #[test]
    fn equilibrium_line_is_half_gap_for_any_belief() {
        let g = game();
        for probs in [[1.0, 0.0], [0.5, 0.5], [0.1, 0.9]] {
            let theta = Belief::from_probs(&probs).unwrap();
            let e = g.equilibrium_selection(&theta).unwrap();
            assert!((e.scalar(1) - e.scalar(0) - 0.5).abs() < 1e-12);
            // the selection must be a mutual best response
            for i in 0..2 {
                let (h, _) = g.best_response(&theta, &e, i).unwrap();
                assert!((h - e.scalar(i)).abs() < 1e-6, "player {i}: {h} vs {}", e.scalar(i));
            }
        }
    }

    #[test]
    fn anchored_selection() {
        let g = game();
        let theta = Belief::from_probs(&[0.5, 0.5]).unwrap();
        let e = g.equilibrium_selection(&theta).unwrap();
        assert!((e.scalar(0) - 0.85).abs() < 1e-12);
        assert!((e.scalar(1) - 1.35).abs() < 1e-12);
    }

    #[test]
    fn cost_continuous_at_kink() {
        let g = game();
        for s in 0..2 {
            let below = g.gap_cost(s, 1.0 - 1e-12);
            let above = g.gap_cost(s, 1.0 + 1e-12);
            assert!((below - above).abs() < 1e-9);
        }
    }
}
