//! Coordination game with a safe margin.
//!
//! Both players pay `2(max(|q_1 - q_2|, s) - s)²` when their strategy gap
//! exceeds the unknown margin `s`; player 1 additionally pays `q_1` and
//! player 2 earns `q_2`. The full payoff pair is observed with independent
//! `N(0, σ²)` noise per player.
//!
//! For every belief the equilibrium set is a line `q_2 - q_1 = Δ*(θ)`, where
//! `Δ*(θ)` solves `Σ_s θ(s)(Δ - s)^+ = 1/4`. With the canonical margins
//! {0, 0.5, 1.5} this reduces to the three-branch family tested in
//! `branch_formula_matches_generic_solve`.

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{
    Belief, Capabilities, ChannelPoint, EqSet, GameModel, ParameterSet, PlayerSpace,
    StrategyProfile, StrategySpace,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafeMarginConfig {
    /// Margin value per parameter.
    pub margins: Vec<f64>,
    pub labels: Vec<String>,
    pub true_index: usize,
    /// Per-player payoff noise variance.
    pub noise_variance: f64,
    /// `[lower, upper]` per player.
    pub boxes: Vec<(f64, f64)>,
    /// Equilibrium selection: `g_1(θ)` is this value clamped to the feasible
    /// segment of the equilibrium line.
    pub anchor: f64,
}

impl Default for SafeMarginConfig {
    fn default() -> Self {
        Self {
            margins: vec![0.0, 0.5, 1.5],
            labels: vec!["s1".into(), "s2".into(), "s3".into()],
            true_index: 2,
            noise_variance: 2.0,
            boxes: vec![(0.0, 2.0), (1.0, 4.0)],
            anchor: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SafeMarginGame {
    cfg: SafeMarginConfig,
    params: ParameterSet,
    space: StrategySpace,
}

impl SafeMarginGame {
    pub fn from_overrides(v: &Value) -> Result<Self> {
        Self::new(super::parse_overrides(v)?)
    }

    pub fn new(cfg: SafeMarginConfig) -> Result<Self> {
        if cfg.margins.len() != cfg.labels.len() {
            return Err(Error::Config("safe_margin: margins and labels lengths differ".into()));
        }
        if cfg.boxes.len() != 2 {
            return Err(Error::Config("safe_margin: exactly two players".into()));
        }
        if !(cfg.noise_variance > 0.0) {
            return Err(Error::Config("safe_margin: noise variance must be positive".into()));
        }
        let params = ParameterSet::new(cfg.labels.clone(), cfg.true_index)?;
        let space = StrategySpace::new(
            cfg.boxes.iter().map(|(l, u)| PlayerSpace::scalar_box(*l, *u)).collect(),
        )?;
        Ok(Self { cfg, params, space })
    }

    fn gap_cost(&self, s: usize, gap: f64) -> f64 {
        let m = self.cfg.margins[s];
        let excess = (gap.abs().max(m)) - m;
        2.0 * excess * excess
    }

    /// The equilibrium gap `Δ*(θ)`: unique solution of
    /// `Σ_s θ(s)(Δ - s)^+ = 1/4` (piecewise-linear, nondecreasing in Δ).
    pub fn equilibrium_gap(&self, theta: &Belief) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self
            .cfg
            .margins
            .iter()
            .zip(theta.probs())
            .map(|(m, p)| (*m, p))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let target = 0.25;
        let mut weight = 0.0;
        let mut bias = 0.0;
        let mut delta = f64::NAN;
        for j in 0..pairs.len() {
            weight += pairs[j].1;
            bias += pairs[j].1 * pairs[j].0;
            if weight <= 0.0 {
                continue;
            }
            delta = (target + bias) / weight;
            let seg_hi = pairs.get(j + 1).map(|x| x.0).unwrap_or(f64::INFINITY);
            if delta >= pairs[j].0 - 1e-12 && delta <= seg_hi {
                return delta;
            }
        }
        // The last segment has weight 1, so its candidate always solves the
        // equation for a normalized belief.
        delta
    }

    fn player_box(&self, i: usize) -> (f64, f64) {
        self.cfg.boxes[i]
    }
}

impl GameModel for SafeMarginGame {
    fn id(&self) -> &str {
        "coordination_safe_margin"
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
        let cost = self.gap_cost(s, q2 - q1);
        vec![-cost - q1, -cost + q2]
    }

    fn equilibrium_selection(&self, theta: &Belief) -> Option<StrategyProfile> {
        let gap = self.equilibrium_gap(theta);
        let (l1, u1) = self.player_box(0);
        let (l2, u2) = self.player_box(1);
        let q1 = self.cfg.anchor.clamp(l1.max(l2 - gap), u1.min(u2 - gap));
        Some(StrategyProfile::from_scalars(&[q1, q1 + gap]))
    }

    fn equilibrium_set(&self, theta: &Belief) -> Option<EqSet> {
        Some(EqSet::OffsetLine { offset: self.equilibrium_gap(theta) })
    }

    fn best_response(&self, theta: &Belief, q: &StrategyProfile, i: usize) -> Option<(f64, f64)> {
        let gap = self.equilibrium_gap(theta);
        let (lo, hi) = self.player_box(i);
        let h = if i == 0 { q.scalar(1) - gap } else { q.scalar(0) + gap };
        let h = h.clamp(lo, hi);
        Some((h, h))
    }

    fn potential(&self, s: usize, q: &StrategyProfile) -> Option<f64> {
        let (q1, q2) = (q.scalar(0), q.scalar(1));
        Some(-self.gap_cost(s, q2 - q1) - q1 + q2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> SafeMarginGame {
        SafeMarginGame::new(SafeMarginConfig::default()).unwrap()
    }

    /// The published three-branch form of the equilibrium line family for the
    /// canonical margins {0, 0.5, 1.5}.
    fn branch_gap(theta: &Belief) -> (usize, f64) {
        let (t1, t2, t3) = (theta.prob(0), theta.prob(1), theta.prob(2));
        if t2 + 3.0 * t3 > 2.5 {
            (1, (t2 + 3.0 * t3) / 2.0 + 0.25)
        } else if t1 < 0.5 {
            (2, (2.0 * t2 + 1.0) / (4.0 * (t1 + t2)))
        } else {
            (3, 1.0 / (4.0 * t1))
        }
    }

    #[test]
    fn gap_values_from_examples() {
        let g = game();
        let complete = Belief::from_probs(&[0.0, 0.0, 1.0]).unwrap();
        assert!((g.equilibrium_gap(&complete) - 1.75).abs() < 1e-15);
        let s1_only = Belief::from_probs(&[1.0, 0.0, 0.0]).unwrap();
        assert!((g.equilibrium_gap(&s1_only) - 0.25).abs() < 1e-15);
        let uniform = Belief::uniform(3);
        assert!((g.equilibrium_gap(&uniform) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn selection_uses_anchor_zero() {
        let g = game();
        let complete = Belief::from_probs(&[0.0, 0.0, 1.0]).unwrap();
        let e = g.equilibrium_selection(&complete).unwrap();
        assert_eq!(e.scalar(0), 0.0);
        assert!((e.scalar(1) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn best_response_first_branch() {
        let g = game();
        let complete = Belief::from_probs(&[0.0, 0.0, 1.0]).unwrap();
        let q = StrategyProfile::from_scalars(&[0.0, 2.0]);
        let (h, _) = g.best_response(&complete, &q, 0).unwrap();
        assert!((h - 0.25).abs() < 1e-15);
    }

    #[test]
    fn branch_predicates_partition_simplex_and_match_generic_solve() {
        use rand::{Rng, SeedableRng};
        let g = game();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let mut seen = [0usize; 3];
        let mut check = |theta: &Belief| {
            let (t1, t2, t3) = (theta.prob(0), theta.prob(1), theta.prob(2));
            let b1 = t2 + 3.0 * t3 > 2.5;
            let b2 = t1 < 0.5 && t2 + 3.0 * t3 <= 2.5;
            let b3 = t1 >= 0.5;
            assert_eq!(
                [b1, b2, b3].iter().filter(|b| **b).count(),
                1,
                "branch predicates must partition the simplex at {:?}",
                theta.probs()
            );
            let (branch, gap) = branch_gap(theta);
            seen[branch - 1] += 1;
            assert!(
                (g.equilibrium_gap(theta) - gap).abs() < 1e-10,
                "gap mismatch at {:?}",
                theta.probs()
            );
        };
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen::<f64>().max(1e-12)).collect();
            check(&Belief::from_probs(&raw).unwrap());
        }
        // Interior draws rarely reach branch 1; corners and near-corners do.
        check(&Belief::from_probs(&[0.0, 0.0, 1.0]).unwrap());
        check(&Belief::from_probs(&[0.01, 0.04, 0.95]).unwrap());
        assert!(seen.iter().all(|c| *c > 0), "all branches exercised: {seen:?}");
    }

    #[test]
    fn potential_value_plug_in() {
        let g = game();
        let q = StrategyProfile::from_scalars(&[0.0, 1.75]);
        let psi = g.potential(2, &q).unwrap();
        assert!((psi - 1.625).abs() < 1e-15);
    }
}
