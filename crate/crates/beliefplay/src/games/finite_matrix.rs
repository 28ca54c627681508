//! A finite-strategy matrix game with mixed strategies.
//!
//! Players draw actions from their mixed strategies; the payoff pair is
//! realized from a Gaussian whose mean depends on the realized action
//! profile and the parameter, and the belief update is keyed on that action
//! profile. Parameters are payoff-equivalent at a mixed profile when their
//! channels agree on every action profile in its support.
//!
//! The shipped instance is a 2x2 game whose payoff means differ between the
//! two parameters only at action profile (1, 1): mixed profiles avoiding
//! that cell cannot distinguish the parameters, which produces a fixed point
//! without complete information.

use rand::Rng;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{
    Capabilities, ChannelPoint, GameModel, ParameterSet, PlayerSpace, StrategyProfile,
    StrategySpace, SUPPORT_TOL,
};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiniteMatrixConfig {
    /// `means[s][n1][n2]` = per-player mean payoff pair at action profile
    /// `(n1, n2)` under parameter `s`.
    pub means: Vec<Vec<Vec<[f64; 2]>>>,
    pub labels: Vec<String>,
    pub true_index: usize,
    pub noise_variance: f64,
}

impl Default for FiniteMatrixConfig {
    fn default() -> Self {
        // Player 2 is indifferent between its actions while player 1 plays
        // action 0, so profiles mixing only on player 2's side are equilibria
        // whose support avoids the distinguishing cell (1, 1).
        let common = vec![
            vec![[1.0, 1.0], [0.0, 1.0]],
            vec![[0.0, 0.0], [0.0, 0.0]],
        ];
        let mut distinguishable = common.clone();
        distinguishable[1][1] = [1.0, 1.0];
        Self {
            means: vec![common, distinguishable],
            labels: vec!["s1".into(), "s2".into()],
            true_index: 0,
            noise_variance: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteMatrixGame {
    cfg: FiniteMatrixConfig,
    params: ParameterSet,
    space: StrategySpace,
    actions: Vec<usize>,
}

impl FiniteMatrixGame {
    pub fn from_overrides(v: &Value) -> Result<Self> {
        Self::new(super::parse_overrides(v)?)
    }

    pub fn new(cfg: FiniteMatrixConfig) -> Result<Self> {
        if cfg.means.len() != cfg.labels.len() || cfg.means.is_empty() {
            return Err(Error::Config("finite_matrix: means/labels lengths differ".into()));
        }
        let n1 = cfg.means[0].len();
        let n2 = cfg.means[0].first().map(|r| r.len()).unwrap_or(0);
        if n1 == 0 || n2 == 0 {
            return Err(Error::Config("finite_matrix: empty action sets".into()));
        }
        for table in &cfg.means {
            if table.len() != n1 || table.iter().any(|row| row.len() != n2) {
                return Err(Error::Config("finite_matrix: ragged mean tables".into()));
            }
        }
        if !(cfg.noise_variance > 0.0) {
            return Err(Error::Config("finite_matrix: noise variance must be positive".into()));
        }
        let params = ParameterSet::new(cfg.labels.clone(), cfg.true_index)?;
        let space = StrategySpace::new(vec![
            PlayerSpace::Simplex { dim: n1 },
            PlayerSpace::Simplex { dim: n2 },
        ])?;
        Ok(Self { cfg, params, space, actions: vec![n1, n2] })
    }

    pub fn num_actions(&self, i: usize) -> usize {
        self.actions[i]
    }

    fn mean_at_actions(&self, s: usize, n: &[usize]) -> [f64; 2] {
        self.cfg.means[s][n[0]][n[1]]
    }

    /// Independent categorical draws, one action per player.
    pub fn sample_action_profile<R: Rng + ?Sized>(
        &self,
        q: &StrategyProfile,
        rng: &mut R,
    ) -> Vec<usize> {
        (0..2)
            .map(|i| {
                let weights = q.player(i);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (a, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return a;
                    }
                }
                weights.len() - 1
            })
            .collect()
    }

    /// Support `[q]` of the mixed profile: action profiles with positive
    /// probability.
    pub fn support_profiles(&self, q: &StrategyProfile) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for n1 in 0..self.actions[0] {
            for n2 in 0..self.actions[1] {
                if q.player(0)[n1] > SUPPORT_TOL && q.player(1)[n2] > SUPPORT_TOL {
                    out.push(vec![n1, n2]);
                }
            }
        }
        out
    }

    /// Appendix-style payoff-equivalent set: parameters whose channel agrees
    /// with the true one on every action profile in the support of `q`.
    pub fn support_payoff_equivalent_set(&self, q: &StrategyProfile, tol: f64) -> Vec<usize> {
        let s_star = self.params.true_index();
        let support = self.support_profiles(q);
        (0..self.params.len())
            .filter(|&s| {
                support.iter().all(|n| {
                    let kl = crate::analysis::gaussian_kl(
                        &self.mean_at_actions(s_star, n),
                        &[self.cfg.noise_variance; 2],
                        &self.mean_at_actions(s, n),
                        &[self.cfg.noise_variance; 2],
                    );
                    kl <= tol
                })
            })
            .collect()
    }

    /// Expected payoff of player `i` for pure action `a` against the
    /// opponent's mixed strategy, under belief `theta`.
    pub fn action_payoff(
        &self,
        theta: &crate::model::Belief,
        q: &StrategyProfile,
        i: usize,
        a: usize,
    ) -> f64 {
        let opp = 1 - i;
        let mut total = 0.0;
        for s in 0..self.params.len() {
            let p = theta.prob(s);
            if p == 0.0 {
                continue;
            }
            for (b, w) in q.player(opp).iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let n = if i == 0 { [a, b] } else { [b, a] };
                total += p * w * self.cfg.means[s][n[0]][n[1]][i];
            }
        }
        total
    }

    /// Whether `q` is a mixed equilibrium under `theta`: every supported
    /// action is within `tol` of the best action payoff.
    pub fn is_equilibrium(&self, theta: &crate::model::Belief, q: &StrategyProfile, tol: f64) -> bool {
        (0..2).all(|i| {
            let payoffs: Vec<f64> =
                (0..self.actions[i]).map(|a| self.action_payoff(theta, q, i, a)).collect();
            let best = payoffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            q.player(i)
                .iter()
                .zip(&payoffs)
                .all(|(w, pay)| *w <= SUPPORT_TOL || best - pay <= tol)
        })
    }
}

impl GameModel for FiniteMatrixGame {
    fn id(&self) -> &str {
        "finite_matrix"
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
        Capabilities::default()
    }

    fn observation_dim(&self) -> usize {
        2
    }

    fn observation_mean(&self, s: usize, at: &ChannelPoint) -> Vec<f64> {
        match at {
            ChannelPoint::Actions(n) => self.mean_at_actions(s, n).to_vec(),
            ChannelPoint::Strategies(_) => {
                unreachable!("finite-strategy channel is keyed on realized actions")
            }
        }
    }

    fn observation_variances(&self, _s: usize) -> Vec<f64> {
        vec![self.cfg.noise_variance; 2]
    }

    fn mean_payoff(&self, s: usize, q: &StrategyProfile) -> Vec<f64> {
        let mut out = vec![0.0; 2];
        for (n1, w1) in q.player(0).iter().enumerate() {
            for (n2, w2) in q.player(1).iter().enumerate() {
                let m = self.cfg.means[s][n1][n2];
                out[0] += w1 * w2 * m[0];
                out[1] += w1 * w2 * m[1];
            }
        }
        out
    }

    fn draw_channel_point<'a>(
        &self,
        q: &StrategyProfile,
        rng: &mut dyn rand::RngCore,
    ) -> ChannelPoint {
        ChannelPoint::Actions(self.sample_action_profile(q, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn game() -> FiniteMatrixGame {
        FiniteMatrixGame::new(FiniteMatrixConfig::default()).unwrap()
    }

    #[test]
    fn pure_strategy_always_sampled() {
        let g = game();
        let q = StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(g.sample_action_profile(&q, &mut rng), vec![0, 1]);
        }
    }

    #[test]
    fn uniform_mixed_frequency_and_zero_prob_exclusion() {
        let g = game();
        let q = StrategyProfile::new(vec![vec![0.5, 0.5], vec![1.0, 0.0]]);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        let n = 100_000;
        let mut ones = 0usize;
        for _ in 0..n {
            let a = g.sample_action_profile(&q, &mut rng);
            assert_eq!(a[1], 0, "zero-probability action must never be drawn");
            ones += a[0];
        }
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.005, "frequency {freq}");
    }

    #[test]
    fn support_equivalence_depends_on_distinguishing_cell() {
        let g = game();
        // support avoids (1,1): both parameters equivalent
        let avoiding = StrategyProfile::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert_eq!(g.support_payoff_equivalent_set(&avoiding, 1e-9), vec![0, 1]);
        // support containing (1,1): only the true parameter remains
        let covering = StrategyProfile::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert_eq!(g.support_payoff_equivalent_set(&covering, 1e-9), vec![0]);
    }

    #[test]
    fn all_zero_avoiding_profile_is_equilibrium() {
        let g = game();
        let theta = crate::model::Belief::from_probs(&[0.5, 0.5]).unwrap();
        let q = StrategyProfile::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!(g.is_equilibrium(&theta, &q, 1e-12));
    }
}
