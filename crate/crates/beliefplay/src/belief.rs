//! Parameter-estimation rules: the full Bayesian update (direct and
//! sufficient-statistic forms share one code path), MAP over a gridded
//! continuous parameter set, and per-player OLS.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::model::{
    log_sum_exp, normalize_belief, observation_log_likelihood, sample_observation, Belief,
    ChannelPoint, GameModel, PayoffObservation, StrategyProfile, Welford,
};

/// Posterior from one observation: `θ'(s) ∝ θ(s)·φ^s(obs | q)`, computed in
/// log space. Parameters with prior probability zero stay excluded.
///
/// For finite-strategy games the likelihood is keyed on the realized action
/// profile carried inside `obs`.
pub fn bayes_update(
    prior: &Belief,
    game: &dyn GameModel,
    q: &StrategyProfile,
    obs: &PayoffObservation,
) -> Result<Belief> {
    let at = match &obs.actions {
        Some(n) => ChannelPoint::Actions(n.clone()),
        None => ChannelPoint::Strategies(q.clone()),
    };
    bayes_update_at(prior, game, &at, obs)
}

pub fn bayes_update_at(
    prior: &Belief,
    game: &dyn GameModel,
    at: &ChannelPoint,
    obs: &PayoffObservation,
) -> Result<Belief> {
    let log_post: Vec<f64> = (0..prior.len())
        .map(|s| {
            let lp = prior.log_prob(s);
            if lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lp + observation_log_likelihood(game, s, obs, at)
            }
        })
        .collect();
    normalize_belief(Belief::from_log_probs(log_post).map_err(|_| Error::ZeroTotalLikelihood)?)
}

/// Monte Carlo estimate of `E[θ'(s)/θ'(s*)]` where the observation is drawn
/// from the true channel at profile `q`. Returns (estimate, std_error).
///
/// The posterior ratio reduces to `(θ(s)/θ(s*))·φ^s(c|·)/φ^{s*}(c|·)`, so the
/// expectation equals the prior ratio; this estimator exists to check that.
pub fn conditional_ratio_expectation(
    game: &dyn GameModel,
    theta: &Belief,
    q: &StrategyProfile,
    s: usize,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let s_star = game.params().true_index();
    if theta.prob(s_star) <= 0.0 {
        return Err(Error::InfeasibleState("prior excludes the true parameter".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let prior_log_ratio = theta.log_prob(s) - theta.log_prob(s_star);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut acc = Welford::default();
    for _ in 0..n_samples {
        let at = game.draw_channel_point(q, &mut rng);
        let obs = sample_observation(game, s_star, &at, &mut rng);
        let ll_s = observation_log_likelihood(game, s, &obs, &at);
        let ll_star = observation_log_likelihood(game, s_star, &obs, &at);
        // grouping keeps payoff-equivalent cases exact: identical likelihoods
        // cancel to zero before touching the prior term
        acc.push((prior_log_ratio + (ll_s - ll_star)).exp());
    }
    Ok((acc.mean(), acc.std_error()))
}

/// Monte Carlo estimate of the one-step submartingale drift
/// `E[log θ'(s*)] - log θ(s*)` at fixed `(θ, q)`, with its standard error.
/// The exact value is `D_KL(φ^{s*}(·|q) ‖ μ(·|θ,q))` with `μ` the belief
/// mixture.
pub fn log_true_belief_drift(
    game: &dyn GameModel,
    theta: &Belief,
    q: &StrategyProfile,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let s_star = game.params().true_index();
    if theta.prob(s_star) <= 0.0 {
        return Err(Error::InfeasibleState("prior excludes the true parameter".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut acc = Welford::default();
    for _ in 0..n_samples {
        let at = game.draw_channel_point(q, &mut rng);
        let obs = sample_observation(game, s_star, &at, &mut rng);
        let ll_star = observation_log_likelihood(game, s_star, &obs, &at);
        let log_mix: Vec<f64> = (0..theta.len())
            .map(|s| {
                let lp = theta.log_prob(s);
                if lp == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    lp + observation_log_likelihood(game, s, &obs, &at)
                }
            })
            .collect();
        acc.push(ll_star - log_sum_exp(&log_mix));
    }
    Ok((acc.mean(), acc.std_error()))
}

/// A bounded box of continuous parameters discretized at a fixed step per
/// axis. Points are visited in row-major order (last axis fastest); the MAP
/// tie-break rule relies on that ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGrid {
    lower: Vec<f64>,
    step: Vec<f64>,
    counts: Vec<usize>,
}

impl MapGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, step: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != step.len() || lower.is_empty() {
            return Err(Error::InvalidArgument("grid axis specs must be nonempty and equal length".into()));
        }
        let mut counts = Vec::with_capacity(lower.len());
        for ((l, u), h) in lower.iter().zip(&upper).zip(&step) {
            if !(l < u) || !(*h > 0.0) {
                return Err(Error::InvalidArgument(format!("invalid grid axis [{l}, {u}] step {h}")));
            }
            counts.push(((u - l) / h + 1e-9).floor() as usize + 1);
        }
        Ok(Self { lower, step, counts })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, mut flat: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.counts[axis];
            flat /= self.counts[axis];
        }
        idx.iter()
            .enumerate()
            .map(|(axis, &i)| self.lower[axis] + self.step[axis] * i as f64)
            .collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|flat| self.point(flat))
    }
}

/// Cumulative per-grid-point log-likelihood `Σ_j log φ^s(c^j | q^j)`.
#[derive(Debug, Clone)]
pub struct GridLikelihoodHistory {
    cum_log_lik: Vec<f64>,
    steps: usize,
}

impl GridLikelihoodHistory {
    pub fn new(grid: &MapGrid) -> Self {
        Self { cum_log_lik: vec![0.0; grid.len()], steps: 0 }
    }

    /// Adds one observation's log-likelihood, evaluated at every grid point.
    pub fn accumulate(&mut self, grid: &MapGrid, mut log_lik: impl FnMut(&[f64]) -> f64) {
        debug_assert_eq!(self.cum_log_lik.len(), grid.len());
        let mut point = vec![0.0; grid.dim()];
        let mut idx = vec![0usize; grid.dim()];
        for (flat, acc) in self.cum_log_lik.iter_mut().enumerate() {
            let _ = flat;
            for (axis, &i) in idx.iter().enumerate() {
                point[axis] = grid.lower[axis] + grid.step[axis] * i as f64;
            }
            *acc += log_lik(&point);
            for axis in (0..grid.dim()).rev() {
                idx[axis] += 1;
                if idx[axis] < grid.counts[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum_log_lik
    }
}

/// Argmax over grid points of `prior_log_density + cumulative log-likelihood`.
/// Ties break to the lowest grid index. A `None` prior means uniform, in which
/// case the argmax is the maximum-likelihood estimate.
pub fn map_estimate(
    history: &GridLikelihoodHistory,
    prior_log_density: Option<&[f64]>,
    grid: &MapGrid,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if let Some(p) = prior_log_density {
        if p.len() != grid.len() {
            return Err(Error::InvalidArgument("prior length does not match grid".into()));
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    for flat in 0..grid.len() {
        let mut v = history.cum_log_lik[flat];
        if let Some(p) = prior_log_density {
            v += p[flat];
        }
        if v > best {
            best = v;
            best_idx = flat;
        }
    }
    Ok(grid.point(best_idx))
}

/// Condition-number threshold above which the OLS normal equations are
/// considered unusable. Early steps with too few distinct regressors sit
/// above it.
pub const OLS_CONDITION_LIMIT: f64 = 1e10;

/// Accumulated Gram matrix and moment vector for one player's regression of
/// payoffs on `(regressor, 1)`.
#[derive(Debug, Clone)]
pub struct OlsState {
    gram: DMatrix<f64>,
    moments: DVector<f64>,
    observations: usize,
}

impl OlsState {
    /// `regressor_dim` excludes the intercept.
    pub fn new(regressor_dim: usize) -> Self {
        let d = regressor_dim + 1;
        Self { gram: DMatrix::zeros(d, d), moments: DVector::zeros(d), observations: 0 }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    /// Rank-1 accumulation with the intercept appended to the regressor.
    pub fn update(&self, regressor: &[f64], response: f64) -> OlsState {
        debug_assert_eq!(regressor.len() + 1, self.dim());
        let mut row: Vec<f64> = regressor.to_vec();
        row.push(1.0);
        let r = DVector::from_vec(row);
        let mut next = self.clone();
        next.gram += &r * r.transpose();
        next.moments += &r * response;
        next.observations += 1;
        next
    }

    /// Solves the normal equations when the Gram matrix is well conditioned.
    pub fn estimate(&self) -> Result<Vec<f64>> {
        let eig = self.gram.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) || max / min >= OLS_CONDITION_LIMIT {
            return Err(Error::EstimateUnavailable("Gram matrix ill-conditioned"));
        }
        let solution = self
            .gram
            .clone()
            .lu()
            .solve(&self.moments)
            .ok_or(Error::EstimateUnavailable("normal equations singular"))?;
        Ok(solution.iter().copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games;

    #[test]
    fn cournot_equivalence_point_leaves_posterior_unchanged() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.3, 0.7]).unwrap();
        let q = StrategyProfile::from_scalars(&[0.5, 0.5]);
        for price in [-1.0, 0.3, 1.0, 2.2] {
            let obs = PayoffObservation::continuous(vec![price]);
            let post = bayes_update(&theta, game.as_ref(), &q, &obs).unwrap();
            assert!(post.linf_distance(&theta) < 1e-14);
        }
    }

    #[test]
    fn cournot_posterior_matches_likelihood_ratio_oracle() {
        // means 1.5 vs 2.5 at total 0.5, variance 0.5; observed price 1.5:
        // posterior(s1) = e / (1 + e)
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.5, 0.5]).unwrap();
        let q = StrategyProfile::from_scalars(&[0.25, 0.25]);
        let obs = PayoffObservation::continuous(vec![1.5]);
        let post = bayes_update(&theta, game.as_ref(), &q, &obs).unwrap();
        let e = std::f64::consts::E;
        assert!((post.prob(0) - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_prior_is_fixed() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[1.0, 0.0]).unwrap();
        let q = StrategyProfile::from_scalars(&[1.0, 2.0]);
        let obs = PayoffObservation::continuous(vec![0.7]);
        let post = bayes_update(&theta, game.as_ref(), &q, &obs).unwrap();
        assert_eq!(post.prob(0), 1.0);
        assert_eq!(post.prob(1), 0.0);
    }

    #[test]
    fn ratio_expectation_exact_cases() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.5, 0.5]).unwrap();
        // s = s*: ratio of a quantity with itself
        let q = StrategyProfile::from_scalars(&[0.25, 0.25]);
        let (est, se) = conditional_ratio_expectation(game.as_ref(), &theta, &q, 0, 100, 7).unwrap();
        assert_eq!(est, 1.0);
        assert_eq!(se, 0.0);
        // payoff-equivalence point: identical likelihoods cancel
        let q = StrategyProfile::from_scalars(&[0.5, 0.5]);
        let (est, se) = conditional_ratio_expectation(game.as_ref(), &theta, &q, 1, 100, 7).unwrap();
        assert_eq!(est, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn ratio_expectation_is_martingale() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.5, 0.5]).unwrap();
        let q = StrategyProfile::from_scalars(&[0.25, 0.25]);
        let (est, se) =
            conditional_ratio_expectation(game.as_ref(), &theta, &q, 1, 100_000, 42).unwrap();
        assert!((est - 1.0).abs() <= 3.0 * se, "estimate {est} se {se}");
    }

    #[test]
    fn map_single_point_grid() {
        let grid = MapGrid::new(vec![2.0], vec![2.0 + 1e-12], vec![1.0]).unwrap();
        assert_eq!(grid.len(), 1);
        let hist = GridLikelihoodHistory::new(&grid);
        let p = map_estimate(&hist, None, &grid).unwrap();
        assert_eq!(p, vec![2.0]);
    }

    #[test]
    fn map_empty_history_uniform_prior_breaks_ties_low() {
        let grid = MapGrid::new(vec![0.0], vec![1.0], vec![0.5]).unwrap();
        let hist = GridLikelihoodHistory::new(&grid);
        let p = map_estimate(&hist, None, &grid).unwrap();
        assert_eq!(p, vec![0.0]);
    }

    #[test]
    fn map_noiseless_affine_recovers_parameters() {
        // observations c = 2q + 1, grid step 0.01 over [0,5]^2
        let grid = MapGrid::new(vec![0.0, 0.0], vec![5.0, 5.0], vec![0.01, 0.01]).unwrap();
        let mut hist = GridLikelihoodHistory::new(&grid);
        let mut q = 0.1;
        for _ in 0..50 {
            let c = 2.0 * q + 1.0;
            hist.accumulate(&grid, |s| crate::model::gaussian_log_pdf(c, s[0] * q + s[1], 1.0));
            q += 0.07;
        }
        let p = map_estimate(&hist, None, &grid).unwrap();
        assert!((p[0] - 2.0).abs() <= 0.01 + 1e-12, "slope {}", p[0]);
        assert!((p[1] - 1.0).abs() <= 0.01 + 1e-12, "intercept {}", p[1]);
    }

    #[test]
    fn ols_two_points_with_intercept() {
        let state = OlsState::new(1);
        let state = state.update(&[1.0], 3.0);
        assert!(state.estimate().is_err(), "single observation must be unavailable");
        let state = state.update(&[2.0], 5.0);
        let est = state.estimate().unwrap();
        assert!((est[0] - 2.0).abs() < 1e-12);
        assert!((est[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_exact_on_noiseless_affine_data() {
        let (s1, s2) = (-1.7, 0.9);
        let mut state = OlsState::new(1);
        for q in [0.2, 1.1, 3.4] {
            state = state.update(&[q], q * s1 + s2);
        }
        let est = state.estimate().unwrap();
        assert!((est[0] - s1).abs() < 1e-9);
        assert!((est[1] - s2).abs() < 1e-9);
    }
}
