//! Core domain types: parameter sets, beliefs, strategy spaces and profiles,
//! Gaussian observation channels, and the game-model interface every concrete
//! game implements.
//!
//! Beliefs are stored and updated entirely in log space. Excluded parameters
//! decay to probabilities far below the smallest positive `f64`, so linear
//! storage would underflow within a few hundred steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities above this threshold count as belief support.
/// Numeric zeros produced by underflow must count as excluded parameters.
pub const SUPPORT_TOL: f64 = 1e-9;

/// Normalization tolerance on `sum(exp(log_probs)) - 1`.
pub const BELIEF_NORM_TOL: f64 = 1e-12;

/// The finite set of candidate payoff parameters, with the true one marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    labels: Vec<String>,
    true_index: usize,
}

impl ParameterSet {
    pub fn new(labels: Vec<String>, true_index: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("parameter set must be nonempty".into()));
        }
        if true_index >= labels.len() {
            return Err(Error::InvalidArgument(format!(
                "true_index {} out of range for {} parameters",
                true_index,
                labels.len()
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidArgument(format!("duplicate parameter label `{a}`")));
            }
        }
        Ok(Self { labels, true_index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, s: usize) -> &str {
        &self.labels[s]
    }

    /// Index of the true parameter `s*`.
    pub fn true_index(&self) -> usize {
        self.true_index
    }
}

/// A probability vector over the parameter set, kept as log-probabilities.
/// Entries may be `-inf` (excluded parameters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    log_probs: Vec<f64>,
}

impl Belief {
    /// Builds a normalized belief from unnormalized log-probabilities.
    pub fn from_log_probs(log_probs: Vec<f64>) -> Result<Self> {
        normalize_belief(Belief { log_probs })
    }

    /// Builds a normalized belief from (possibly unnormalized) probabilities.
    /// Zero entries become `-inf`; negative entries are rejected.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        let mut log_probs = Vec::with_capacity(probs.len());
        for &p in probs {
            if p < 0.0 || !p.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid probability {p}")));
            }
            log_probs.push(if p == 0.0 { f64::NEG_INFINITY } else { p.ln() });
        }
        Self::from_log_probs(log_probs)
    }

    pub fn uniform(n: usize) -> Self {
        Belief { log_probs: vec![-(n as f64).ln(); n] }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_prob(&self, s: usize) -> f64 {
        self.log_probs[s]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn prob(&self, s: usize) -> f64 {
        self.log_probs[s].exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    /// Support set `[θ]`: indices with probability above [`SUPPORT_TOL`].
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&s| self.prob(s) > SUPPORT_TOL).collect()
    }

    /// `max_s |θ(s) - other(s)|`.
    pub fn linf_distance(&self, other: &Belief) -> f64 {
        self.log_probs
            .iter()
            .zip(&other.log_probs)
            .map(|(a, b)| (a.exp() - b.exp()).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &Belief) -> f64 {
        self.log_probs
            .iter()
            .zip(&other.log_probs)
            .map(|(a, b)| (a.exp() - b.exp()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` entries are ignored.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Shifts log-probabilities so the exponentials sum to 1. Relative ratios of
/// finite entries are preserved exactly (log-space subtraction).
pub fn normalize_belief(raw: Belief) -> Result<Belief> {
    if raw.log_probs.is_empty() {
        return Err(Error::DegenerateBelief);
    }
    let lse = log_sum_exp(&raw.log_probs);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateBelief);
    }
    let log_probs = raw.log_probs.iter().map(|lp| lp - lse).collect();
    Ok(Belief { log_probs })
}

/// One player's feasible strategy set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlayerSpace {
    /// Axis-aligned box with finite bounds (continuous games).
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Probability simplex over `dim` actions (finite-strategy games).
    Simplex { dim: usize },
}

impl PlayerSpace {
    pub fn scalar_box(lower: f64, upper: f64) -> Self {
        PlayerSpace::Box { lower: vec![lower], upper: vec![upper] }
    }

    pub fn dim(&self) -> usize {
        match self {
            PlayerSpace::Box { lower, .. } => lower.len(),
            PlayerSpace::Simplex { dim } => *dim,
        }
    }
}

/// Product of the players' strategy sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpace {
    players: Vec<PlayerSpace>,
}

impl StrategySpace {
    pub fn new(players: Vec<PlayerSpace>) -> Result<Self> {
        for p in &players {
            if let PlayerSpace::Box { lower, upper } = p {
                if lower.len() != upper.len() {
                    return Err(Error::InvalidArgument("box bound dimensions differ".into()));
                }
                for (l, u) in lower.iter().zip(upper) {
                    if !(l.is_finite() && u.is_finite() && l <= u) {
                        return Err(Error::InvalidArgument(format!("invalid box bounds [{l}, {u}]")));
                    }
                }
            }
        }
        Ok(Self { players })
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn player(&self, i: usize) -> &PlayerSpace {
        &self.players[i]
    }

    pub fn players(&self) -> &[PlayerSpace] {
        &self.players
    }

    pub fn contains(&self, q: &StrategyProfile, tol: f64) -> bool {
        if q.players.len() != self.players.len() {
            return false;
        }
        self.players.iter().zip(&q.players).all(|(space, qi)| match space {
            PlayerSpace::Box { lower, upper } => {
                qi.len() == lower.len()
                    && qi.iter().zip(lower).all(|(x, l)| *x >= l - tol)
                    && qi.iter().zip(upper).all(|(x, u)| *x <= u + tol)
            }
            PlayerSpace::Simplex { dim } => {
                qi.len() == *dim
                    && qi.iter().all(|x| *x >= -tol)
                    && (qi.iter().sum::<f64>() - 1.0).abs() <= 1e-12_f64.max(tol)
            }
        })
    }
}

/// A strategy profile `q = (q_i)_{i in I}`, one real vector per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    players: Vec<Vec<f64>>,
}

impl StrategyProfile {
    pub fn new(players: Vec<Vec<f64>>) -> Self {
        Self { players }
    }

    /// Profile for games with one scalar strategy per player.
    pub fn from_scalars(values: &[f64]) -> Self {
        Self { players: values.iter().map(|v| vec![*v]).collect() }
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn player(&self, i: usize) -> &[f64] {
        &self.players[i]
    }

    pub fn player_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.players[i]
    }

    pub fn players(&self) -> &[Vec<f64>] {
        &self.players
    }

    /// Scalar strategy of player `i`; panics if the strategy is not scalar.
    pub fn scalar(&self, i: usize) -> f64 {
        debug_assert_eq!(self.players[i].len(), 1);
        self.players[i][0]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.players.iter().flatten().copied().collect()
    }

    pub fn linf_distance(&self, other: &StrategyProfile) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_distance(&self, other: &StrategyProfile) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Euclidean projection of `v` onto the probability simplex (sort-based).
pub fn project_onto_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut rho = 0;
    let mut lambda = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let candidate = (1.0 - cumsum) / (j + 1) as f64;
        if uj + candidate > 0.0 {
            rho = j + 1;
            lambda = candidate;
        }
    }
    debug_assert!(rho > 0);
    v.iter().map(|x| (x + lambda).max(0.0)).collect()
}

/// Componentwise clamp to the box (continuous games) or Euclidean projection
/// onto the simplex (finite games). Idempotent.
pub fn project_strategy(q: &StrategyProfile, space: &StrategySpace) -> StrategyProfile {
    let players = space
        .players
        .iter()
        .zip(&q.players)
        .map(|(ps, qi)| match ps {
            PlayerSpace::Box { lower, upper } => qi
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(x, (l, u))| x.clamp(*l, *u))
                .collect(),
            PlayerSpace::Simplex { .. } => project_onto_simplex(qi),
        })
        .collect();
    StrategyProfile { players }
}

/// A realized observation: the payoff vector `c` or the game's sufficient
/// statistic, plus (for finite-strategy games) the realized action profile
/// the channel was keyed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffObservation {
    pub values: Vec<f64>,
    pub actions: Option<Vec<usize>>,
}

impl PayoffObservation {
    pub fn continuous(values: Vec<f64>) -> Self {
        Self { values, actions: None }
    }
}

/// What the Gaussian channel is conditioned on when a payoff is realized:
/// the strategy profile itself, or the action profile drawn from a mixed one.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelPoint {
    Strategies(StrategyProfile),
    Actions(Vec<usize>),
}

/// Capability flags a game advertises.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub has_equilibrium_map: bool,
    pub has_best_response_map: bool,
    pub has_potential: bool,
    pub payoff_concave_in_own_strategy: bool,
}

/// The equilibrium set `EQ(θ)` of a game, in a finitely representable form:
/// either a single profile or (for the coordination games) the line family
/// `{ q : q_2 - q_1 = offset }` intersected with the strategy space.
#[derive(Debug, Clone, PartialEq)]
pub enum EqSet {
    Point(StrategyProfile),
    /// Two-player scalar games only: the segment `{(x, x + offset)}` inside
    /// the box.
    OffsetLine { offset: f64 },
}

impl EqSet {
    /// Feasible range of `q_1` for an offset line inside `space`.
    fn line_range(offset: f64, space: &StrategySpace) -> (f64, f64) {
        let (l1, u1) = match space.player(0) {
            PlayerSpace::Box { lower, upper } => (lower[0], upper[0]),
            _ => unreachable!("offset lines require box spaces"),
        };
        let (l2, u2) = match space.player(1) {
            PlayerSpace::Box { lower, upper } => (lower[0], upper[0]),
            _ => unreachable!("offset lines require box spaces"),
        };
        (l1.max(l2 - offset), u1.min(u2 - offset))
    }

    /// Euclidean distance from `q` to the set.
    pub fn distance(&self, q: &StrategyProfile, space: &StrategySpace) -> f64 {
        match self {
            EqSet::Point(p) => q.l2_distance(p),
            EqSet::OffsetLine { offset } => {
                let (lo, hi) = Self::line_range(*offset, space);
                let (q1, q2) = (q.scalar(0), q.scalar(1));
                // Nearest point on the unconstrained line, then clamp the
                // parameter to the feasible segment.
                let x = ((q1 + q2 - offset) / 2.0).clamp(lo, hi);
                ((q1 - x).powi(2) + (q2 - x - offset).powi(2)).sqrt()
            }
        }
    }

    /// A representative point of the set (for clustering and reports).
    pub fn representative(&self, space: &StrategySpace) -> StrategyProfile {
        match self {
            EqSet::Point(p) => p.clone(),
            EqSet::OffsetLine { offset } => {
                let (lo, hi) = Self::line_range(*offset, space);
                let x = 0.5 * (lo + hi);
                StrategyProfile::from_scalars(&[x, x + offset])
            }
        }
    }

    /// Uniform sample from the set itself (point, or a point on the segment).
    pub fn sample<R: Rng>(&self, space: &StrategySpace, rng: &mut R) -> StrategyProfile {
        match self {
            EqSet::Point(p) => p.clone(),
            EqSet::OffsetLine { offset } => {
                let (lo, hi) = Self::line_range(*offset, space);
                let x = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                StrategyProfile::from_scalars(&[x, x + offset])
            }
        }
    }
}

/// Interface every concrete game implements.
///
/// The observation channel is Gaussian with a diagonal covariance that may
/// depend on the parameter but not on the strategy profile; the mean is
/// continuous in the profile.
pub trait GameModel: Send + Sync {
    fn id(&self) -> &str;

    fn num_players(&self) -> usize;

    fn space(&self) -> &StrategySpace;

    fn params(&self) -> &ParameterSet;

    fn capabilities(&self) -> Capabilities;

    /// Dimension of the observation vector (payoff vector or sufficient
    /// statistic).
    fn observation_dim(&self) -> usize;

    /// Mean of the Gaussian observation channel given parameter `s`.
    fn observation_mean(&self, s: usize, at: &ChannelPoint) -> Vec<f64>;

    /// Per-coordinate variances of the channel given parameter `s`.
    fn observation_variances(&self, s: usize) -> Vec<f64>;

    /// Mean payoff vector `u^s(q)` for the players.
    fn mean_payoff(&self, s: usize, q: &StrategyProfile) -> Vec<f64>;

    /// What the channel keys on at profile `q`. Continuous games return the
    /// profile itself; finite-strategy games draw an action profile from the
    /// mixed strategies.
    fn draw_channel_point<'a>(&self, q: &StrategyProfile, rng: &mut dyn rand::RngCore) -> ChannelPoint {
        let _ = rng;
        ChannelPoint::Strategies(q.clone())
    }

    /// A selection `g(θ)` from the equilibrium set, continuous in `θ`.
    fn equilibrium_selection(&self, theta: &Belief) -> Option<StrategyProfile> {
        let _ = theta;
        None
    }

    /// The equilibrium set `EQ(θ)` in representable form.
    fn equilibrium_set(&self, theta: &Belief) -> Option<EqSet> {
        let _ = theta;
        None
    }

    /// Best-response interval `[h_min, h_max]` of player `i`'s scalar strategy
    /// against `q_{-i}`, clamped to the player's box.
    fn best_response(&self, theta: &Belief, q: &StrategyProfile, i: usize) -> Option<(f64, f64)> {
        let _ = (theta, q, i);
        None
    }

    /// Potential function value `Ψ^s(q)` for games that have one.
    fn potential(&self, s: usize, q: &StrategyProfile) -> Option<f64> {
        let _ = (s, q);
        None
    }
}

/// Log-density of the observation under parameter `s` at channel point `at`.
pub fn observation_log_likelihood(
    game: &dyn GameModel,
    s: usize,
    obs: &PayoffObservation,
    at: &ChannelPoint,
) -> f64 {
    let mean = game.observation_mean(s, at);
    let vars = game.observation_variances(s);
    debug_assert_eq!(mean.len(), obs.values.len());
    obs.values
        .iter()
        .zip(mean.iter().zip(&vars))
        .map(|(c, (m, v))| gaussian_log_pdf(*c, *m, *v))
        .sum()
}

/// Draws an observation from the true-parameter channel at `at`.
pub fn sample_observation(
    game: &dyn GameModel,
    s: usize,
    at: &ChannelPoint,
    rng: &mut dyn rand::RngCore,
) -> PayoffObservation {
    use rand_distr::{Distribution, StandardNormal};
    let mean = game.observation_mean(s, at);
    let vars = game.observation_variances(s);
    let values = mean
        .iter()
        .zip(&vars)
        .map(|(m, v)| {
            let z: f64 = StandardNormal.sample(rng);
            m + v.sqrt() * z
        })
        .collect();
    let actions = match at {
        ChannelPoint::Actions(n) => Some(n.clone()),
        ChannelPoint::Strategies(_) => None,
    };
    PayoffObservation { values, actions }
}

pub fn gaussian_log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    debug_assert!(variance > 0.0);
    let d = x - mean;
    -0.5 * (d * d / variance + (2.0 * std::f64::consts::PI * variance).ln())
}

/// Welford's online mean/variance. Constant samples keep the mean exact and
/// the variance at zero, which the payoff-equivalence diagnostics rely on.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Standard error of the mean (population variance over n).
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.m2.max(0.0).sqrt() / self.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_preserves_already_normalized() {
        let b = Belief::from_log_probs(vec![0.5f64.ln(), 0.5f64.ln()]).unwrap();
        assert_eq!(b.log_prob(0), 0.5f64.ln());
        assert_eq!(b.log_prob(1), 0.5f64.ln());
    }

    #[test]
    fn normalize_symmetric_zeros() {
        let b = Belief::from_log_probs(vec![0.0, 0.0]).unwrap();
        assert!((b.prob(0) - 0.5).abs() < 1e-15);
        assert!((b.prob(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normalize_keeps_degenerate_support() {
        let b = Belief::from_log_probs(vec![0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(b.log_prob(0), 0.0);
        assert_eq!(b.log_prob(1), f64::NEG_INFINITY);
        assert_eq!(b.support(), vec![0]);
    }

    #[test]
    fn normalize_rejects_all_excluded() {
        let r = Belief::from_log_probs(vec![f64::NEG_INFINITY, f64::NEG_INFINITY]);
        assert!(matches!(r, Err(Error::DegenerateBelief)));
    }

    #[test]
    fn belief_sums_to_one_after_normalization() {
        let b = Belief::from_log_probs(vec![3.0, -2.0, 0.7]).unwrap();
        let total: f64 = b.probs().iter().sum();
        assert!((total - 1.0).abs() <= BELIEF_NORM_TOL);
        assert!(b.log_probs().iter().all(|lp| *lp <= 0.0));
    }

    #[test]
    fn clamp_projection() {
        let space = StrategySpace::new(vec![PlayerSpace::scalar_box(0.0, 2.0)]).unwrap();
        let q = StrategyProfile::from_scalars(&[3.0]);
        let p = project_strategy(&q, &space);
        assert_eq!(p.scalar(0), 2.0);
        // interior point unchanged, projection idempotent
        let q2 = StrategyProfile::from_scalars(&[1.25]);
        assert_eq!(project_strategy(&q2, &space), q2);
        assert_eq!(project_strategy(&p, &space), p);
    }

    #[test]
    fn simplex_projection_matches_sort_oracle() {
        let w = project_onto_simplex(&[0.6, 0.6]);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15);
        let w = project_onto_simplex(&[1.5, -0.3]);
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn offset_line_distance() {
        let space = StrategySpace::new(vec![
            PlayerSpace::scalar_box(0.0, 2.0),
            PlayerSpace::scalar_box(1.0, 4.0),
        ])
        .unwrap();
        let set = EqSet::OffsetLine { offset: 1.75 };
        let on = StrategyProfile::from_scalars(&[0.0, 1.75]);
        assert!(set.distance(&on, &space) < 1e-12);
        let off = StrategyProfile::from_scalars(&[0.0, 2.75]);
        assert!((set.distance(&off, &space) - (0.5f64.powi(2) * 2.0).sqrt()).abs() < 1e-12);
    }
}
