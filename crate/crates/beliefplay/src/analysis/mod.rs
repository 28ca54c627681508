//! Checkable renditions of the convergence, fixed-point, rate, and stability
//! claims: analytic KL divergences with Monte Carlo cross-checks,
//! payoff-equivalence sets, fixed-point verification and enumeration,
//! convergence-rate fitting, and the continuous-time best-response flow.

mod flow;
mod stability;

pub use flow::{br_flow_integrate, FlowResult};
pub use stability::{
    check_complete_info_equivalence, check_global_stability, check_local_stability_condition_b,
    stability_thresholds, StabilityCheck, StabilityThresholds,
};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::model::{
    log_sum_exp, Belief, ChannelPoint, EqSet, GameModel, StrategyProfile, SUPPORT_TOL,
};

/// A KL divergence in nats, tagged with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum KlValue {
    Analytic(f64),
    MonteCarlo { estimate: f64, std_error: f64 },
}

impl KlValue {
    pub fn value(&self) -> f64 {
        match self {
            KlValue::Analytic(v) => *v,
            KlValue::MonteCarlo { estimate, .. } => *estimate,
        }
    }
}

/// KL divergence between two diagonal Gaussians, summed over independent
/// coordinates.
pub fn gaussian_kl(mean_p: &[f64], var_p: &[f64], mean_q: &[f64], var_q: &[f64]) -> f64 {
    mean_p
        .iter()
        .zip(var_p)
        .zip(mean_q.iter().zip(var_q))
        .map(|((mp, vp), (mq, vq))| {
            let dm = mp - mq;
            0.5 * (vq / vp).ln() + (vp + dm * dm) / (2.0 * vq) - 0.5
        })
        .sum()
}

/// Analytic `D_KL(φ^{s_true}(·|q) ‖ φ^{s}(·|q))` for a continuous-strategy
/// game's Gaussian channel.
pub fn kl_divergence(game: &dyn GameModel, s_true: usize, s: usize, q: &StrategyProfile) -> KlValue {
    let at = ChannelPoint::Strategies(q.clone());
    KlValue::Analytic(kl_divergence_at(game, s_true, s, &at))
}

pub fn kl_divergence_at(game: &dyn GameModel, s_true: usize, s: usize, at: &ChannelPoint) -> f64 {
    gaussian_kl(
        &game.observation_mean(s_true, at),
        &game.observation_variances(s_true),
        &game.observation_mean(s, at),
        &game.observation_variances(s),
    )
}

/// Monte Carlo estimate of the same divergence, as an independent oracle.
pub fn kl_divergence_monte_carlo(
    game: &dyn GameModel,
    s_true: usize,
    s: usize,
    q: &StrategyProfile,
    n_samples: usize,
    seed: u64,
) -> KlValue {
    let at = ChannelPoint::Strategies(q.clone());
    let mean_p = game.observation_mean(s_true, &at);
    let var_p = game.observation_variances(s_true);
    let mean_q = game.observation_mean(s, &at);
    let var_q = game.observation_variances(s);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut acc = crate::model::Welford::default();
    for _ in 0..n_samples {
        let mut log_ratio = 0.0;
        for k in 0..mean_p.len() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let c = mean_p[k] + var_p[k].sqrt() * z;
            let dp = c - mean_p[k];
            let dq = c - mean_q[k];
            log_ratio += 0.5 * (var_q[k] / var_p[k]).ln() + dq * dq / (2.0 * var_q[k])
                - dp * dp / (2.0 * var_p[k]);
        }
        acc.push(log_ratio);
    }
    KlValue::MonteCarlo { estimate: acc.mean(), std_error: acc.std_error() }
}

/// `S*(q)`: parameters payoff-equivalent to the true one at `q`. Always
/// contains the true parameter.
pub fn payoff_equivalent_set(game: &dyn GameModel, q: &StrategyProfile, tol: f64) -> Vec<usize> {
    let s_true = game.params().true_index();
    (0..game.params().len())
        .filter(|&s| kl_divergence(game, s_true, s, q).value() <= tol)
        .collect()
}

/// `S*(Q̂)`: parameters payoff-equivalent to the true one at every profile in
/// the set.
pub fn payoff_equivalent_set_over(
    game: &dyn GameModel,
    profiles: &[StrategyProfile],
    tol: f64,
) -> Vec<usize> {
    let s_true = game.params().true_index();
    (0..game.params().len())
        .filter(|&s| {
            profiles.iter().all(|q| kl_divergence(game, s_true, s, q).value() <= tol)
        })
        .collect()
}

/// A candidate fixed point with its two verification outcomes.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint {
    pub theta: Vec<f64>,
    pub strategies: Vec<Vec<f64>>,
    pub support_subset_of_equivalent: bool,
    pub strategies_in_equilibrium: bool,
    pub tol_kl: f64,
    pub tol_eq: f64,
}

impl FixedPoint {
    pub fn accepted(&self) -> bool {
        self.support_subset_of_equivalent && self.strategies_in_equilibrium
    }
}

/// Checks the two fixed-point conditions: the belief support is
/// payoff-equivalent at `q`, and `q` is a mutual best response under `θ`.
pub fn check_fixed_point(
    game: &dyn GameModel,
    theta: &Belief,
    q: &StrategyProfile,
    tol_kl: f64,
    tol_eq: f64,
) -> Result<FixedPoint> {
    let equivalent = payoff_equivalent_set(game, q, tol_kl);
    let support_ok = theta.support().iter().all(|s| equivalent.contains(s));
    let mut eq_ok = true;
    for i in 0..game.num_players() {
        let (lo, hi) = game.best_response(theta, q, i).ok_or(Error::MissingCapability {
            game: game.id().to_string(),
            capability: "a best-response map",
        })?;
        let qi = q.scalar(i);
        let residual = (qi - qi.clamp(lo, hi)).abs();
        if residual > tol_eq {
            eq_ok = false;
        }
    }
    Ok(FixedPoint {
        theta: theta.probs(),
        strategies: q.players().to_vec(),
        support_subset_of_equivalent: support_ok,
        strategies_in_equilibrium: eq_ok,
        tol_kl,
        tol_eq,
    })
}

/// Representative equilibrium of an accepted cluster: a profile, or the line
/// offset for games whose equilibrium set is a line family.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterEq {
    Point { strategies: Vec<Vec<f64>> },
    LineOffset { offset: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointCluster {
    pub theta: Vec<f64>,
    pub eq: ClusterEq,
    pub members: usize,
}

impl FixedPointCluster {
    /// `max(belief L∞ distance, equilibrium distance)` from a terminal state
    /// to this cluster. Line clusters measure the gap `q_2 - q_1` against the
    /// recorded offset.
    pub fn distance(&self, theta_probs: &[f64], q: &StrategyProfile) -> f64 {
        let d_theta = theta_probs
            .iter()
            .zip(&self.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d_eq = match &self.eq {
            ClusterEq::Point { strategies } => q
                .flatten()
                .iter()
                .zip(strategies.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            ClusterEq::LineOffset { offset } => (q.scalar(1) - q.scalar(0) - offset).abs(),
        };
        d_theta.max(d_eq)
    }
}

/// All belief vectors on the simplex grid with `resolution ≈ 1/steps`.
fn simplex_grid(dim: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(dim: usize, remaining: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if dim == 1 {
            prefix.push(remaining);
            out.push(prefix.iter().map(|k| *k as f64 / steps as f64).collect());
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            rec(dim - 1, remaining - k, steps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Sweeps the belief simplex at `grid_step`, verifies each candidate
/// `(θ, g(θ))`, and clusters the accepted points.
pub fn enumerate_fixed_points(
    game: &dyn GameModel,
    grid_step: f64,
    dedup_radius: f64,
) -> Result<Vec<FixedPointCluster>> {
    if !game.capabilities().has_equilibrium_map {
        return Err(Error::MissingCapability {
            game: game.id().to_string(),
            capability: "an equilibrium map",
        });
    }
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(Error::InvalidArgument("grid step must lie in (0, 1]".into()));
    }
    let steps = (1.0 / grid_step).round().max(1.0) as usize;
    let dim = game.params().len();
    let mut clusters: Vec<FixedPointCluster> = Vec::new();
    for probs in simplex_grid(dim, steps) {
        let theta = Belief::from_probs(&probs)?;
        let q = game.equilibrium_selection(&theta).ok_or(Error::MissingCapability {
            game: game.id().to_string(),
            capability: "an equilibrium map",
        })?;
        let fp = check_fixed_point(game, &theta, &q, 1e-9, 1e-6)?;
        if !fp.accepted() {
            continue;
        }
        let eq = match game.equilibrium_set(&theta) {
            Some(EqSet::OffsetLine { offset }) => ClusterEq::LineOffset { offset },
            _ => ClusterEq::Point { strategies: q.players().to_vec() },
        };
        let mut placed = false;
        for cluster in &mut clusters {
            if cluster.distance(&probs, &q) <= dedup_radius {
                cluster.members += 1;
                placed = true;
                break;
            }
        }
        if !placed {
            clusters.push(FixedPointCluster { theta: probs, eq, members: 1 });
        }
    }
    Ok(clusters)
}

/// Outcome of a convergence-rate fit for one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RateFit {
    /// The parameter stays in the terminal support; no decay to fit.
    NoDecay,
    /// Least-squares slope of `log θ^t(s)` per step over the fitted window.
    Slope(f64),
}

/// Fits the exponential decay rate of an excluded parameter's belief over the
/// post-burn-in window.
pub fn fit_convergence_rate(
    trajectory: &Trajectory,
    s: usize,
    burn_in_fraction: f64,
) -> Result<RateFit> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::InvalidArgument("burn-in fraction must lie in [0, 1)".into()));
    }
    let records = &trajectory.records;
    if records.len() < 3 {
        return Err(Error::InvalidArgument("trajectory too short to fit a rate".into()));
    }
    let terminal = trajectory.terminal();
    if terminal.theta.prob(s) > SUPPORT_TOL {
        return Ok(RateFit::NoDecay);
    }
    let start = ((records.len() - 1) as f64 * burn_in_fraction).ceil() as usize;
    let window = &records[start..];
    let mut xs = Vec::with_capacity(window.len());
    let mut ys = Vec::with_capacity(window.len());
    for rec in window {
        let lp = rec.theta.log_prob(s);
        if lp == f64::NEG_INFINITY {
            return Err(Error::InfeasibleState(format!(
                "belief of parameter {s} vanished exactly inside the fitted window"
            )));
        }
        xs.push(rec.step as f64);
        ys.push(lp);
    }
    least_squares_slope(&xs, &ys)
        .map(RateFit::Slope)
        .ok_or_else(|| Error::InvalidArgument("fit window has a single step".into()))
}

/// Slope of the least-squares line through `(xs, ys)`; `None` when the
/// abscissae are degenerate.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    Some(sxy / sxx)
}

/// `D_KL(φ^{s*}(·|q) ‖ μ(·|θ, q))` against the belief mixture, by adaptive
/// tensor Simpson quadrature in the standardized coordinates of the true
/// channel. For finite-strategy games the outer expectation runs over the
/// mixed profile's support.
pub fn kl_true_vs_mixture(game: &dyn GameModel, theta: &Belief, q: &StrategyProfile) -> f64 {
    use crate::model::PlayerSpace;
    let finite = game.space().players().iter().any(|p| matches!(p, PlayerSpace::Simplex { .. }));
    if !finite {
        let at = ChannelPoint::Strategies(q.clone());
        return mixture_kl_at(game, theta, &at);
    }
    // weight each supported action profile by its probability under q
    let mut total = 0.0;
    let mut actions = vec![0usize; game.num_players()];
    loop {
        let prob: f64 = actions.iter().enumerate().map(|(i, &a)| q.player(i)[a]).product();
        if prob > 0.0 {
            let at = ChannelPoint::Actions(actions.clone());
            total += prob * mixture_kl_at(game, theta, &at);
        }
        let mut axis = game.num_players();
        loop {
            if axis == 0 {
                return total;
            }
            axis -= 1;
            actions[axis] += 1;
            if actions[axis] < q.player(axis).len() {
                break;
            }
            actions[axis] = 0;
        }
    }
}

fn mixture_kl_at(game: &dyn GameModel, theta: &Belief, at: &ChannelPoint) -> f64 {
    let s_true = game.params().true_index();
    let mean_true = game.observation_mean(s_true, at);
    let var_true = game.observation_variances(s_true);
    let components: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..theta.len())
        .filter(|&s| theta.log_prob(s) != f64::NEG_INFINITY)
        .map(|s| (theta.log_prob(s), game.observation_mean(s, at), game.observation_variances(s)))
        .collect();
    let integrand = |c: &[f64]| -> f64 {
        let log_true: f64 = c
            .iter()
            .zip(mean_true.iter().zip(&var_true))
            .map(|(x, (m, v))| crate::model::gaussian_log_pdf(*x, *m, *v))
            .sum();
        let logs: Vec<f64> = components
            .iter()
            .map(|(lp, means, vars)| {
                lp + c
                    .iter()
                    .zip(means.iter().zip(vars))
                    .map(|(x, (m, v))| crate::model::gaussian_log_pdf(*x, *m, *v))
                    .sum::<f64>()
            })
            .collect();
        log_true - log_sum_exp(&logs)
    };
    match mean_true.len() {
        1 => gauss_weighted_simpson_1d(mean_true[0], var_true[0].sqrt(), 8001, 12.0, |c| {
            integrand(&[c])
        }),
        2 => {
            let sd = [var_true[0].sqrt(), var_true[1].sqrt()];
            gauss_weighted_simpson_2d(&[mean_true[0], mean_true[1]], &sd, 801, 10.0, |c| {
                integrand(c)
            })
        }
        d => unimplemented!("quadrature for {d}-dimensional channels"),
    }
}

fn simpson_weights(n: usize) -> Vec<f64> {
    debug_assert!(n >= 3 && n % 2 == 1);
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        })
        .collect()
}

fn gauss_weighted_simpson_1d(
    mean: f64,
    sd: f64,
    n: usize,
    z_range: f64,
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    let w = simpson_weights(n);
    let h = 2.0 * z_range / (n - 1) as f64;
    let norm = (2.0 * std::f64::consts::PI).sqrt().recip();
    let mut total = 0.0;
    for i in 0..n {
        let z = -z_range + h * i as f64;
        let density = norm * (-0.5 * z * z).exp();
        total += w[i] * density * f(mean + sd * z);
    }
    total * h / 3.0
}

fn gauss_weighted_simpson_2d(
    mean: &[f64; 2],
    sd: &[f64; 2],
    n: usize,
    z_range: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let w = simpson_weights(n);
    let h = 2.0 * z_range / (n - 1) as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI);
    let mut total = 0.0;
    for i in 0..n {
        let zi = -z_range + h * i as f64;
        let ci = mean[0] + sd[0] * zi;
        for j in 0..n {
            let zj = -z_range + h * j as f64;
            let cj = mean[1] + sd[1] * zj;
            let density = norm * (-0.5 * (zi * zi + zj * zj)).exp();
            total += w[i] * w[j] * density * f(&[ci, cj]);
        }
    }
    total * h * h / 9.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games;

    fn cournot() -> std::sync::Arc<dyn GameModel> {
        games::build("cournot", &serde_json::Value::Null).unwrap()
    }

    #[test]
    fn kl_zero_for_same_parameter_and_at_equivalence_point() {
        let game = cournot();
        let q = StrategyProfile::from_scalars(&[2.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(kl_divergence(game.as_ref(), 0, 0, &q).value(), 0.0);
        let q_eq = StrategyProfile::from_scalars(&[0.5, 0.5]);
        assert!(kl_divergence(game.as_ref(), 0, 1, &q_eq).value().abs() < 1e-15);
    }

    #[test]
    fn kl_cournot_complete_info_value() {
        let game = cournot();
        let q = StrategyProfile::from_scalars(&[2.0 / 3.0, 2.0 / 3.0]);
        let kl = kl_divergence(game.as_ref(), 0, 1, &q).value();
        assert!((kl - 4.0 / 9.0).abs() < 1e-12, "kl {kl}");
    }

    #[test]
    fn kl_identity_of_indiscernibles() {
        // zero iff channel means and variances coincide
        let game = games::build("public_good", &serde_json::Value::Null).unwrap();
        let q = StrategyProfile::from_scalars(&[1.0, 1.0]);
        for s in 1..3 {
            assert!(kl_divergence(game.as_ref(), 0, s, &q).value() > 0.0);
        }
    }

    #[test]
    fn payoff_equivalent_sets_from_examples() {
        let game = cournot();
        let q_eq = StrategyProfile::from_scalars(&[0.5, 0.5]);
        assert_eq!(payoff_equivalent_set(game.as_ref(), &q_eq, 1e-9), vec![0, 1]);
        let q_star = StrategyProfile::from_scalars(&[2.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(payoff_equivalent_set(game.as_ref(), &q_star, 1e-9), vec![0]);

        let public = games::build("public_good", &serde_json::Value::Null).unwrap();
        let q = StrategyProfile::from_scalars(&[1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(payoff_equivalent_set(public.as_ref(), &q, 1e-9), vec![1]);

        // the set version intersects over profiles
        let both = payoff_equivalent_set_over(game.as_ref(), &[q_eq, q_star], 1e-9);
        assert_eq!(both, vec![0]);
    }

    #[test]
    fn fixed_point_checks_from_examples() {
        let game = cournot();
        let complete = Belief::from_probs(&[1.0, 0.0]).unwrap();
        let q_star = StrategyProfile::from_scalars(&[2.0 / 3.0, 2.0 / 3.0]);
        assert!(check_fixed_point(game.as_ref(), &complete, &q_star, 1e-9, 1e-6).unwrap().accepted());

        let mixed = Belief::from_probs(&[0.5, 0.5]).unwrap();
        let q_bar = StrategyProfile::from_scalars(&[0.5, 0.5]);
        assert!(check_fixed_point(game.as_ref(), &mixed, &q_bar, 1e-9, 1e-6).unwrap().accepted());

        let theta = Belief::from_probs(&[0.1, 0.9]).unwrap();
        let q = StrategyProfile::from_scalars(&[0.25, 0.25]);
        let fp = check_fixed_point(game.as_ref(), &theta, &q, 1e-9, 1e-6).unwrap();
        assert!(!fp.accepted());
        assert!(!fp.strategies_in_equilibrium);
    }

    #[test]
    fn enumerate_cournot_finds_exactly_two_clusters() {
        let game = cournot();
        let clusters = enumerate_fixed_points(game.as_ref(), 0.01, 0.05).unwrap();
        assert_eq!(clusters.len(), 2, "{clusters:?}");
        let q_star = StrategyProfile::from_scalars(&[2.0 / 3.0, 2.0 / 3.0]);
        assert!(clusters.iter().any(|c| c.distance(&[1.0, 0.0], &q_star) < 0.02));
        let q_bar = StrategyProfile::from_scalars(&[0.5, 0.5]);
        assert!(clusters.iter().any(|c| c.distance(&[0.5, 0.5], &q_bar) < 0.02));
    }

    #[test]
    fn enumerate_public_good_finds_unique_complete_info_point() {
        let game = games::build("public_good", &serde_json::Value::Null).unwrap();
        let clusters = enumerate_fixed_points(game.as_ref(), 0.02, 0.05).unwrap();
        assert_eq!(clusters.len(), 1, "{clusters:?}");
        let q = StrategyProfile::from_scalars(&[1.0 / 3.0, 1.0 / 3.0]);
        assert!(clusters[0].distance(&[0.0, 1.0, 0.0], &q) < 0.02);
    }

    #[test]
    fn enumerate_safe_margin_clusters_only_at_true_belief() {
        let game = games::build("coordination_safe_margin", &serde_json::Value::Null).unwrap();
        let clusters = enumerate_fixed_points(game.as_ref(), 0.02, 0.05).unwrap();
        assert!(!clusters.is_empty());
        for c in &clusters {
            assert!(c.theta[0] < 1e-12 && c.theta[1] < 1e-12, "{c:?}");
            assert!((c.theta[2] - 1.0).abs() < 1e-12);
            match &c.eq {
                ClusterEq::LineOffset { offset } => assert!((offset - 1.75).abs() < 1e-9),
                other => panic!("expected a line cluster, got {other:?}"),
            }
        }
    }

    #[test]
    fn mc_kl_matches_analytic() {
        let game = cournot();
        let q = StrategyProfile::from_scalars(&[2.0 / 3.0, 2.0 / 3.0]);
        let analytic = kl_divergence(game.as_ref(), 0, 1, &q).value();
        match kl_divergence_monte_carlo(game.as_ref(), 0, 1, &q, 1_000_000, 99) {
            KlValue::MonteCarlo { estimate, std_error } => {
                assert!((estimate - analytic).abs() <= 4.0 * std_error);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn mixture_kl_quadrature_handles_degenerate_mixture() {
        // θ concentrated on the true parameter: KL(φ*, φ*) = 0
        let game = cournot();
        let theta = Belief::from_probs(&[1.0, 0.0]).unwrap();
        let q = StrategyProfile::from_scalars(&[0.7, 0.9]);
        let kl = kl_true_vs_mixture(game.as_ref(), &theta, &q);
        assert!(kl.abs() < 1e-10, "kl {kl}");
    }

    #[test]
    fn mixture_kl_two_point_mixture_against_mc() {
        let game = cournot();
        let theta = Belief::from_probs(&[0.4, 0.6]).unwrap();
        let q = StrategyProfile::from_scalars(&[0.3, 0.3]);
        let quad = kl_true_vs_mixture(game.as_ref(), &theta, &q);
        let (mc, se) =
            crate::belief::log_true_belief_drift(game.as_ref(), &theta, &q, 200_000, 5).unwrap();
        assert!((quad - mc).abs() <= 3.5 * se, "quad {quad} mc {mc} se {se}");
        assert!(quad >= 0.0);
    }
}
