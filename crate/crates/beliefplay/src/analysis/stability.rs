//! Stability machinery: the three initial-belief thresholds, sampled checks
//! of the local-stability condition on payoff equivalence near the
//! equilibrium set, the global-stability criterion, and the
//! complete-information equivalence test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::analysis::payoff_equivalent_set;
use crate::dynamics::LearnMode;
use crate::error::{Error, Result};
use crate::model::{Belief, EqSet, GameModel, StrategyProfile};

use super::FixedPointCluster;

/// The three thresholds controlling how close the initial belief must start
/// for the high-probability stability guarantee, with their inputs.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityThresholds {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub theta_bar: Vec<f64>,
    pub eps_hat: f64,
    pub gamma: f64,
    pub n_params: usize,
    pub n_outside_support: usize,
}

/// Evaluates the closed-form thresholds at a fixed-point belief.
pub fn stability_thresholds(theta_bar: &Belief, eps_hat: f64, gamma: f64) -> Result<StabilityThresholds> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
    }
    if !(eps_hat > 0.0) {
        return Err(Error::InvalidArgument("eps_hat must be positive".into()));
    }
    let support = theta_bar.support();
    if support.is_empty() {
        return Err(Error::InvalidArgument("belief support is empty".into()));
    }
    let n = theta_bar.len() as f64;
    let outside = theta_bar.len() - support.len();
    let k = outside as f64;

    let rho1 = support
        .iter()
        .map(|&s| {
            let p = theta_bar.prob(s);
            (1.0 - gamma) * p * eps_hat / ((1.0 - gamma + k) * (k + 1.0) * n + (1.0 - gamma) * eps_hat)
        })
        .fold(f64::INFINITY, f64::min);
    let rho2 = eps_hat / ((k + 1.0) * n);
    let rho3 = support
        .iter()
        .map(|&s| {
            let p = theta_bar.prob(s);
            let first = (eps_hat - k * n * rho2 * p) / (n - k * n * rho2);
            let second = eps_hat / (n + k * (p * n + eps_hat));
            first.min(second).min(p)
        })
        .fold(f64::INFINITY, f64::min);

    Ok(StabilityThresholds {
        rho1,
        rho2,
        rho3,
        theta_bar: theta_bar.probs(),
        eps_hat,
        gamma,
        n_params: theta_bar.len(),
        n_outside_support: outside,
    })
}

/// Result of the sampled condition-(b) check.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityCheck {
    pub pass: bool,
    pub samples: usize,
    /// First profile at which the support was no longer payoff-equivalent,
    /// or at which a best response left the neighborhood.
    pub counterexample: Option<CounterExample>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterExample {
    pub strategies: Vec<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub reason: String,
}

fn sample_in_neighborhood<R: Rng>(
    game: &dyn GameModel,
    eq_set: &EqSet,
    delta: f64,
    rng: &mut R,
) -> StrategyProfile {
    use rand_distr::{Distribution, StandardNormal};
    let space = game.space();
    let dim: usize = space.players().iter().map(|p| p.dim()).sum();
    for _ in 0..1000 {
        let base = eq_set.sample(space, rng).flatten();
        // uniform draw from the L2 δ-ball around the base point
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let radius = delta * rng.gen::<f64>().powf(1.0 / dim as f64);
        let mut flat = base;
        for (x, d) in flat.iter_mut().zip(&dir) {
            *x += radius * d / norm;
        }
        let mut offset = 0;
        let mut players = Vec::with_capacity(space.num_players());
        for p in space.players() {
            players.push(flat[offset..offset + p.dim()].to_vec());
            offset += p.dim();
        }
        let q = StrategyProfile::new(players);
        if space.contains(&q, 0.0) {
            return q;
        }
    }
    // extremely thin intersections: fall back to a point of the set itself
    eq_set.sample(space, rng)
}

fn sample_belief_near<R: Rng>(theta_bar: &Belief, eps: f64, rng: &mut R) -> Belief {
    for _ in 0..1000 {
        let perturbed: Vec<f64> = theta_bar
            .probs()
            .iter()
            .map(|p| (p + rng.gen_range(-eps..=eps)).max(0.0))
            .collect();
        if perturbed.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        if let Ok(theta) = Belief::from_probs(&perturbed) {
            if theta.l2_distance(theta_bar) < eps {
                return theta;
            }
        }
    }
    theta_bar.clone()
}

/// Samples the δ-neighborhood of `EQ(θ̄)` and verifies that the support of
/// `θ̄` stays payoff-equivalent there. In BR mode, additionally verifies that
/// best responses under beliefs near `θ̄` map the neighborhood into itself.
#[allow(clippy::too_many_arguments)]
pub fn check_local_stability_condition_b(
    game: &dyn GameModel,
    theta_bar: &Belief,
    delta: f64,
    n_samples: usize,
    mode: LearnMode,
    eps: f64,
    tol_kl: f64,
    seed: u64,
) -> Result<StabilityCheck> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let eq_set = game.equilibrium_set(theta_bar).ok_or(Error::MissingCapability {
        game: game.id().to_string(),
        capability: "an equilibrium map",
    })?;
    let support = theta_bar.support();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        let q = sample_in_neighborhood(game, &eq_set, delta, &mut rng);
        let equivalent = payoff_equivalent_set(game, &q, tol_kl);
        if let Some(&bad) = support.iter().find(|s| !equivalent.contains(s)) {
            return Ok(StabilityCheck {
                pass: false,
                samples: n_samples,
                counterexample: Some(CounterExample {
                    strategies: q.players().to_vec(),
                    theta: None,
                    reason: format!(
                        "parameter `{}` is not payoff-equivalent at this profile",
                        game.params().label(bad)
                    ),
                }),
            });
        }
        if mode == LearnMode::Br {
            let theta = sample_belief_near(theta_bar, eps, &mut rng);
            let mut intervals = Vec::with_capacity(game.num_players());
            for i in 0..game.num_players() {
                let (lo, hi) = game.best_response(&theta, &q, i).ok_or(Error::MissingCapability {
                    game: game.id().to_string(),
                    capability: "a best-response map",
                })?;
                intervals.push([lo, hi]);
            }
            // every selection corner of the BR product set must stay inside
            // the δ-neighborhood
            let corners = 1usize << game.num_players();
            for mask in 0..corners {
                let profile = StrategyProfile::new(
                    intervals
                        .iter()
                        .enumerate()
                        .map(|(i, iv)| vec![iv[(mask >> i) & 1]])
                        .collect(),
                );
                if eq_set.distance(&profile, game.space()) >= delta {
                    return Ok(StabilityCheck {
                        pass: false,
                        samples: n_samples,
                        counterexample: Some(CounterExample {
                            strategies: q.players().to_vec(),
                            theta: Some(theta.probs()),
                            reason: "a best response leaves the equilibrium neighborhood".into(),
                        }),
                    });
                }
            }
        }
    }
    Ok(StabilityCheck { pass: true, samples: n_samples, counterexample: None })
}

/// Globally stable fixed points exist iff every enumerated cluster carries
/// the complete-information belief.
pub fn check_global_stability(
    clusters: &[FixedPointCluster],
    theta_star: &Belief,
    tol: f64,
) -> Result<bool> {
    if clusters.is_empty() {
        return Err(Error::InvalidArgument("no fixed points supplied".into()));
    }
    let target = theta_star.probs();
    Ok(clusters.iter().all(|c| {
        c.theta
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            <= tol
    }))
}

/// When the support of `θ̄` stays payoff-equivalent near `EQ(θ̄)` and payoffs
/// are concave in own strategies, the fixed-point equilibria coincide with
/// the complete-information ones. Verifies both parts numerically.
pub fn check_complete_info_equivalence(
    game: &dyn GameModel,
    theta_bar: &Belief,
    delta: f64,
    tol: f64,
    n_samples: usize,
    seed: u64,
) -> Result<bool> {
    if !game.capabilities().payoff_concave_in_own_strategy {
        return Err(Error::MissingCapability {
            game: game.id().to_string(),
            capability: "concavity of payoffs in own strategies",
        });
    }
    let check = check_local_stability_condition_b(
        game, theta_bar, delta, n_samples, LearnMode::Eq, 0.0, 1e-9, seed,
    )?;
    if !check.pass {
        return Ok(false);
    }
    let theta_star = {
        let mut probs = vec![0.0; game.params().len()];
        probs[game.params().true_index()] = 1.0;
        Belief::from_probs(&probs)?
    };
    let eq_bar = game.equilibrium_set(theta_bar).ok_or(Error::MissingCapability {
        game: game.id().to_string(),
        capability: "an equilibrium map",
    })?;
    let eq_star = game.equilibrium_set(&theta_star).ok_or(Error::MissingCapability {
        game: game.id().to_string(),
        capability: "an equilibrium map",
    })?;
    Ok(match (eq_bar, eq_star) {
        (EqSet::Point(a), EqSet::Point(b)) => a.linf_distance(&b) <= tol,
        (EqSet::OffsetLine { offset: a }, EqSet::OffsetLine { offset: b }) => (a - b).abs() <= tol,
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games;

    #[test]
    fn threshold_spot_values() {
        // θ̄ = (1, 0), ε̂ = 0.1, γ = 0.9
        let theta = Belief::from_probs(&[1.0, 0.0]).unwrap();
        let t = stability_thresholds(&theta, 0.1, 0.9).unwrap();
        assert!((t.rho2 - 0.025).abs() < 1e-15);
        assert!((t.rho1 - 0.01 / 4.41).abs() < 1e-15);
        assert_eq!(t.n_outside_support, 1);
    }

    #[test]
    fn threshold_ordering_invariant_on_random_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let n = rng.gen_range(2..6);
            let support_size = rng.gen_range(1..n);
            let mut probs = vec![0.0; n];
            for p in probs.iter_mut().take(support_size) {
                *p = rng.gen_range(0.05..1.0);
            }
            let theta = Belief::from_probs(&probs).unwrap();
            let eps_hat = rng.gen_range(1e-3..1.0);
            let gamma = rng.gen_range(0.01..0.99);
            let t = stability_thresholds(&theta, eps_hat, gamma).unwrap();
            assert!(t.rho1 > 0.0);
            assert!(t.rho1 < t.rho2, "{t:?}");
            assert!(t.rho2 < eps_hat / n as f64, "{t:?}");
            assert!(t.rho3 > 0.0, "{t:?}");
            let s_star_prob = probs.iter().cloned().fold(0.0, f64::max)
                / probs.iter().sum::<f64>();
            let _ = s_star_prob;
            // ρ¹ sits below every supported probability, so the ratio bound
            // holds for any choice of s* in the support
            for &s in theta.support().iter() {
                let p = theta.prob(s);
                assert!(t.rho1 / (p - t.rho1) < t.rho2, "{t:?} at prob {p}");
            }
        }
    }

    #[test]
    fn cournot_complete_info_point_passes_condition_b() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[1.0, 0.0]).unwrap();
        let r = check_local_stability_condition_b(
            game.as_ref(), &theta, 0.1, 512, LearnMode::Eq, 0.0, 1e-9, 7,
        )
        .unwrap();
        assert!(r.pass);
    }

    #[test]
    fn cournot_mixed_point_fails_condition_b_with_counterexample() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.5, 0.5]).unwrap();
        let r = check_local_stability_condition_b(
            game.as_ref(), &theta, 0.05, 512, LearnMode::Eq, 0.0, 1e-9, 7,
        )
        .unwrap();
        assert!(!r.pass);
        assert!(r.counterexample.is_some());
    }

    #[test]
    fn increasing_penalty_mixed_belief_passes_near_equilibrium_line() {
        let game = games::build("coordination_increasing_penalty", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.5, 0.5]).unwrap();
        let r = check_local_stability_condition_b(
            game.as_ref(), &theta, 0.2, 512, LearnMode::Eq, 0.0, 1e-9, 7,
        )
        .unwrap();
        assert!(r.pass, "{:?}", r.counterexample);
        assert!(check_complete_info_equivalence(game.as_ref(), &theta, 0.2, 1e-9, 256, 3).unwrap());
    }

    #[test]
    fn cournot_mixed_belief_is_not_complete_info_equivalent() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.5, 0.5]).unwrap();
        assert!(!check_complete_info_equivalence(game.as_ref(), &theta, 0.05, 1e-6, 256, 3).unwrap());
        let star = Belief::from_probs(&[1.0, 0.0]).unwrap();
        assert!(check_complete_info_equivalence(game.as_ref(), &star, 0.05, 1e-6, 256, 3).unwrap());
    }

    #[test]
    fn global_stability_from_enumeration() {
        let public = games::build("public_good", &serde_json::Value::Null).unwrap();
        let clusters = crate::analysis::enumerate_fixed_points(public.as_ref(), 0.02, 0.05).unwrap();
        let star = Belief::from_probs(&[0.0, 1.0, 0.0]).unwrap();
        assert!(check_global_stability(&clusters, &star, 0.02).unwrap());

        let cournot = games::build("cournot", &serde_json::Value::Null).unwrap();
        let clusters = crate::analysis::enumerate_fixed_points(cournot.as_ref(), 0.01, 0.05).unwrap();
        let star = Belief::from_probs(&[1.0, 0.0]).unwrap();
        assert!(!check_global_stability(&clusters, &star, 0.02).unwrap());

        assert!(check_global_stability(&[], &star, 0.02).is_err());
    }
}
