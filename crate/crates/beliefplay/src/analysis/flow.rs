//! Explicit-Euler integration of the continuous-time best-response inclusion
//! `dq̃/dτ ∈ A · (BR(θ, q̃) - q̃)` at a fixed belief, with the interval
//! midpoint as the selection. Fixed-step integration keeps runs reproducible;
//! the potential-monotonicity slack downstream absorbs the O(dt) error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{project_strategy, Belief, GameModel, StrategyProfile};

/// Path of the integrated flow, with expected-potential values when the game
/// has a potential function.
#[derive(Debug, Clone, Serialize)]
pub struct FlowResult {
    pub times: Vec<f64>,
    pub path: Vec<StrategyProfile>,
    pub expected_potential: Option<Vec<f64>>,
    /// Euclidean distance from the terminal point to `EQ(θ)`, when the
    /// equilibrium set is representable.
    pub terminal_eq_distance: Option<f64>,
    /// Per-player best-response residual at the terminal point.
    pub terminal_br_residual: f64,
}

fn expected_potential(game: &dyn GameModel, theta: &Belief, q: &StrategyProfile) -> Option<f64> {
    let mut total = 0.0;
    for s in 0..theta.len() {
        let p = theta.prob(s);
        if p == 0.0 {
            continue;
        }
        total += p * game.potential(s, q)?;
    }
    Some(total)
}

/// Integrates the flow from `q0` for `horizon` time units with step `dt`.
/// `weights` are the per-player diagonal entries of `A`, each in `(0, 1]`.
pub fn br_flow_integrate(
    game: &dyn GameModel,
    theta: &Belief,
    q0: &StrategyProfile,
    weights: &[f64],
    dt: f64,
    horizon: f64,
) -> Result<FlowResult> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidArgument("dt and horizon must be positive".into()));
    }
    if weights.len() != game.num_players() || weights.iter().any(|w| !(0.0 < *w && *w <= 1.0)) {
        return Err(Error::InvalidArgument("weights must lie in (0, 1], one per player".into()));
    }
    if !game.space().contains(q0, 1e-9) {
        return Err(Error::InfeasibleState("flow start outside the strategy space".into()));
    }
    if !game.capabilities().has_best_response_map {
        return Err(Error::MissingCapability {
            game: game.id().to_string(),
            capability: "a best-response map",
        });
    }

    let steps = (horizon / dt).ceil() as usize;
    let has_potential = game.capabilities().has_potential;
    let mut q = q0.clone();
    let mut times = Vec::with_capacity(steps + 1);
    let mut path = Vec::with_capacity(steps + 1);
    let mut potentials = if has_potential { Some(Vec::with_capacity(steps + 1)) } else { None };

    for k in 0..=steps {
        times.push(k as f64 * dt);
        path.push(q.clone());
        if let Some(ps) = potentials.as_mut() {
            ps.push(expected_potential(game, theta, &q).ok_or(Error::MissingCapability {
                game: game.id().to_string(),
                capability: "a potential function",
            })?);
        }
        if k == steps {
            break;
        }
        let mut next = q.clone();
        for i in 0..game.num_players() {
            let (lo, hi) = game.best_response(theta, &q, i).unwrap();
            let h = 0.5 * (lo + hi);
            let qi = q.scalar(i);
            next.player_mut(i)[0] = qi + dt * weights[i] * (h - qi);
        }
        q = project_strategy(&next, game.space());
    }

    let terminal_eq_distance = game.equilibrium_set(theta).map(|set| set.distance(&q, game.space()));
    let mut residual = 0.0f64;
    for i in 0..game.num_players() {
        let (lo, hi) = game.best_response(theta, &q, i).unwrap();
        let qi = q.scalar(i);
        residual = residual.max((qi - qi.clamp(lo, hi)).abs());
    }

    Ok(FlowResult {
        times,
        path,
        expected_potential: potentials,
        terminal_eq_distance,
        terminal_br_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games;

    #[test]
    fn cournot_flow_reaches_complete_info_equilibrium() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[1.0, 0.0]).unwrap();
        let q0 = StrategyProfile::from_scalars(&[0.0, 0.0]);
        let flow =
            br_flow_integrate(game.as_ref(), &theta, &q0, &[1.0, 1.0], 1e-3, 50.0).unwrap();
        let terminal = flow.path.last().unwrap();
        assert!((terminal.scalar(0) - 2.0 / 3.0).abs() < 1e-3);
        assert!((terminal.scalar(1) - 2.0 / 3.0).abs() < 1e-3);
        assert!(flow.terminal_eq_distance.unwrap() < 2e-3);
    }

    #[test]
    fn flow_constant_at_equilibrium() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[1.0, 0.0]).unwrap();
        let q0 = StrategyProfile::from_scalars(&[2.0 / 3.0, 2.0 / 3.0]);
        let flow = br_flow_integrate(game.as_ref(), &theta, &q0, &[1.0, 0.5], 1e-3, 1.0).unwrap();
        for p in &flow.path {
            assert!(p.linf_distance(&q0) < 1e-12);
        }
    }

    #[test]
    fn public_good_flow_contracts_from_far_corner() {
        let game = games::build("public_good", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.0, 1.0, 0.0]).unwrap();
        let q0 = StrategyProfile::from_scalars(&[10.0, 10.0]);
        let flow = br_flow_integrate(game.as_ref(), &theta, &q0, &[1.0, 1.0], 1e-3, 50.0).unwrap();
        let terminal = flow.path.last().unwrap();
        assert!((terminal.scalar(0) - 1.0 / 3.0).abs() < 1e-3);
        assert!((terminal.scalar(1) - 1.0 / 3.0).abs() < 1e-3);
        // dominance-solvable game: no potential is recorded
        assert!(flow.expected_potential.is_none());
    }

    #[test]
    fn potential_nondecreasing_along_cournot_flow() {
        let game = games::build("cournot", &serde_json::Value::Null).unwrap();
        let theta = Belief::from_probs(&[0.3, 0.7]).unwrap();
        let q0 = StrategyProfile::from_scalars(&[5.0, 0.1]);
        let flow = br_flow_integrate(game.as_ref(), &theta, &q0, &[1.0, 0.6], 1e-3, 30.0).unwrap();
        let ps = flow.expected_potential.as_ref().unwrap();
        for w in ps.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "potential dropped: {} -> {}", w[0], w[1]);
        }
    }
}
