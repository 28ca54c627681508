//! Learning loops driven by point estimates instead of the full Bayesian
//! belief: MAP over a gridded continuous parameter box, and OLS on games
//! whose observation is affine in the strategies.
//!
//! When an estimate is not yet available (OLS with a rank-deficient Gram
//! matrix and no initial guess), players hold their strategies for the step.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::belief::{map_estimate, GridLikelihoodHistory, MapGrid, OlsState};
use crate::dynamics::{ConvergenceCriterion, ConvergenceVerdict, LearnMode, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::games::PointParamGame;
use crate::model::{
    gaussian_log_pdf, project_strategy, sample_observation, ChannelPoint, PayoffObservation,
    StrategyProfile,
};

/// Which point estimator drives the run.
#[derive(Debug, Clone)]
pub enum EstimatorSpec {
    Map {
        grid: MapGrid,
        /// Per-grid-point log prior; `None` means uniform (the MAP estimate
        /// is then the MLE).
        prior_log_density: Option<Vec<f64>>,
    },
    Ols {
        /// Estimate to act on before the Gram matrix becomes well
        /// conditioned.
        initial: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct PointRecord {
    pub step: usize,
    /// `None` until the estimator produces its first value.
    pub estimate: Option<Vec<f64>>,
    pub strategies: StrategyProfile,
    pub obs: Option<PayoffObservation>,
}

#[derive(Debug, Clone)]
pub struct PointTrajectory {
    pub game_id: String,
    pub mode: LearnMode,
    pub estimator: &'static str,
    pub schedule_id: String,
    pub seed: u64,
    pub records: Vec<PointRecord>,
    pub verdict: ConvergenceVerdict,
}

impl PointTrajectory {
    pub fn terminal(&self) -> &PointRecord {
        self.records.last().expect("at least the initial state")
    }
}

enum EstimatorState {
    Map { grid: MapGrid, prior: Option<Vec<f64>>, history: GridLikelihoodHistory },
    Ols { states: Vec<OlsState>, initial: Option<Vec<f64>> },
}

impl EstimatorState {
    fn name(&self) -> &'static str {
        match self {
            EstimatorState::Map { .. } => "map",
            EstimatorState::Ols { .. } => "ols",
        }
    }
}

/// Runs MAP- or OLS-driven dynamics on a game exposing a continuous-parameter
/// view. Mirrors `run_dynamics`, with the belief replaced by the estimate.
#[allow(clippy::too_many_arguments)]
pub fn run_point_dynamics(
    game: &dyn PointParamGame,
    mode: LearnMode,
    estimator: EstimatorSpec,
    q1: &StrategyProfile,
    schedule: &StepsizeSchedule,
    max_steps: usize,
    criterion: &ConvergenceCriterion,
    seed: u64,
) -> Result<PointTrajectory> {
    if !game.space().contains(q1, 1e-9) {
        return Err(Error::InfeasibleState("initial strategies outside the strategy space".into()));
    }
    if schedule.num_players() != game.num_players() {
        return Err(Error::InvalidArgument("schedule player count mismatch".into()));
    }
    if criterion.window < 2 {
        return Err(Error::InvalidArgument("convergence window must be at least 2".into()));
    }
    let mut state = match estimator {
        EstimatorSpec::Map { grid, prior_log_density } => {
            if let Some(p) = &prior_log_density {
                if p.len() != grid.len() {
                    return Err(Error::InvalidArgument("MAP prior length mismatch".into()));
                }
            }
            let history = GridLikelihoodHistory::new(&grid);
            EstimatorState::Map { grid, prior: prior_log_density, history }
        }
        EstimatorSpec::Ols { initial } => {
            if game.observation_dim() != 1 {
                return Err(Error::InvalidArgument(
                    "OLS modes require a one-dimensional observation channel".into(),
                ));
            }
            if let Some(init) = &initial {
                if init.len() != game.point_dim() {
                    return Err(Error::InvalidArgument("OLS initial estimate dimension mismatch".into()));
                }
            }
            let dim = game.ols_regressor(q1).len();
            EstimatorState::Ols { states: vec![OlsState::new(dim)], initial }
        }
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let s_star = game.params().true_index();
    let mut q = q1.clone();
    let mut estimate: Option<Vec<f64>> = match &state {
        EstimatorState::Ols { initial, .. } => initial.clone(),
        EstimatorState::Map { .. } => None,
    };
    let mut records = vec![PointRecord {
        step: 1,
        estimate: estimate.clone(),
        strategies: q.clone(),
        obs: None,
    }];

    let mut quiet_run = 0usize;
    let mut verdict = ConvergenceVerdict::MaxStepsReached;
    for t in 1..=max_steps {
        let at = ChannelPoint::Strategies(q.clone());
        let obs = sample_observation(game, s_star, &at, &mut rng);
        records.last_mut().unwrap().obs = Some(obs.clone());

        match &mut state {
            EstimatorState::Map { grid, history, .. } => {
                history.accumulate(grid, |point| {
                    let mean = game.point_observation_mean(point, &at);
                    let vars = game.point_observation_variances(point);
                    obs.values
                        .iter()
                        .zip(mean.iter().zip(&vars))
                        .map(|(c, (m, v))| gaussian_log_pdf(*c, *m, *v))
                        .sum()
                });
            }
            EstimatorState::Ols { states, .. } => {
                let regressor = game.ols_regressor(&q);
                states[0] = states[0].update(&regressor, obs.values[0]);
            }
        }

        let next_estimate = match &state {
            EstimatorState::Map { grid, prior, history } => {
                Some(map_estimate(history, prior.as_deref(), grid)?)
            }
            EstimatorState::Ols { states, initial } => match states[0].estimate() {
                Ok(coeffs) => Some(game.point_from_ols(&coeffs)),
                // hold the previous estimate until the normal equations are
                // usable
                Err(_) => estimate.clone().or_else(|| initial.clone()),
            },
        };

        let rates = schedule.rates(t);
        let q_next = match &next_estimate {
            None => q.clone(),
            Some(point) => {
                let target: Vec<Vec<f64>> = match mode {
                    LearnMode::Eq => game.point_equilibrium(point).players().to_vec(),
                    LearnMode::Br => (0..game.num_players())
                        .map(|i| vec![game.point_best_response(point, &q, i)])
                        .collect(),
                };
                let mixed = StrategyProfile::new(
                    (0..game.num_players())
                        .map(|i| {
                            let a = rates[i];
                            q.player(i)
                                .iter()
                                .zip(&target[i])
                                .map(|(qi, gi)| (1.0 - a) * qi + a * gi)
                                .collect()
                        })
                        .collect(),
                );
                project_strategy(&mixed, game.space())
            }
        };

        let d_est = match (&estimate, &next_estimate) {
            (Some(a), Some(b)) => {
                a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            }
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        let d_q = q_next.linf_distance(&q);
        estimate = next_estimate;
        q = q_next;
        records.push(PointRecord { step: t + 1, estimate: estimate.clone(), strategies: q.clone(), obs: None });

        if d_est <= criterion.eps_theta && d_q <= criterion.eps_q {
            quiet_run += 1;
        } else {
            quiet_run = 0;
        }
        if quiet_run >= criterion.window {
            verdict = ConvergenceVerdict::Converged { stable_since: t + 1 - quiet_run, detected_at: t + 1 };
            break;
        }
    }

    Ok(PointTrajectory {
        game_id: game.id().to_string(),
        mode,
        estimator: state.name(),
        schedule_id: schedule.id(),
        seed,
        records,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ScheduleSpec;
    use crate::games;

    #[test]
    fn ols_without_initial_estimate_holds_strategies() {
        let game = games::build_point("cournot", &serde_json::Value::Null).unwrap();
        let q1 = StrategyProfile::from_scalars(&[0.25, 0.25]);
        let sched = StepsizeSchedule::new(ScheduleSpec::Constant { value: 1.0 }, 2).unwrap();
        let traj = run_point_dynamics(
            game.as_ref(),
            LearnMode::Eq,
            EstimatorSpec::Ols { initial: None },
            &q1,
            &sched,
            20,
            &ConvergenceCriterion::default(),
            4,
        )
        .unwrap();
        // constant regressors keep the Gram matrix singular, so q never moves
        for rec in &traj.records {
            assert_eq!(rec.strategies, q1);
        }
    }

    #[test]
    fn ols_with_initial_estimate_converges_to_true_equilibrium() {
        let game = games::build_point("cournot", &serde_json::Value::Null).unwrap();
        let q1 = StrategyProfile::from_scalars(&[0.25, 0.25]);
        let sched = StepsizeSchedule::new(ScheduleSpec::Harmonic, 2).unwrap();
        let traj = run_point_dynamics(
            game.as_ref(),
            LearnMode::Eq,
            EstimatorSpec::Ols { initial: Some(vec![3.0, 2.0]) },
            &q1,
            &sched,
            20_000,
            &ConvergenceCriterion::default(),
            4,
        )
        .unwrap();
        let terminal = traj.terminal();
        let est = terminal.estimate.as_ref().unwrap();
        assert!((est[0] - 2.0).abs() < 0.2, "alpha {est:?}");
        assert!((est[1] - 1.0).abs() < 0.2, "beta {est:?}");
        assert!((terminal.strategies.scalar(0) - 2.0 / 3.0).abs() < 0.05);
    }
}
