//! Implementations behind the `analyze` subcommands. Each returns a JSON
//! report plus a pass/fail outcome; failures map to exit code 3 so scripts
//! can gate on property checks.

use std::path::Path;

use serde_json::{json, Value};

use crate::analysis::{self, KlValue};
use crate::belief::{conditional_ratio_expectation, log_true_belief_drift};
use crate::config::RunMode;
use crate::error::{Error, Result};
use crate::games;
use crate::model::{Belief, StrategyProfile, SUPPORT_TOL};
use crate::runner::{read_trajectory_csv, summarize_rows, CsvSchema};

/// Result of a check-style command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CmdOutcome {
    Pass,
    CheckFailed(String),
}

pub fn parse_scalar_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad number `{c}`: {e}")))
        })
        .collect()
}

/// Splits a flat value list into per-player strategy vectors for a game.
pub fn profile_from_flat(game: &dyn crate::model::GameModel, flat: &[f64]) -> Result<StrategyProfile> {
    let dims: Vec<usize> = game.space().players().iter().map(|p| p.dim()).collect();
    let total: usize = dims.iter().sum();
    if flat.len() != total {
        return Err(Error::InvalidArgument(format!(
            "expected {total} strategy values, got {}",
            flat.len()
        )));
    }
    let mut players = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for d in dims {
        players.push(flat[offset..offset + d].to_vec());
        offset += d;
    }
    Ok(StrategyProfile::new(players))
}

fn emit(report: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

/// `analyze fixed-points`: enumerate Ω on a belief grid and report whether a
/// globally stable fixed point exists (all clusters at the true belief).
pub fn analyze_fixed_points(
    game_id: &str,
    overrides: &Value,
    grid: f64,
    dedup: f64,
    out: Option<&Path>,
) -> Result<CmdOutcome> {
    let game = games::build(game_id, overrides)?;
    let clusters = analysis::enumerate_fixed_points(game.as_ref(), grid, dedup)?;
    let mut star = vec![0.0; game.params().len()];
    star[game.params().true_index()] = 1.0;
    let globally_stable = if clusters.is_empty() {
        false
    } else {
        analysis::check_global_stability(&clusters, &Belief::from_probs(&star)?, dedup)?
    };
    let report = json!({
        "game": game_id,
        "grid_step": grid,
        "dedup_radius": dedup,
        "fixed_points": clusters,
        "globally_stable": globally_stable,
    });
    emit(&report, out)?;
    Ok(CmdOutcome::Pass)
}

/// `analyze stability`: thresholds at a fixed-point belief plus the sampled
/// condition-(b) verdict. Fails when a counterexample is found.
#[allow(clippy::too_many_arguments)]
pub fn analyze_stability(
    game_id: &str,
    overrides: &Value,
    theta: &[f64],
    eps_hat: f64,
    gamma: f64,
    delta: f64,
    samples: usize,
    mode: RunMode,
    eps_belief: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<CmdOutcome> {
    let game = games::build(game_id, overrides)?;
    let theta = Belief::from_probs(theta)?;
    let thresholds = analysis::stability_thresholds(&theta, eps_hat, gamma)?;
    let condition_b = analysis::check_local_stability_condition_b(
        game.as_ref(),
        &theta,
        delta,
        samples,
        mode.learn_mode(),
        eps_belief,
        1e-9,
        seed,
    )?;
    let pass = condition_b.pass;
    let report = json!({
        "game": game_id,
        "thresholds": thresholds,
        "condition_b": condition_b,
    });
    emit(&report, out)?;
    if pass {
        Ok(CmdOutcome::Pass)
    } else {
        Ok(CmdOutcome::CheckFailed("condition (b) failed on a sampled profile".into()))
    }
}

/// `analyze rate`: fit per-parameter decay slopes from a trajectory CSV and
/// compare them with the analytic KL rates at the terminal strategies.
#[allow(clippy::too_many_arguments)]
pub fn analyze_rate(
    trajectory: &Path,
    game_id: &str,
    overrides: &Value,
    burn_in: f64,
    tol: f64,
    out: Option<&Path>,
) -> Result<CmdOutcome> {
    let game = games::build(game_id, overrides)?;
    let labels = game.params().labels().to_vec();
    let schema = CsvSchema::new(
        RunMode::Eq,
        &labels,
        0,
        &game.space().players().iter().map(|p| p.dim()).collect::<Vec<_>>(),
        game.observation_dim(),
    );
    let rows = read_trajectory_csv(trajectory, &schema)?;
    let summary = summarize_rows(
        &rows,
        0,
        0,
        &crate::dynamics::ConvergenceCriterion::default(),
        &[],
        &labels,
        burn_in,
    )?;
    let terminal = rows.last().unwrap();
    let q = StrategyProfile::new(terminal.strategies.clone());
    let s_true = game.params().true_index();
    let mut table = Vec::new();
    let mut failed = None;
    for (s, label) in labels.iter().enumerate() {
        let in_support = terminal.belief.as_ref().unwrap()[s] > SUPPORT_TOL;
        let slope = summary.decay_slopes.get(label).cloned().flatten();
        let kl = analysis::kl_divergence(game.as_ref(), s_true, s, &q).value();
        let verdict = if in_support {
            "no-decay"
        } else {
            match slope {
                Some(m) if kl > 0.0 && ((m + kl).abs() <= tol * kl) => "ok",
                Some(_) => "off",
                None => "unfittable",
            }
        };
        if verdict == "off" || verdict == "unfittable" {
            failed = Some(label.clone());
        }
        table.push(json!({
            "parameter": label,
            "in_terminal_support": in_support,
            "fitted_slope": slope,
            "analytic_kl_at_terminal": kl,
            "verdict": verdict,
        }));
    }
    let report = json!({
        "game": game_id,
        "trajectory": trajectory.display().to_string(),
        "burn_in": burn_in,
        "tolerance": tol,
        "rates": table,
    });
    emit(&report, out)?;
    match failed {
        None => Ok(CmdOutcome::Pass),
        Some(label) => Ok(CmdOutcome::CheckFailed(format!(
            "fitted slope for `{label}` disagrees with the analytic rate"
        ))),
    }
}

/// `analyze flow`: integrate the best-response flow at a fixed belief; checks
/// expected-potential monotonicity (when available) and the terminal
/// best-response residual.
#[allow(clippy::too_many_arguments)]
pub fn analyze_flow(
    game_id: &str,
    overrides: &Value,
    theta: &[f64],
    q0: &[f64],
    weights: Option<Vec<f64>>,
    dt: f64,
    horizon: f64,
    path_csv: Option<&Path>,
    out: Option<&Path>,
) -> Result<CmdOutcome> {
    let game = games::build(game_id, overrides)?;
    let theta = Belief::from_probs(theta)?;
    let q0 = profile_from_flat(game.as_ref(), q0)?;
    let weights = weights.unwrap_or_else(|| vec![1.0; game.num_players()]);
    let flow = analysis::br_flow_integrate(game.as_ref(), &theta, &q0, &weights, dt, horizon)?;

    let monotone = flow.expected_potential.as_ref().map(|ps| {
        ps.windows(2).all(|w| w[1] >= w[0] - 1e-8)
    });
    let residual_ok = flow.terminal_br_residual <= 1e-3;

    if let Some(path) = path_csv {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dims: Vec<usize> = game.space().players().iter().map(|p| p.dim()).collect();
        let mut header = vec!["tau".to_string()];
        for (i, d) in dims.iter().enumerate() {
            for k in 0..*d {
                header.push(format!("q_{}_{k}", i + 1));
            }
        }
        if flow.expected_potential.is_some() {
            header.push("expected_potential".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for (i, tau) in flow.times.iter().enumerate() {
            let mut cells = vec![crate::runner::fmt_f64(*tau)];
            cells.extend(flow.path[i].flatten().iter().map(|x| crate::runner::fmt_f64(*x)));
            if let Some(ps) = &flow.expected_potential {
                cells.push(crate::runner::fmt_f64(ps[i]));
            }
            writeln!(w, "{}", cells.join(","))?;
        }
    }

    let terminal = flow.path.last().unwrap();
    let report = json!({
        "game": game_id,
        "theta": theta.probs(),
        "weights": weights,
        "dt": dt,
        "horizon": horizon,
        "terminal": terminal.players(),
        "terminal_eq_distance": flow.terminal_eq_distance,
        "terminal_br_residual": flow.terminal_br_residual,
        "potential_monotone": monotone,
    });
    emit(&report, out)?;
    if monotone == Some(false) {
        return Ok(CmdOutcome::CheckFailed("expected potential decreased along the flow".into()));
    }
    if !residual_ok {
        return Ok(CmdOutcome::CheckFailed("terminal best-response residual above 1e-3".into()));
    }
    Ok(CmdOutcome::Pass)
}

/// `analyze martingale`: Monte Carlo belief-ratio expectations against prior
/// ratios, and the submartingale drift of `log θ(s*)` against the quadrature
/// KL value.
#[allow(clippy::too_many_arguments)]
pub fn analyze_martingale(
    game_id: &str,
    overrides: &Value,
    theta: &[f64],
    q_flat: &[f64],
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<CmdOutcome> {
    let game = games::build(game_id, overrides)?;
    let theta = Belief::from_probs(theta)?;
    let q = profile_from_flat(game.as_ref(), q_flat)?;
    let s_true = game.params().true_index();

    let mut ratio_table = Vec::new();
    let mut pass = true;
    for s in 0..game.params().len() {
        if s == s_true {
            continue;
        }
        let prior_ratio = (theta.log_prob(s) - theta.log_prob(s_true)).exp();
        let (estimate, std_error) =
            conditional_ratio_expectation(game.as_ref(), &theta, &q, s, samples, seed ^ s as u64)?;
        let within = (estimate - prior_ratio).abs() <= 3.0 * std_error;
        if !within {
            pass = false;
        }
        ratio_table.push(json!({
            "parameter": game.params().label(s),
            "prior_ratio": prior_ratio,
            "estimate": estimate,
            "std_error": std_error,
            "within_3_std_errors": within,
        }));
    }

    let (drift, drift_se) = log_true_belief_drift(game.as_ref(), &theta, &q, samples, seed ^ 0xD1F7)?;
    let kl = analysis::kl_true_vs_mixture(game.as_ref(), &theta, &q);
    let drift_matches = (drift - kl).abs() <= 3.0 * drift_se;
    let drift_nonneg = drift >= -3.0 * drift_se;
    if !(drift_matches && drift_nonneg) {
        pass = false;
    }

    let report = json!({
        "game": game_id,
        "theta": theta.probs(),
        "strategies": q.players(),
        "samples": samples,
        "belief_ratio_martingale": ratio_table,
        "submartingale_drift": {
            "estimate": drift,
            "std_error": drift_se,
            "kl_true_vs_mixture": kl,
            "matches_kl_within_3_std_errors": drift_matches,
            "nonnegative_within_3_std_errors": drift_nonneg,
        },
    });
    emit(&report, out)?;
    if pass {
        Ok(CmdOutcome::Pass)
    } else {
        Ok(CmdOutcome::CheckFailed("a martingale diagnostic left its 3σ band".into()))
    }
}

/// `analyze schedule`: assumption report for a named stepsize schedule.
pub fn analyze_schedule(
    spec: crate::dynamics::ScheduleSpec,
    players: usize,
    horizon: usize,
    out: Option<&Path>,
) -> Result<CmdOutcome> {
    let schedule = crate::dynamics::StepsizeSchedule::new(spec, players)?;
    let report = crate::dynamics::validate_schedule(&schedule, horizon)?;
    emit(&serde_json::to_value(&report)?, out)?;
    Ok(CmdOutcome::Pass)
}

/// KL values for the `martingale`/`rate` flavored spot checks: analytic and
/// Monte Carlo side by side.
pub fn analyze_kl(
    game_id: &str,
    overrides: &Value,
    s_other: usize,
    q_flat: &[f64],
    samples: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<CmdOutcome> {
    let game = games::build(game_id, overrides)?;
    let q = profile_from_flat(game.as_ref(), q_flat)?;
    let s_true = game.params().true_index();
    let analytic = analysis::kl_divergence(game.as_ref(), s_true, s_other, &q);
    let mc = analysis::kl_divergence_monte_carlo(game.as_ref(), s_true, s_other, &q, samples, seed);
    let (estimate, std_error) = match mc {
        KlValue::MonteCarlo { estimate, std_error } => (estimate, std_error),
        _ => unreachable!(),
    };
    let within = (estimate - analytic.value()).abs() <= 4.0 * std_error;
    let report = json!({
        "game": game_id,
        "s_true": game.params().label(s_true),
        "s": game.params().label(s_other),
        "analytic": analytic.value(),
        "monte_carlo": {"estimate": estimate, "std_error": std_error},
        "within_4_std_errors": within,
    });
    emit(&report, out)?;
    if within {
        Ok(CmdOutcome::Pass)
    } else {
        Ok(CmdOutcome::CheckFailed("Monte Carlo KL disagrees with the analytic value".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_profile_split_respects_dims() {
        let game = games::build("finite_matrix", &Value::Null).unwrap();
        let q = profile_from_flat(game.as_ref(), &[1.0, 0.0, 0.5, 0.5]).unwrap();
        assert_eq!(q.player(0), &[1.0, 0.0]);
        assert_eq!(q.player(1), &[0.5, 0.5]);
        assert!(profile_from_flat(game.as_ref(), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn scalar_list_parses() {
        assert_eq!(parse_scalar_list("1,0.5, 2e-3").unwrap(), vec![1.0, 0.5, 2e-3]);
        assert!(parse_scalar_list("1,x").is_err());
    }
}
