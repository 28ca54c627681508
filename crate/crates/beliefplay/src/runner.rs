//! Batch execution of seeded runs, trajectory persistence (CSV), and run
//! summaries (JSON). Runs execute in a parallel pool; per-run seeds derive
//! from the master seed and run index through a fixed 64-bit mix, so results
//! do not depend on execution order.
//!
//! Floats are written with 17 significant digits, which round-trips `f64`
//! exactly; summaries recomputed from a re-ingested CSV are bit-identical.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, FixedPointCluster};
use crate::belief::MapGrid;
use crate::config::{ExperimentConfig, RunMode};
use crate::dynamics::{
    run_dynamics, run_point_dynamics, ConvergenceCriterion, EstimatorSpec, PointTrajectory,
    StepsizeSchedule, Trajectory,
};
use crate::error::{Error, Result};
use crate::games;
use crate::model::{Belief, StrategyProfile, SUPPORT_TOL};

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Per-run seed: the run index mixed into the master seed.
pub fn derive_run_seed(master_seed: u64, run_index: usize) -> u64 {
    mix64(master_seed ^ mix64(run_index as u64))
}

/// 17 significant digits: lossless round-trip for `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One CSV row in canonical form. `belief` holds linear probabilities for
/// belief modes, `estimate` the point estimate for MAP/OLS modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub step: usize,
    pub belief: Option<Vec<f64>>,
    pub estimate: Option<Vec<f64>>,
    pub strategies: Vec<Vec<f64>>,
    pub obs: Option<Vec<f64>>,
}

/// Column layout, a pure function of (game, mode).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub header: Vec<String>,
    pub theta_labels: Vec<String>,
    pub estimate_dim: usize,
    pub player_dims: Vec<usize>,
    pub obs_dim: usize,
}

impl CsvSchema {
    pub fn new(
        mode: RunMode,
        theta_labels: &[String],
        estimate_dim: usize,
        player_dims: &[usize],
        obs_dim: usize,
    ) -> Self {
        let mut header = vec!["step".to_string()];
        if mode.uses_belief() {
            for l in theta_labels {
                header.push(format!("theta_{l}"));
            }
        } else {
            for k in 0..estimate_dim {
                header.push(format!("est_{k}"));
            }
        }
        for (i, d) in player_dims.iter().enumerate() {
            for k in 0..*d {
                header.push(format!("q_{}_{k}", i + 1));
            }
        }
        for k in 0..obs_dim {
            header.push(format!("obs_{k}"));
        }
        Self {
            header,
            theta_labels: if mode.uses_belief() { theta_labels.to_vec() } else { Vec::new() },
            estimate_dim: if mode.uses_belief() { 0 } else { estimate_dim },
            player_dims: player_dims.to_vec(),
            obs_dim,
        }
    }
}

pub fn write_trajectory_csv(path: &Path, schema: &CsvSchema, rows: &[Row]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{}", schema.header.join(","))?;
    for row in rows {
        let mut cells: Vec<String> = Vec::with_capacity(schema.header.len());
        cells.push(row.step.to_string());
        if !schema.theta_labels.is_empty() {
            let b = row.belief.as_ref().expect("belief rows carry probabilities");
            cells.extend(b.iter().map(|x| fmt_f64(*x)));
        }
        if schema.estimate_dim > 0 {
            match &row.estimate {
                Some(e) => cells.extend(e.iter().map(|x| fmt_f64(*x))),
                None => cells.extend(std::iter::repeat(String::new()).take(schema.estimate_dim)),
            }
        }
        for qi in &row.strategies {
            cells.extend(qi.iter().map(|x| fmt_f64(*x)));
        }
        match &row.obs {
            Some(o) => cells.extend(o.iter().map(|x| fmt_f64(*x))),
            None => cells.extend(std::iter::repeat(String::new()).take(schema.obs_dim)),
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_trajectory_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<Row>> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory file".into()))??;
    let found: Vec<&str> = header.split(',').collect();
    if found != schema.header.iter().map(|s| s.as_str()).collect::<Vec<_>>() {
        return Err(Error::InvalidArgument(format!("unexpected CSV header `{header}`")));
    }
    let parse = |cell: &str| -> Result<f64> {
        cell.parse::<f64>()
            .map_err(|e| Error::InvalidArgument(format!("bad float `{cell}`: {e}")))
    };
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != schema.header.len() {
            return Err(Error::InvalidArgument("CSV row width mismatch".into()));
        }
        let mut idx = 0usize;
        let step: usize = cells[idx]
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("bad step: {e}")))?;
        idx += 1;
        let belief = if !schema.theta_labels.is_empty() {
            let mut b = Vec::with_capacity(schema.theta_labels.len());
            for _ in 0..schema.theta_labels.len() {
                b.push(parse(cells[idx])?);
                idx += 1;
            }
            Some(b)
        } else {
            None
        };
        let estimate = if schema.estimate_dim > 0 {
            if cells[idx].is_empty() {
                idx += schema.estimate_dim;
                None
            } else {
                let mut e = Vec::with_capacity(schema.estimate_dim);
                for _ in 0..schema.estimate_dim {
                    e.push(parse(cells[idx])?);
                    idx += 1;
                }
                Some(e)
            }
        } else {
            None
        };
        let mut strategies = Vec::with_capacity(schema.player_dims.len());
        for d in &schema.player_dims {
            let mut qi = Vec::with_capacity(*d);
            for _ in 0..*d {
                qi.push(parse(cells[idx])?);
                idx += 1;
            }
            strategies.push(qi);
        }
        let obs = if schema.obs_dim > 0 && !cells[idx].is_empty() {
            let mut o = Vec::with_capacity(schema.obs_dim);
            for _ in 0..schema.obs_dim {
                o.push(parse(cells[idx])?);
                idx += 1;
            }
            Some(o)
        } else {
            None
        };
        rows.push(Row { step, belief, estimate, strategies, obs });
    }
    Ok(rows)
}

pub fn trajectory_rows(traj: &Trajectory) -> Vec<Row> {
    traj.records
        .iter()
        .map(|r| Row {
            step: r.step,
            belief: Some(r.theta.probs()),
            estimate: None,
            strategies: r.strategies.players().to_vec(),
            obs: r.obs.as_ref().map(|o| o.values.clone()),
        })
        .collect()
}

pub fn point_trajectory_rows(traj: &PointTrajectory) -> Vec<Row> {
    traj.records
        .iter()
        .map(|r| Row {
            step: r.step,
            belief: None,
            estimate: r.estimate.clone(),
            strategies: r.strategies.players().to_vec(),
            obs: r.obs.as_ref().map(|o| o.values.clone()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestFixedPoint {
    pub cluster: usize,
    pub distance: f64,
}

/// Everything reported per run; computed from the canonical rows alone so a
/// re-ingested CSV reproduces it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_index: usize,
    pub seed: u64,
    pub steps: usize,
    pub converged: bool,
    pub stable_since: Option<usize>,
    pub terminal_belief: Option<Vec<f64>>,
    pub terminal_estimate: Option<Vec<f64>>,
    pub terminal_strategies: Vec<Vec<f64>>,
    pub nearest_fixed_point: Option<NearestFixedPoint>,
    /// Fitted decay slope of `log θ^t(s)` per excluded parameter label;
    /// `null` when the parameter stays in the terminal support.
    pub decay_slopes: BTreeMap<String, Option<f64>>,
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Summarizes one run from its rows. `burn_in` is the fraction of the
/// trajectory dropped before rate fitting.
pub fn summarize_rows(
    rows: &[Row],
    run_index: usize,
    seed: u64,
    criterion: &ConvergenceCriterion,
    clusters: &[FixedPointCluster],
    theta_labels: &[String],
    burn_in: f64,
) -> Result<RunSummary> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let last = rows.last().unwrap();

    // Re-derive the convergence verdict from consecutive state differences.
    let mut quiet_run = 0usize;
    let mut stable_since = None;
    for w in rows.windows(2) {
        let d_state = match (&w[0].belief, &w[1].belief) {
            (Some(a), Some(b)) => linf(a, b),
            _ => match (&w[0].estimate, &w[1].estimate) {
                (Some(a), Some(b)) => linf(a, b),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            },
        };
        let d_q = linf(
            &w[0].strategies.iter().flatten().copied().collect::<Vec<_>>(),
            &w[1].strategies.iter().flatten().copied().collect::<Vec<_>>(),
        );
        if d_state <= criterion.eps_theta && d_q <= criterion.eps_q {
            quiet_run += 1;
        } else {
            quiet_run = 0;
        }
        if quiet_run >= criterion.window && stable_since.is_none() {
            stable_since = Some(w[1].step - quiet_run);
        }
    }
    let converged = stable_since.is_some();

    let terminal_q = StrategyProfile::new(last.strategies.clone());
    let nearest_fixed_point = last.belief.as_ref().and_then(|probs| {
        clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.distance(probs, &terminal_q)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(cluster, distance)| NearestFixedPoint { cluster, distance })
    });

    let mut decay_slopes = BTreeMap::new();
    if let Some(terminal_probs) = &last.belief {
        let start = ((rows.len() - 1) as f64 * burn_in).ceil() as usize;
        for (s, label) in theta_labels.iter().enumerate() {
            if terminal_probs[s] > SUPPORT_TOL {
                decay_slopes.insert(label.clone(), None);
                continue;
            }
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for row in &rows[start..] {
                let p = row.belief.as_ref().unwrap()[s];
                if p > 0.0 {
                    xs.push(row.step as f64);
                    ys.push(p.ln());
                }
            }
            decay_slopes.insert(label.clone(), analysis::least_squares_slope(&xs, &ys));
        }
    }

    Ok(RunSummary {
        run_index,
        seed,
        steps: rows.len() - 1,
        converged,
        stable_since,
        terminal_belief: last.belief.clone(),
        terminal_estimate: last.estimate.clone(),
        terminal_strategies: last.strategies.clone(),
        nearest_fixed_point,
        decay_slopes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BasinFraction {
    pub cluster: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub game: String,
    pub mode: RunMode,
    pub runs: usize,
    pub master_seed: u64,
    pub fixed_points: Vec<FixedPointCluster>,
    pub basin_fractions: Vec<BasinFraction>,
    pub converged_fraction: f64,
    pub summaries: Vec<RunSummary>,
}

pub struct SimulateOutput {
    pub report: SimulateReport,
    pub schema: CsvSchema,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// Runs the configured batch, writes one CSV per run plus a JSON summary,
/// and returns the report. Deterministic for a fixed (config, master seed).
pub fn cmd_simulate(config: &ExperimentConfig, out_dir: &Path) -> Result<SimulateOutput> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    match config.mode {
        RunMode::Eq | RunMode::Br => simulate_belief(config, out_dir),
        _ => simulate_point(config, out_dir),
    }
}

fn simulate_belief(config: &ExperimentConfig, out_dir: &Path) -> Result<SimulateOutput> {
    let game = games::build(&config.game.id, &config.game.overrides)?;
    let schedule = StepsizeSchedule::new(config.schedule.clone(), game.num_players())?;
    let theta1 = Belief::from_probs(&config.initial_belief)?;
    let q1 = StrategyProfile::new(config.initial_strategy.clone());
    let labels = game.params().labels().to_vec();
    let schema = CsvSchema::new(
        config.mode,
        &labels,
        0,
        &game.space().players().iter().map(|p| p.dim()).collect::<Vec<_>>(),
        game.observation_dim(),
    );

    let clusters = if game.capabilities().has_equilibrium_map {
        analysis::enumerate_fixed_points(
            game.as_ref(),
            config.fixed_point_grid,
            config.fixed_point_dedup,
        )?
    } else {
        Vec::new()
    };

    let mode = config.mode.learn_mode();
    let results: Vec<Result<(usize, Vec<Row>, RunSummary)>> = (0..config.runs)
        .into_par_iter()
        .map(|run_index| {
            let seed = derive_run_seed(config.master_seed, run_index);
            let traj = run_dynamics(
                game.as_ref(),
                mode,
                &theta1,
                &q1,
                &schedule,
                config.max_steps,
                &config.convergence,
                seed,
            )?;
            let rows = trajectory_rows(&traj);
            let summary =
                summarize_rows(&rows, run_index, seed, &config.convergence, &clusters, &labels, 0.5)?;
            Ok((run_index, rows, summary))
        })
        .collect();

    finalize(config, out_dir, schema, clusters, results)
}

fn simulate_point(config: &ExperimentConfig, out_dir: &Path) -> Result<SimulateOutput> {
    let game = games::build_point(&config.game.id, &config.game.overrides)?;
    let schedule = StepsizeSchedule::new(config.schedule.clone(), game.num_players())?;
    let q1 = StrategyProfile::new(config.initial_strategy.clone());
    let grid: Option<MapGrid> = match (&config.map_grid, config.mode.uses_map()) {
        (Some(g), true) => Some(g.build()?),
        (None, true) => return Err(Error::Config("MAP modes require a `map_grid`".into())),
        _ => None,
    };
    let estimate_dim = game.point_dim();
    let schema = CsvSchema::new(
        config.mode,
        &[],
        estimate_dim,
        &game.space().players().iter().map(|p| p.dim()).collect::<Vec<_>>(),
        game.observation_dim(),
    );

    let mode = config.mode.learn_mode();
    let results: Vec<Result<(usize, Vec<Row>, RunSummary)>> = (0..config.runs)
        .into_par_iter()
        .map(|run_index| {
            let seed = derive_run_seed(config.master_seed, run_index);
            let estimator = if config.mode.uses_map() {
                EstimatorSpec::Map { grid: grid.clone().unwrap(), prior_log_density: None }
            } else {
                EstimatorSpec::Ols { initial: config.ols_initial.clone() }
            };
            let traj = run_point_dynamics(
                game.as_ref(),
                mode,
                estimator,
                &q1,
                &schedule,
                config.max_steps,
                &config.convergence,
                seed,
            )?;
            let rows = point_trajectory_rows(&traj);
            let summary =
                summarize_rows(&rows, run_index, seed, &config.convergence, &[], &[], 0.5)?;
            Ok((run_index, rows, summary))
        })
        .collect();

    finalize(config, out_dir, schema, Vec::new(), results)
}

fn finalize(
    config: &ExperimentConfig,
    out_dir: &Path,
    schema: CsvSchema,
    clusters: Vec<FixedPointCluster>,
    results: Vec<Result<(usize, Vec<Row>, RunSummary)>>,
) -> Result<SimulateOutput> {
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r?);
    }
    runs.sort_by_key(|(i, _, _)| *i);

    let mut csv_paths = Vec::with_capacity(runs.len());
    let mut summaries = Vec::with_capacity(runs.len());
    for (run_index, rows, summary) in &runs {
        let path = out_dir.join(format!("run_{run_index:04}.csv"));
        write_trajectory_csv(&path, &schema, rows)?;
        csv_paths.push(path);
        summaries.push(summary.clone());
    }

    let mut counts = vec![0usize; clusters.len()];
    for s in &summaries {
        if let Some(n) = &s.nearest_fixed_point {
            counts[n.cluster] += 1;
        }
    }
    let basin_fractions = counts
        .iter()
        .enumerate()
        .map(|(cluster, c)| BasinFraction { cluster, fraction: *c as f64 / summaries.len() as f64 })
        .collect();
    let converged_fraction =
        summaries.iter().filter(|s| s.converged).count() as f64 / summaries.len() as f64;

    let report = SimulateReport {
        game: config.game.id.clone(),
        mode: config.mode,
        runs: config.runs,
        master_seed: config.master_seed,
        fixed_points: clusters,
        basin_fractions,
        converged_fraction,
        summaries,
    };
    let summary_path = out_dir.join("summary.json");
    let file = std::fs::File::create(&summary_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)?;

    Ok(SimulateOutput { report, schema, csv_paths, summary_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_derivation_is_stable_and_spread() {
        let a = derive_run_seed(1, 0);
        let b = derive_run_seed(1, 1);
        let c = derive_run_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_run_seed(1, 0));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.powi(-40), 1234.5678e-9, 0.0, -7.25] {
            let s = fmt_f64(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{s}");
        }
    }
}
