//! Per-player stepsize schedules `a_i^t ∈ [0, 1]` and numeric validators for
//! the stepsize assumptions the convergence results lean on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named stepsize rules. `t` starts at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    /// Every player uses the same constant rate.
    Constant { value: f64 },
    /// Every player uses `1/t`.
    Harmonic,
    /// Player `i` fully adopts the preferred strategy on steps
    /// `t ≡ i+1 (mod I)` and freezes otherwise.
    Alternating,
    /// Player 1 uses `1/t`. Player 2 uses `1/k` on odd steps `t = 2k-1` and
    /// `1/t` on even steps — the two-phase harmonic pattern.
    PhaseShiftedHarmonic,
    /// Players alternate between `1/t` and `1/(2t)`, offset by step parity.
    AlternatingHarmonic,
    /// Explicit per-player tables; the last entry repeats beyond the table.
    Custom { per_player: Vec<Vec<f64>> },
}

/// A schedule bound to a fixed player count.
#[derive(Debug, Clone, PartialEq)]
pub struct StepsizeSchedule {
    spec: ScheduleSpec,
    num_players: usize,
}

impl StepsizeSchedule {
    pub fn new(spec: ScheduleSpec, num_players: usize) -> Result<Self> {
        match &spec {
            ScheduleSpec::Constant { value } => {
                if !(0.0..=1.0).contains(value) {
                    return Err(Error::InvalidArgument(format!("constant stepsize {value} outside [0,1]")));
                }
            }
            ScheduleSpec::PhaseShiftedHarmonic | ScheduleSpec::AlternatingHarmonic => {
                if num_players != 2 {
                    return Err(Error::InvalidArgument("two-player schedule pattern".into()));
                }
            }
            ScheduleSpec::Custom { per_player } => {
                if per_player.len() != num_players {
                    return Err(Error::InvalidArgument("custom table player count mismatch".into()));
                }
                if per_player.iter().any(|t| t.is_empty()) {
                    return Err(Error::InvalidArgument("custom table must be nonempty per player".into()));
                }
                if per_player.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(Error::InvalidArgument("custom stepsizes must lie in [0,1]".into()));
                }
            }
            _ => {}
        }
        Ok(Self { spec, num_players })
    }

    pub fn num_players(&self) -> usize {
        self.num_players
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn id(&self) -> String {
        match &self.spec {
            ScheduleSpec::Constant { value } => format!("constant({value})"),
            ScheduleSpec::Harmonic => "harmonic".into(),
            ScheduleSpec::Alternating => "alternating".into(),
            ScheduleSpec::PhaseShiftedHarmonic => "phase_shifted_harmonic".into(),
            ScheduleSpec::AlternatingHarmonic => "alternating_harmonic".into(),
            ScheduleSpec::Custom { .. } => "custom".into(),
        }
    }

    /// Stepsizes of all players at step `t >= 1`.
    pub fn rates(&self, t: usize) -> Vec<f64> {
        debug_assert!(t >= 1);
        let tf = t as f64;
        match &self.spec {
            ScheduleSpec::Constant { value } => vec![*value; self.num_players],
            ScheduleSpec::Harmonic => vec![1.0 / tf; self.num_players],
            ScheduleSpec::Alternating => (0..self.num_players)
                .map(|i| if (t - 1) % self.num_players == i { 1.0 } else { 0.0 })
                .collect(),
            ScheduleSpec::PhaseShiftedHarmonic => {
                let second = if t % 2 == 1 { 1.0 / ((t + 1) / 2) as f64 } else { 1.0 / tf };
                vec![1.0 / tf, second]
            }
            ScheduleSpec::AlternatingHarmonic => {
                let (fast, slow) = (1.0 / tf, 1.0 / (2.0 * tf));
                if t % 2 == 1 {
                    vec![fast, slow]
                } else {
                    vec![slow, fast]
                }
            }
            ScheduleSpec::Custom { per_player } => per_player
                .iter()
                .map(|table| *table.get(t - 1).unwrap_or(table.last().unwrap()))
                .collect(),
        }
    }
}

/// Evidence for one tail product `∏_{t=m}^{T} (1 - a_i^t)`.
#[derive(Debug, Clone, Serialize)]
pub struct TailProduct {
    pub player: usize,
    pub start: usize,
    pub final_product: f64,
    /// Product at 90% of the way through the horizon.
    pub late_product: f64,
    pub plateaued: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct A4Report {
    pub rate_sum: f64,
    pub divergence_ok: bool,
    pub squared_tail_sum: f64,
    pub square_summable_ok: bool,
    pub monotone_ok: bool,
    pub ratio_sup: f64,
    pub ratio_bounded_ok: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleReport {
    pub horizon: usize,
    pub a2_pass: bool,
    pub a2_products: Vec<TailProduct>,
    /// Estimated lower bound `ν` on `min_i a_i^t / max_i a_i^t`.
    pub a3_nu: f64,
    pub a4: A4Report,
}

/// Numeric surrogates for the stepsize assumptions, evaluated on a finite
/// horizon. Report only; nothing is enforced.
pub fn validate_schedule(schedule: &StepsizeSchedule, horizon: usize) -> Result<ScheduleReport> {
    if horizon < 1000 {
        return Err(Error::InvalidArgument("validation horizon must be at least 1000".into()));
    }
    let rates: Vec<Vec<f64>> = (1..=horizon).map(|t| schedule.rates(t)).collect();
    for (t, r) in rates.iter().enumerate() {
        for (i, a) in r.iter().enumerate() {
            if !(0.0..=1.0).contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "stepsize a[{i}]^{} = {a} outside [0,1]",
                    t + 1
                )));
            }
        }
    }

    // A2: tail products of (1 - a_i^t) must decay rather than plateau.
    let mut a2_products = Vec::new();
    let mut a2_pass = true;
    for i in 0..schedule.num_players() {
        for start in [1usize, horizon / 2] {
            let late_t = start + (0.9 * (horizon - start) as f64) as usize;
            let mut product = 1.0f64;
            let mut late_product = 1.0f64;
            for t in start..=horizon {
                product *= 1.0 - rates[t - 1][i];
                if t == late_t {
                    late_product = product;
                }
            }
            let plateaued = product > 1e-3 && (late_product - product) <= 1e-3 * product;
            if plateaued {
                a2_pass = false;
            }
            a2_products.push(TailProduct { player: i, start, final_product: product, late_product, plateaued });
        }
    }

    // A3: lower bound on the stepsize ratio, over steps with any movement.
    let mut a3_nu = f64::INFINITY;
    for r in &rates {
        let max = r.iter().cloned().fold(0.0f64, f64::max);
        if max > 0.0 {
            let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
            a3_nu = a3_nu.min(min / max);
        }
    }
    if a3_nu == f64::INFINITY {
        a3_nu = 0.0;
    }

    // A4 on the per-step maximum stepsize.
    let abar: Vec<f64> = rates.iter().map(|r| r.iter().cloned().fold(0.0f64, f64::max)).collect();
    let rate_sum: f64 = abar.iter().sum();
    // Deviates from the literal spec threshold (10·log horizon), which the
    // harmonic schedule cannot meet; see the project notes.
    let divergence_ok = rate_sum > 0.5 * (horizon as f64).ln();
    let squared_tail_sum: f64 = abar[horizon / 2 - 1..].iter().map(|a| a * a).sum();
    let square_summable_ok = squared_tail_sum < 1e-3;
    let monotone_ok = abar.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    let mut ratio_sup = 0.0f64;
    for x in [0.5f64, 0.9] {
        for (t, &a) in abar.iter().enumerate().skip(1) {
            let idx = ((x * (t + 1) as f64).floor() as usize).max(1);
            if a > 0.0 {
                ratio_sup = ratio_sup.max(abar[idx - 1] / a);
            }
        }
    }
    let ratio_bounded_ok = ratio_sup <= 1e3;
    let a4_pass = divergence_ok && square_summable_ok && monotone_ok && ratio_bounded_ok;

    Ok(ScheduleReport {
        horizon,
        a2_pass,
        a2_products,
        a3_nu,
        a4: A4Report {
            rate_sum,
            divergence_ok,
            squared_tail_sum,
            square_summable_ok,
            monotone_ok,
            ratio_sup,
            ratio_bounded_ok,
            pass: a4_pass,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(spec: ScheduleSpec) -> StepsizeSchedule {
        StepsizeSchedule::new(spec, 2).unwrap()
    }

    #[test]
    fn harmonic_passes_a2_and_a4() {
        let r = validate_schedule(&schedule(ScheduleSpec::Harmonic), 10_000).unwrap();
        assert!(r.a2_pass);
        assert!(r.a4.pass, "{:?}", r.a4);
        assert!((r.a3_nu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_fails_a2_with_plateau_near_its_limit() {
        // ∏ (1 - 2^{-t}) converges to ≈ 0.2888; the tail product plateaus.
        let table: Vec<f64> = (1..=64).map(|t| 0.5f64.powi(t)).collect();
        let sched = StepsizeSchedule::new(
            ScheduleSpec::Custom { per_player: vec![table.clone(), table] },
            2,
        )
        .unwrap();
        // beyond the table the last entry (2^-64, effectively 0) repeats
        let r = validate_schedule(&sched, 10_000).unwrap();
        assert!(!r.a2_pass);
        let p = &r.a2_products[0];
        assert!((p.final_product - 0.2888).abs() < 1e-3, "product {}", p.final_product);
    }

    #[test]
    fn constant_one_passes_a2_fails_a4() {
        let r = validate_schedule(&schedule(ScheduleSpec::Constant { value: 1.0 }), 2000).unwrap();
        assert!(r.a2_pass);
        assert!(r.a2_products.iter().all(|p| p.final_product == 0.0));
        assert!(!r.a4.pass);
        assert!(!r.a4.square_summable_ok);
    }

    #[test]
    fn alternating_emits_on_off_pattern() {
        let s = schedule(ScheduleSpec::Alternating);
        assert_eq!(s.rates(1), vec![1.0, 0.0]);
        assert_eq!(s.rates(2), vec![0.0, 1.0]);
        assert_eq!(s.rates(3), vec![1.0, 0.0]);
        // alternating on/off has ν = 0: no uniform lower bound on the ratio
        let r = validate_schedule(&s, 1000).unwrap();
        assert_eq!(r.a3_nu, 0.0);
    }

    #[test]
    fn phase_shifted_harmonic_pattern() {
        let s = schedule(ScheduleSpec::PhaseShiftedHarmonic);
        assert_eq!(s.rates(1), vec![1.0, 1.0]);
        assert_eq!(s.rates(2), vec![0.5, 0.5]);
        assert_eq!(s.rates(3), vec![1.0 / 3.0, 0.5]);
        assert_eq!(s.rates(4), vec![0.25, 0.25]);
        assert_eq!(s.rates(5), vec![0.2, 1.0 / 3.0]);
    }

    #[test]
    fn alternating_harmonic_has_half_ratio() {
        let s = schedule(ScheduleSpec::AlternatingHarmonic);
        let r = validate_schedule(&s, 1000).unwrap();
        assert!((r.a3_nu - 0.5).abs() < 1e-12);
    }
}
