// Scratch probe for acceptance-criterion calibration. Not part of the crate.
use beliefplay::analysis;
use beliefplay::belief::{conditional_ratio_expectation, log_true_belief_drift};
use beliefplay::games;
use beliefplay::model::{Belief, GameModel, StrategyProfile};
use beliefplay::runner::derive_run_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn diagnostic_profile<R: Rng>(game: &dyn GameModel, rng: &mut R) -> StrategyProfile {
    match game.id() {
        "cournot" => StrategyProfile::from_scalars(&[rng.gen_range(0.1..1.1), rng.gen_range(0.1..1.1)]),
        "public_good" => StrategyProfile::from_scalars(&[rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)]),
        "coordination_safe_margin" => {
            let q1: f64 = rng.gen_range(0.0..2.0);
            let q2 = (q1 + rng.gen_range(-0.5..1.0)).clamp(1.0, 4.0);
            StrategyProfile::from_scalars(&[q1, q2])
        }
        "coordination_increasing_penalty" => {
            let q1: f64 = rng.gen_range(0.0..2.0);
            let q2 = (q1 + rng.gen_range(0.0..1.3)).clamp(1.0, 4.0);
            StrategyProfile::from_scalars(&[q1, q2])
        }
        "finite_matrix" => {
            let mut player = || {
                let a: f64 = rng.gen_range(0.05..0.95);
                vec![a, 1.0 - a]
            };
            StrategyProfile::new(vec![player(), player()])
        }
        other => panic!("no sampler for {other}"),
    }
}

fn run_suite(master: u64) -> (bool, f64, String) {
    let samples = 100_000;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for (gi, id) in games::game_ids().iter().enumerate() {
        let game = games::build(id, &serde_json::Value::Null).unwrap();
        let s_star = game.params().true_index();
        let mut rng = ChaCha12Rng::seed_from_u64(master ^ (0xBEEF + gi as u64 * 0x1000));
        for point in 0..20usize {
            let raw: Vec<f64> = (0..game.params().len()).map(|_| rng.gen_range(0.05..1.0)).collect();
            let theta = Belief::from_probs(&raw).unwrap();
            let q = diagnostic_profile(game.as_ref(), &mut rng);
            for s in 0..game.params().len() {
                if s == s_star {
                    continue;
                }
                let prior = (theta.log_prob(s) - theta.log_prob(s_star)).exp();
                let (est, se) = conditional_ratio_expectation(
                    game.as_ref(), &theta, &q, s, samples,
                    derive_run_seed(master ^ (gi as u64) << 32, point * 16 + s),
                )
                .unwrap();
                let t = if se == 0.0 {
                    if est == prior { 0.0 } else { f64::INFINITY }
                } else {
                    ((est - prior) / se).abs()
                };
                if t > worst {
                    worst = t;
                    worst_at = format!("{id} pt {point} s {s} ratio");
                }
            }
            let (drift, dse) = log_true_belief_drift(
                game.as_ref(), &theta, &q, samples,
                derive_run_seed(master ^ 0xD81F7 ^ (gi as u64) << 40, point),
            )
            .unwrap();
            let kl = analysis::kl_true_vs_mixture(game.as_ref(), &theta, &q);
            let t = if (drift - kl).abs() <= 3.0 * dse + 1e-6 { 0.0 } else { ((drift - kl).abs() - 1e-6) / dse };
            if t > worst {
                worst = t;
                worst_at = format!("{id} pt {point} drift");
            }
            let tneg = if drift >= -3.0 * dse - 1e-12 { 0.0 } else { -drift / dse };
            if tneg > worst {
                worst = tneg;
                worst_at = format!("{id} pt {point} drift-negativity");
            }
        }
    }
    (worst <= 3.0, worst, worst_at)
}

fn main() {
    for master in 0..6u64 {
        let (pass, worst, at) = run_suite(master);
        println!("master {master}: pass {pass} worst |t| {worst:.2} at {at}");
    }
}
