//! Calibration probe: trains a handful of signals to the full desk budget
//! and prints their per-checkpoint goal statistics.
//!
//! Run with `cargo run -p rewardevo-core --example probe --release`.

use rewardevo_core::env::{Env, EnvConfig, ObsScheme};
use rewardevo_core::learner::{Learner, LearnerConfig};
use rewardevo_core::rng;
use rewardevo_core::signals::RewardSignal;

fn main() {
    let env_cfg = EnvConfig::default();
    let scheme = ObsScheme::default();
    let learner_cfg = LearnerConfig::default();
    let master: u64 =
        std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(7);
    println!("master seed {master}");
    let burn_in = 50_000u64;
    let test_len = 10_000u64;
    let checkpoints: Vec<u64> = (2..=9).map(|k| k * burn_in).collect();

    for id in ["100", "001", "010", "110", "000", "b100", "b010", "b001", "rand"] {
        let signal = RewardSignal::from_id(id).unwrap();
        let mut learner = Learner::new(
            &learner_cfg,
            &env_cfg,
            &scheme,
            rng::derive_seed(master, &format!("learner/{id}")),
        )
        .unwrap();
        let mut env = Env::new(&env_cfg, rng::derive_seed(master, &format!("env/{id}"))).unwrap();
        let mut trained = 0u64;
        print!("{id:>5}");
        let mut avg = (0.0, 0.0, 0.0);
        for &cp in &checkpoints {
            if signal.is_learnable() {
                learner.train_steps(&mut env, &signal, cp - trained);
            }
            trained = cp;
            let mut test_env =
                Env::new(&env_cfg, rng::derive_seed(master, &format!("test-env/{id}/{cp}")))
                    .unwrap();
            let mut test_rng = rng::stream(master, &format!("test/{id}/{cp}"));
            let stats = learner.test_run(&mut test_env, test_len, &mut test_rng);
            let points = stats.won + stats.lost;
            let coop = if points == 0 {
                test_len as f64
            } else {
                stats.intervals.iter().sum::<u64>() as f64 / points as f64
            };
            print!("  {:>4}/{:>4}/{:>6.1}", stats.won, stats.lost, coop);
            avg.0 += stats.won as f64 / 8.0;
            avg.1 += stats.lost as f64 / 8.0;
            avg.2 += coop / 8.0;
        }
        println!("  | avg {:.0}/{:.0}/{:.1}", avg.0, avg.1, avg.2);
    }
}
