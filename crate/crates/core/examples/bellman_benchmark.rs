//! Bellman error of the five Q-learning variants on the shipped d = 19
//! instance with clock sampling (every pair once per sweep).
//!
//! Pass a step count to go further, e.g. `-- 1000000`.

use std::sync::Arc;

use sa_momentum::harness::{bellman_trajectory, run_trials, AlgoSpec, Problem, TrialPlan};
use sa_momentum::mdp::{preset, ExplorationKind};
use sa_momentum::rl::QAlgorithm;

fn main() -> sa_momentum::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let mdp = Arc::new(preset("d19")?);
    let plan = TrialPlan::new(
        Problem::QLearning { mdp: mdp.clone(), exploration: ExplorationKind::Clock },
        QAlgorithm::ALL.iter().map(|a| AlgoSpec::new(a.name(), a.algorithm())).collect(),
        n,
        8,
    );
    let set = run_trials(&plan)?;
    let curves: Vec<_> = (0..QAlgorithm::ALL.len()).map(|k| bellman_trajectory(&set, k, &mdp)).collect();

    print!("{:>9}", "n");
    for a in QAlgorithm::ALL {
        print!("{:>10}", a.name());
    }
    println!();
    for (pos, &step) in plan.snapshots.iter().enumerate().skip(1) {
        print!("{step:>9}");
        for c in &curves {
            print!("{:>10.4}", c[pos].1);
        }
        println!();
    }
    Ok(())
}
