//! TD(0), LSTD(0), PolSA-TD(0) and NeSA-TD(0) on a four-state cycle with
//! one-hot features, where the value function is `h = (I − βP)⁻¹c`.
//!
//! NeSA-TD settles on a slightly shifted point: under Markov sampling the
//! momentum term correlates with the next sample.

use std::sync::Arc;

use sa_momentum::harness::{run_trials, AlgoSpec, Problem, TrialPlan};
use sa_momentum::rl::{TdAlgorithm, TdModel};

fn main() -> sa_momentum::Result<()> {
    let model = Arc::new(TdModel::cycle_preset());
    let h = model.value_function()?;
    println!("h = {:.4}", h.transpose());

    let algs = [
        TdAlgorithm::Td0,
        TdAlgorithm::Lstd0,
        TdAlgorithm::PolSaTd0 { zeta: 1.0 },
        TdAlgorithm::NeSaTd0 { zeta: 1.0 },
    ];
    let g = model.td0_gain()?;
    let specs = algs
        .iter()
        .map(|a| {
            let s = AlgoSpec::new(a.name(), a.algorithm());
            if *a == TdAlgorithm::Td0 { s.with_gain(g) } else { s }
        })
        .collect();
    let mut plan = TrialPlan::new(Problem::Td(model.clone()), specs, 100_000, 4);
    plan.snapshots = vec![1_000, 10_000, 100_000];
    let set = run_trials(&plan)?;

    println!("mean ‖θ_n − h‖ over {} trials (TD(0) gain g = {g:.3})", plan.trials);
    for (k, a) in algs.iter().enumerate() {
        let errs: Vec<String> = (0..plan.snapshots.len())
            .map(|pos| {
                let e: f64 = set
                    .results
                    .iter()
                    .map(|r| (&r.traces[k].at(pos).unwrap().theta - &h).norm())
                    .sum();
                format!("{:>10.5}", e / set.results.len() as f64)
            })
            .collect();
        println!("{:<10} {}", a.name(), errs.join(""));
    }
    Ok(())
}
