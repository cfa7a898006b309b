//! Histograms of `√n (Q_n − Q*)` on the six-node MDP under asynchronous
//! exploration: PolSA-D and SNR produce nearly the same distribution, NeSA a
//! much wider one.

use std::sync::Arc;

use sa_momentum::harness::{histogram, ks_distance, run_trials, AlgoSpec, Problem, TrialPlan};
use sa_momentum::mdp::{preset, q_value_iteration, ExplorationKind};
use sa_momentum::rl::QAlgorithm;

fn main() -> sa_momentum::Result<()> {
    let mdp = Arc::new(preset("six")?);
    let q = q_value_iteration(&mdp, 1e-12)?;
    let algs = [QAlgorithm::PolSaD, QAlgorithm::Snr, QAlgorithm::NeSa];
    let n = 20_000;
    let mut plan = TrialPlan::new(
        Problem::QLearning { mdp: mdp.clone(), exploration: ExplorationKind::Async },
        algs.iter().map(|a| AlgoSpec::new(a.name(), a.algorithm())).collect(),
        n,
        60,
    );
    plan.snapshots = vec![n];
    let set = run_trials(&plan)?;

    // The goal's self-loop (last pair) is noise-free, so its spread is zero.
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "pair", "KS(pd,snr)", "var pd", "var snr", "var nesa");
    for i in 0..mdp.d() {
        let h: Vec<_> = (0..3).map(|k| histogram(&set, k, i, n, &q, 15)).collect::<Result<_, _>>()?;
        if h[1].variance() < 1e-20 {
            println!("{i:>5} {:>10} (noise-free pair)", "-");
            continue;
        }
        println!(
            "{i:>5} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            ks_distance(&h[0].raw(), &h[1].raw()),
            h[0].variance(),
            h[1].variance(),
            h[2].variance()
        );
    }
    let h = histogram(&set, 0, 3, n, &q, 15)?;
    println!("\nPolSA-D, pair 3:");
    let peak = *h.counts.iter().max().unwrap_or(&1) as f64;
    for (w, c) in h.edges.windows(2).zip(&h.counts) {
        println!("{:>8.2} {}", w[0], "#".repeat((40.0 * *c as f64 / peak) as usize));
    }
    Ok(())
}
