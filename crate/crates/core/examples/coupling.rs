//! PolSA couples with the idealized SNR recursion: `n²‖θ_n − θ*_n‖²` stays
//! bounded for every ζ in (0, 2), even though PolSA never inverts a matrix.
//!
//! Both algorithms consume the same `(A_n, b_n)` stream in every trial.

use std::sync::Arc;

use sa_momentum::harness::{coupling_curve, run_trials, AlgoSpec, Problem, TrialPlan};
use sa_momentum::linear_model::preset;
use sa_momentum::sa::Algorithm;

fn main() -> sa_momentum::Result<()> {
    let model = Arc::new(preset("fig2")?);
    let a_inv = model.a_mean().clone().try_inverse().unwrap();
    let zetas = [0.5, 1.0, 1.5, 1.9];

    let mut algorithms = vec![AlgoSpec::new("snr-ideal", Algorithm::SnrIdealized { a_inv })];
    for z in zetas {
        algorithms.push(AlgoSpec::new(format!("polsa-{z}"), Algorithm::polsa(z)));
    }
    let mut plan = TrialPlan::new(Problem::Linear(model), algorithms, 20_000, 20);
    plan.snapshots = vec![100, 1_000, 10_000, 20_000];
    plan.base_seed = 1;
    let set = run_trials(&plan)?;

    let paired: Vec<(f64, usize)> = zetas.iter().copied().zip(1..).collect();
    let curve = coupling_curve(&set, 0, &paired);
    println!("median n²‖θ_n − θ*_n‖²");
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "ζ", "n=1e2", "n=1e3", "n=1e4", "n=2e4");
    for z in zetas {
        let row: Vec<String> = curve.series(z).iter().map(|r| format!("{:>12.1}", r.median)).collect();
        println!("{z:>6} {}", row.join(" "));
    }
    Ok(())
}
