//! Trials are bitwise reproducible: the same plan yields identical results
//! and event checksums on any thread count, and a single trial can be
//! replayed from its seed alone.

use std::sync::Arc;

use sa_momentum::harness::{run_trial, run_trials, AlgoSpec, Problem, TrialPlan};
use sa_momentum::linear_model::preset;
use sa_momentum::sa::Algorithm;

fn main() -> sa_momentum::Result<()> {
    let model = Arc::new(preset("mixture-d4")?);
    let mut plan = TrialPlan::new(
        Problem::Linear(model),
        vec![
            AlgoSpec::new("snr", Algorithm::snr()),
            AlgoSpec::new("nesa", Algorithm::nesa(1.0)),
        ],
        5_000,
        8,
    );
    plan.base_seed = 0xC0FFEE;

    let many = run_trials(&plan)?;
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_trials(&plan))?;
    assert_eq!(many.results, one.results);

    for r in &many.results {
        println!("trial {} seed {:#x} checksums {:016x} {:016x}", r.trial, r.seed, r.traces[0].checksum, r.traces[1].checksum);
    }
    let replay = run_trial(&plan, 5)?;
    assert_eq!(replay, many.results[5]);
    println!("trial 5 replayed bit for bit");
    Ok(())
}
