//! Monte-Carlo covariance of SNR and PolSA against `Σ* = A⁻¹Σ^ΔA⁻ᵀ`, and of
//! the PolSA increments against the discrete Lyapunov solution `Σ²²`.

use std::sync::Arc;

use sa_momentum::harness::{estimate_covariance, run_trials, AlgoSpec, CovarianceTargets, Problem, TrialPlan};
use sa_momentum::linear_model::{facts, preset};
use sa_momentum::sa::Algorithm;
use sa_momentum::variance::predict_polsa;

fn main() -> sa_momentum::Result<()> {
    let model = Arc::new(preset("fig2-d4")?);
    let f = facts(&model)?;
    let pred = predict_polsa(model.a_mean(), model.noise_cov())?;

    let mut plan = TrialPlan::new(
        Problem::Linear(model),
        vec![
            AlgoSpec::new("snr", Algorithm::snr()),
            AlgoSpec::new("polsa", Algorithm::polsa(1.0)),
        ],
        10_000,
        200,
    );
    plan.snapshots = vec![1_000, 10_000];
    let set = run_trials(&plan)?;

    for (k, name) in ["snr", "polsa"].iter().enumerate() {
        // Σ²² is predicted for PolSA only.
        let targets = CovarianceTargets {
            s11: Some(f.sigma_star.clone()),
            s22: (k == 1).then(|| pred.sigma22.clone()),
            s21: None,
        };
        let report = estimate_covariance(&set, k, &f.theta_star, &targets);
        for row in &report.rows {
            let s22 = row.s22.rel_error().map_or("-".to_string(), |e| format!("{e:.3}"));
            println!("{name:<6} n={:<6} rel err Σ¹¹ {:.3}  Σ²² {s22}", row.n, row.s11.rel_error().unwrap());
        }
    }
    Ok(())
}
