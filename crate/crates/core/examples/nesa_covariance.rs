//! NeSA on a model with a random `A_n`. Its increment covariance solves
//! `Σ²² = 𝓛(Σ²²) + Σ^Δ` with `𝓛(Q) = E[(I + A_n) Q (I + A_n)ᵀ]`, and its
//! iterate covariance follows from `Σ²²`.

use std::sync::Arc;

use sa_momentum::harness::{estimate_covariance, run_trials, AlgoSpec, CovarianceTargets, Problem, TrialPlan};
use sa_momentum::linalg::frobenius_rel;
use sa_momentum::linear_model::{facts, preset};
use sa_momentum::sa::Algorithm;
use sa_momentum::variance::predict_nesa;

fn main() -> sa_momentum::Result<()> {
    let model = Arc::new(preset("mixture-d3")?);
    let f = facts(&model)?;
    let pred = predict_nesa(&f.l_operator, model.a_mean(), model.noise_cov())?;
    println!("Σ¹¹ predicted vs Σ*: rel gap {:.3} (NeSA is not optimal when A_n is random)", frobenius_rel(&pred.sigma11, &f.sigma_star));

    let mut plan = TrialPlan::new(
        Problem::Linear(model),
        vec![AlgoSpec::new("nesa", Algorithm::nesa(1.0))],
        10_000,
        400,
    );
    plan.snapshots = vec![10_000];
    let set = run_trials(&plan)?;
    let report = estimate_covariance(
        &set,
        0,
        &f.theta_star,
        &CovarianceTargets {
            s11: Some(pred.sigma11.clone()),
            s22: Some(pred.sigma22.clone()),
            s21: None,
        },
    );
    let row = &report.rows[0];
    println!("Σ̂²² rel err {:.3}", row.s22.rel_error().unwrap());
    println!("Σ̂¹¹ rel err {:.3}", row.s11.rel_error().unwrap());
    println!("Σ̂²² =\n{:.3}", row.s22.estimate);
    println!("Σ²² =\n{:.3}", pred.sigma22);
    Ok(())
}
