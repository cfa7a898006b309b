// Stability predicates and covariance predictions for every preset.
use sa_momentum::linear_model::{facts, preset, PRESET_NAMES};
use sa_momentum::variance::{check_stability, predict_nesa, predict_polsa};

fn main() -> sa_momentum::Result<()> {
    for name in PRESET_NAMES {
        let m = preset(name)?;
        let f = facts(&m)?;
        let report = check_stability(m.a_mean(), 1.0, Some(&f.l_operator))?;
        println!("== {name} (d = {})", m.dim());
        println!("  stable at ζ = 1: {}  ρ(𝓛) = {:.4}", report.overall, report.l_spectral_radius.unwrap());
        println!("  tr Σ* = {:.4}", f.sigma_star.trace());
        if let Ok(p) = predict_polsa(m.a_mean(), m.noise_cov()) {
            println!("  PolSA tr Σ²² = {:.4}", p.sigma22.trace());
        }
        match predict_nesa(&f.l_operator, m.a_mean(), m.noise_cov()) {
            Ok(p) => println!(
                "  NeSA  tr Σ²² = {:.4}  tr Σ¹¹ = {:.4}  Σ¹¹ psd: {}",
                p.sigma22.trace(),
                p.sigma11.trace(),
                p.sigma11_psd
            ),
            Err(e) => println!("  NeSA: {e}"),
        }
    }
    Ok(())
}
