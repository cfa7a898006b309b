//! Analytic asymptotic covariances and stability certificates.
//!
//! For the linear model with mean `A` and noise covariance `Σ^Δ`:
//!
//! * `Σ* = A⁻¹ Σ^Δ A⁻ᵀ` is the optimal covariance, reached by SNR and PolSA.
//! * PolSA's scaled increment covariance solves `X = (I + A) X (I + A)ᵀ + Σ^Δ`.
//! * NeSA's solves `X = 𝓛(X) + Σ^Δ` with `𝓛(Q) = E[(I + A_n) Q (I + A_n)ᵀ]`,
//!   and its parameter covariance is `−X − A⁻¹X − X A⁻ᵀ`.

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, is_psd, kron, solve_discrete_lyapunov, solve_operator_lyapunov, spectral_radius,
    symmetrize, unvec, vec_of, Mat,
};

/// Per-eigenvalue check of `Re λ < 0` and `|1 + ζλ| < 1`, plus the
/// spectral radius of `𝓛` when one is supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub zeta: f64,
    pub eigenvalues: Vec<Complex<f64>>,
    pub re_negative: Vec<bool>,
    pub momentum_contractive: Vec<bool>,
    pub l_spectral_radius: Option<f64>,
    pub overall: bool,
}

impl StabilityReport {
    /// Human-readable reason for a failure, `None` when stable.
    pub fn failure(&self) -> Option<String> {
        if self.overall {
            return None;
        }
        for (i, l) in self.eigenvalues.iter().enumerate() {
            if !self.re_negative[i] {
                return Some(format!("eigenvalue {l} has non-negative real part"));
            }
            if !self.momentum_contractive[i] {
                let m = Complex::new(1.0 + self.zeta * l.re, self.zeta * l.im).norm();
                return Some(format!(
                    "|1 + ζλ| = {m} >= 1 for eigenvalue {l} at ζ = {}",
                    self.zeta
                ));
            }
        }
        self.l_spectral_radius
            .map(|r| format!("spectral radius of 𝓛 is {r} >= 1"))
    }
}

pub fn check_stability(a: &Mat, zeta: f64, l_operator: Option<&Mat>) -> Result<StabilityReport> {
    let eig = eigenvalues(a)?;
    let re_negative: Vec<bool> = eig.iter().map(|l| l.re < 0.0).collect();
    let momentum_contractive: Vec<bool> = eig
        .iter()
        .map(|l| Complex::new(1.0 + zeta * l.re, zeta * l.im).norm() < 1.0)
        .collect();
    let l_spectral_radius = l_operator.map(spectral_radius).transpose()?;
    let overall = re_negative.iter().all(|&b| b)
        && momentum_contractive.iter().all(|&b| b)
        && l_spectral_radius.map_or(true, |r| r < 1.0);
    Ok(StabilityReport {
        zeta,
        eigenvalues: eig,
        re_negative,
        momentum_contractive,
        l_spectral_radius,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictedAlgorithm {
    PolSa,
    NeSa,
}

/// Limits of the scaled covariance blocks `n E[θ̃θ̃ᵀ]` (`sigma11`) and
/// `n² E[ΔθΔθᵀ]` (`sigma22`).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePrediction {
    pub algorithm: PredictedAlgorithm,
    pub sigma_star: Mat,
    pub sigma22: Mat,
    pub sigma11: Mat,
    /// `−Σ²² − A⁻¹Σ²² − Σ²²A⁻¹`, the form with `A⁻¹` on both sides. Equals
    /// `sigma11` whenever `A` is symmetric.
    pub sigma11_verbatim: Mat,
    pub sigma11_psd: bool,
}

fn inverse(a: &Mat) -> Result<Mat> {
    a.clone()
        .try_inverse()
        .ok_or(Error::Singular("mean matrix A"))
}

/// `Σ* = A⁻¹ Σ^Δ A⁻ᵀ`
pub fn sigma_star(a: &Mat, sigma_delta: &Mat) -> Result<Mat> {
    let a_inv = inverse(a)?;
    Ok(symmetrize(&(&a_inv * sigma_delta * a_inv.transpose())))
}

/// Covariance limits for PolSA with `ζ = 1`.
pub fn predict_polsa(a: &Mat, sigma_delta: &Mat) -> Result<CovariancePrediction> {
    let report = check_stability(a, 1.0, None)?;
    if let Some(why) = report.failure() {
        return Err(Error::StabilityFailure(why));
    }
    let d = a.nrows();
    let star = sigma_star(a, sigma_delta)?;
    let sigma22 = solve_discrete_lyapunov(&(Mat::identity(d, d) + a), sigma_delta)?;
    Ok(CovariancePrediction {
        algorithm: PredictedAlgorithm::PolSa,
        sigma11_verbatim: star.clone(),
        sigma11_psd: true,
        sigma11: star.clone(),
        sigma_star: star,
        sigma22,
    })
}

/// Covariance limits for NeSA (`ζ = 1`) given the vectorized `𝓛`.
pub fn predict_nesa(l_operator: &Mat, a: &Mat, sigma_delta: &Mat) -> Result<CovariancePrediction> {
    let rho = spectral_radius(l_operator)?;
    if rho >= 1.0 {
        return Err(Error::SpectralRadius(rho));
    }
    let a_inv = inverse(a)?;
    let sigma22 = solve_operator_lyapunov(l_operator, sigma_delta)?;
    let sigma11 = -&sigma22 - &a_inv * &sigma22 - &sigma22 * a_inv.transpose();
    let sigma11_verbatim = -&sigma22 - &a_inv * &sigma22 - &sigma22 * &a_inv;
    let sigma11_psd = is_psd(&sigma11, 1e-10);
    Ok(CovariancePrediction {
        algorithm: PredictedAlgorithm::NeSa,
        sigma_star: sigma_star(a, sigma_delta)?,
        sigma22,
        sigma11: symmetrize(&sigma11),
        sigma11_verbatim,
        sigma11_psd,
    })
}

/// Partial Neumann sums `Σ_{k≤K} 𝓛^k (Σ^Δ)`, the series form of the NeSA
/// `Σ²²`.
pub fn nesa_sigma22_series(l_operator: &Mat, sigma_delta: &Mat, terms: usize) -> Mat {
    let d = sigma_delta.nrows();
    let mut term = vec_of(sigma_delta);
    let mut acc = term.clone();
    for _ in 1..terms {
        term = l_operator * term;
        acc += &term;
    }
    unvec(&acc, d, d)
}

/// Asymptotic covariance of plain SA with a fixed matrix gain `G` and
/// `α_n = 1/n`: the solution of
/// `(GA + I/2) Σ + Σ (GA + I/2)ᵀ + G Σ^Δ Gᵀ = 0`.
///
/// Classical result, used only to spot-check optimality of `Σ*`. Fails when
/// `GA + I/2` is not Hurwitz (the covariance is then infinite).
pub fn sigma_fixed_gain(a: &Mat, g: &Mat, sigma_delta: &Mat) -> Result<Mat> {
    let d = a.nrows();
    let id = Mat::identity(d, d);
    let m = g * a + &id * 0.5;
    if let Some(bad) = eigenvalues(&m)?.iter().find(|l| l.re >= 0.0) {
        return Err(Error::StabilityFailure(format!(
            "GA + I/2 has eigenvalue {bad} with non-negative real part"
        )));
    }
    let system = kron(&id, &m) + kron(&m, &id);
    let rhs = -vec_of(&(g * sigma_delta * g.transpose()));
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("continuous Lyapunov system"))?;
    Ok(symmetrize(&unvec(&sol, d, d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;

    fn s(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    #[test]
    fn stability_examples() {
        assert!(check_stability(&s(-1.0), 1.0, None).unwrap().overall);
        let r = check_stability(&s(-1.0), 2.1, None).unwrap();
        assert!(!r.overall && r.re_negative[0] && !r.momentum_contractive[0]);
        let r = check_stability(&s(0.5), 1.0, None).unwrap();
        assert!(!r.overall && !r.re_negative[0]);
        assert!(r.failure().unwrap().contains("real part"));

        let l = Mat::identity(1, 1) * 1.5;
        let r = check_stability(&s(-1.0), 1.0, Some(&l)).unwrap();
        assert_eq!(r.l_spectral_radius, Some(1.5));
        assert!(!r.overall);
    }

    #[test]
    fn polsa_scalar_closed_forms() {
        let p = predict_polsa(&s(-0.5), &s(1.0)).unwrap();
        assert!((p.sigma_star[(0, 0)] - 4.0).abs() < 1e-14);
        assert!((p.sigma22[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert_eq!(p.sigma11, p.sigma_star);

        let id = Mat::identity(3, 3);
        let p = predict_polsa(&-&id, &id).unwrap();
        assert!((p.sigma_star - &id).norm() < 1e-14);
        assert!((p.sigma22 - &id).norm() < 1e-14);

        let p = predict_polsa(&s(-0.5), &s(0.0)).unwrap();
        assert_eq!(p.sigma22[(0, 0)], 0.0);
        assert_eq!(p.sigma11[(0, 0)], 0.0);

        assert!(predict_polsa(&s(-2.5), &s(1.0)).is_err());
    }

    #[test]
    fn nesa_deterministic_scalar_recovers_sigma_star() {
        // Σ²² = 1/(1 − 0.25) and −Σ²²(1 + 2/a) = 4 = 1/a².
        let a = s(-0.5);
        let l = kron(&(s(1.0) + &a), &(s(1.0) + &a));
        let p = predict_nesa(&l, &a, &s(1.0)).unwrap();
        assert!((p.sigma22[(0, 0)] - 4.0 / 3.0).abs() < 1e-13);
        assert!((p.sigma11[(0, 0)] - 4.0).abs() < 1e-12);
        assert!(p.sigma11_psd);

        let z = predict_nesa(&l, &a, &s(0.0)).unwrap();
        assert_eq!(z.sigma22[(0, 0)], 0.0);
        assert_eq!(z.sigma11[(0, 0)], 0.0);
    }

    #[test]
    fn nesa_neumann_series_converges_to_direct_solve() {
        let spec = crate::linear_model::mixture_model(3, 4).unwrap();
        let f = crate::linear_model::facts(&spec).unwrap();
        let p = predict_nesa(&f.l_operator, spec.a_mean(), spec.noise_cov()).unwrap();
        let series = nesa_sigma22_series(&f.l_operator, spec.noise_cov(), 400);
        assert!((series - &p.sigma22).norm() < 1e-8 * p.sigma22.norm());
    }

    #[test]
    fn nesa_rejects_expansive_operator() {
        let l = Mat::identity(1, 1) * 1.01;
        assert!(matches!(
            predict_nesa(&l, &s(-1.0), &s(1.0)),
            Err(Error::SpectralRadius(_))
        ));
    }

    #[test]
    fn polsa_and_nesa_agree_without_perturbations() {
        let a = Mat::from_row_slice(2, 2, &[-0.6, 0.2, -0.1, -0.4]);
        let sd = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let id = Mat::identity(2, 2);
        let l = kron(&(&id + &a), &(&id + &a));
        let p = predict_polsa(&a, &sd).unwrap();
        let q = predict_nesa(&l, &a, &sd).unwrap();
        assert!((p.sigma22 - q.sigma22).norm() < 1e-12);
        assert!((q.sigma11 - p.sigma_star).norm() < 1e-10);
    }

    #[test]
    fn fixed_gain_covariance_dominates_optimum() {
        // Scalar: Σ^G = g²σ² / (−2ga − 1) ≥ σ²/a², equality at g = −1/a.
        let a = s(-0.5);
        let sd = s(1.0);
        let star = sigma_star(&a, &sd).unwrap()[(0, 0)];
        for g in [1.5, 2.0, 3.0, 5.0] {
            let sg = sigma_fixed_gain(&a, &s(g), &sd).unwrap()[(0, 0)];
            let want = g * g / (g - 1.0);
            assert!((sg - want).abs() < 1e-12);
            assert!(sg >= star - 1e-12);
        }
        assert!(sigma_fixed_gain(&a, &s(0.5), &sd).is_err());

        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.6]);
        let sd = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let star = sigma_star(&a, &sd).unwrap();
        for c in [2.0, 4.0, 8.0] {
            let sg = sigma_fixed_gain(&a, &(Mat::identity(2, 2) * c), &sd).unwrap();
            assert!(is_psd(&(sg - &star), 1e-10));
        }
    }
}
