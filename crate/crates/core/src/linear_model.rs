//! Synthetic linear models `f_{n+1}(θ) = A_{n+1} θ − b_{n+1}` with a known
//! root, noise covariance and second-moment operator.
//!
//! `A_{n+1} = A + Ã_{n+1}` where `Ã` is drawn from a finite zero-mean
//! mixture, and `b_{n+1}` is arranged so that `f_{n+1}(θ*) = Δ*_{n+1}` with
//! `Cov(Δ*) = Σ^Δ`. Draws are i.i.d., so `{Δ*_n}` is a martingale-difference
//! sequence.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    eigenvalues, kron, psd_factor, spectral_radius, symmetrize, Mat, Vector,
};
use crate::sa::LinearSample;

/// Law of the standardized noise vector `z` in `Δ* = R z`, `R Rᵀ = Σ^Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// i.i.d. standard normal entries (unbounded).
    Gaussian,
    /// i.i.d. Rademacher (±1) entries: bounded, mean zero, unit variance.
    BoundedMixture,
}

/// Distribution of `(A_n, b_n)`.
#[derive(Debug, Clone)]
pub struct LinearModelSpec {
    a_mean: Mat,
    b_mean: Vector,
    noise_cov: Mat,
    a_perturbations: Vec<(Mat, f64)>,
    noise_kind: NoiseKind,
    theta_star: Vector,
    noise_factor: Mat,
    mixture: Option<WeightedIndex<f64>>,
}

/// Exact quantities derived from a [`LinearModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFacts {
    pub theta_star: Vector,
    /// `Σ* = A⁻¹ Σ^Δ A⁻ᵀ`
    pub sigma_star: Mat,
    /// Vectorized `𝓛(Q) = E[(I + A_n) Q (I + A_n)ᵀ]`, `d² × d²`.
    pub l_operator: Mat,
}

impl LinearModelSpec {
    /// Validates and builds a model. `a_perturbations` lists `(Ã_i, p_i)`;
    /// an empty list means `A_n ≡ A`.
    pub fn new(
        a_mean: Mat,
        b_mean: Vector,
        noise_cov: Mat,
        a_perturbations: Vec<(Mat, f64)>,
        noise_kind: NoiseKind,
    ) -> Result<Self> {
        let d = a_mean.nrows();
        if a_mean.ncols() != d || b_mean.len() != d || noise_cov.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "linear model: A {:?}, b {}, Σ^Δ {:?} are inconsistent",
                a_mean.shape(),
                b_mean.len(),
                noise_cov.shape()
            )));
        }
        let finite = a_mean.iter().chain(b_mean.iter()).chain(noise_cov.iter());
        if finite.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("linear model parameters"));
        }
        if (&noise_cov - noise_cov.transpose()).norm() > 1e-12 * noise_cov.norm().max(1.0)
            || !crate::linalg::is_psd(&noise_cov, 1e-12)
        {
            return Err(Error::InvalidModel("Σ^Δ must be symmetric PSD".into()));
        }

        let mixture = if a_perturbations.is_empty() {
            None
        } else {
            let mut total = 0.0;
            let mut mean = Mat::zeros(d, d);
            for (m, p) in &a_perturbations {
                if m.shape() != (d, d) {
                    return Err(Error::Shape("perturbation has wrong shape".into()));
                }
                if !(*p > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "mixture probability {p} is not positive"
                    )));
                }
                total += p;
                mean += m * *p;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "mixture probabilities sum to {total}, not 1"
                )));
            }
            if mean.amax() > 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "perturbation mixture has nonzero mean (max entry {})",
                    mean.amax()
                )));
            }
            let weights: Vec<f64> = a_perturbations.iter().map(|(_, p)| *p).collect();
            Some(WeightedIndex::new(weights).map_err(|e| Error::InvalidModel(e.to_string()))?)
        };

        let theta_star = a_mean
            .clone()
            .lu()
            .solve(&b_mean)
            .ok_or(Error::Singular("mean matrix A"))?;
        let noise_factor = psd_factor(&noise_cov);
        Ok(Self {
            a_mean,
            b_mean,
            noise_cov,
            a_perturbations,
            noise_kind,
            theta_star,
            noise_factor,
            mixture,
        })
    }

    pub fn dim(&self) -> usize {
        self.a_mean.nrows()
    }
    pub fn a_mean(&self) -> &Mat {
        &self.a_mean
    }
    pub fn b_mean(&self) -> &Vector {
        &self.b_mean
    }
    pub fn noise_cov(&self) -> &Mat {
        &self.noise_cov
    }
    pub fn a_perturbations(&self) -> &[(Mat, f64)] {
        &self.a_perturbations
    }
    pub fn noise_kind(&self) -> NoiseKind {
        self.noise_kind
    }
    pub fn theta_star(&self) -> &Vector {
        &self.theta_star
    }

    /// Whether the noise is bounded, as the martingale-difference
    /// assumptions on `(Ã_n, b̃_n)` require.
    pub fn has_bounded_noise(&self) -> bool {
        self.noise_kind == NoiseKind::BoundedMixture
    }

    /// One i.i.d. draw `(A_{n+1}, b_{n+1})`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LinearSample {
        let d = self.dim();
        let a = match &self.mixture {
            None => self.a_mean.clone(),
            Some(w) => &self.a_mean + &self.a_perturbations[w.sample(rng)].0,
        };
        let z = match self.noise_kind {
            NoiseKind::Gaussian => Vector::from_fn(d, |_, _| rng.sample(StandardNormal)),
            NoiseKind::BoundedMixture => {
                Vector::from_fn(d, |_, _| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            }
        };
        let noise = &self.noise_factor * z;
        let b = &a * &self.theta_star - noise;
        LinearSample::dense(a, b)
    }

    /// `𝓛(Q)` evaluated directly as the mixture average.
    pub fn apply_l(&self, q: &Mat) -> Mat {
        let id = Mat::identity(self.dim(), self.dim());
        if self.a_perturbations.is_empty() {
            let m = &id + &self.a_mean;
            return &m * q * m.transpose();
        }
        let mut out = Mat::zeros(self.dim(), self.dim());
        for (pert, p) in &self.a_perturbations {
            let m = &id + &self.a_mean + pert;
            out += (&m * q * m.transpose()) * *p;
        }
        out
    }
}

/// Root, optimal covariance and the vectorized second-moment operator.
pub fn facts(spec: &LinearModelSpec) -> Result<ModelFacts> {
    let d = spec.dim();
    let a_inv = spec
        .a_mean
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("mean matrix A"))?;
    let sigma_star = symmetrize(&(&a_inv * &spec.noise_cov * a_inv.transpose()));
    let id = Mat::identity(d, d);
    let l_operator = if spec.a_perturbations.is_empty() {
        let m = &id + &spec.a_mean;
        kron(&m, &m)
    } else {
        let mut acc = Mat::zeros(d * d, d * d);
        for (pert, p) in &spec.a_perturbations {
            let m = &id + &spec.a_mean + pert;
            acc += kron(&m, &m) * *p;
        }
        acc
    };
    Ok(ModelFacts {
        theta_star: spec.theta_star.clone(),
        sigma_star,
        l_operator,
    })
}

/// Stability conditions for momentum gain `zeta`: every eigenvalue `λ` of
/// `A` has `Re λ < 0` and `|1 + ζλ| < 1`.
pub fn satisfies_eigen_conditions(a: &Mat, zeta: f64) -> Result<bool> {
    Ok(eigenvalues(a)?.iter().all(|l| {
        let shifted = nalgebra::Complex::new(1.0 + zeta * l.re, zeta * l.im);
        l.re < 0.0 && shifted.norm() < 1.0
    }))
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Mat {
    let g = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Random model in the style of the coupling experiment: `−A` symmetric
/// positive definite with `λ_max(−A) = 1`, Gaussian noise, `A_n ≡ A`.
///
/// `−A = W + I/4` rescaled, with `W = G Gᵀ / d` for a standard Gaussian
/// `G`. The root is the all-ones vector and `Σ^Δ = I` (unit-scale noise;
/// the covariance checks are scale-covariant).
pub fn figure2_model(d: usize, rng_seed: u64) -> Result<LinearModelSpec> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let g = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = symmetrize(&(&g * g.transpose() / d as f64)) + Mat::identity(d, d) * 0.25;
    let lmax = w.clone().symmetric_eigen().eigenvalues.max();
    let a = -symmetrize(&(w / lmax));
    let theta_star = Vector::from_element(d, 1.0);
    let b = &a * &theta_star;
    LinearModelSpec::new(a, b, Mat::identity(d, d), Vec::new(), NoiseKind::Gaussian)
}

/// Scalar model `A = −0.5`, `Σ^Δ = 1`, `θ* = 1`.
pub fn scalar_model() -> LinearModelSpec {
    LinearModelSpec::new(
        Mat::from_element(1, 1, -0.5),
        Vector::from_element(1, -0.5),
        Mat::identity(1, 1),
        Vec::new(),
        NoiseKind::Gaussian,
    )
    .expect("scalar preset is valid")
}

/// Model with a genuinely random `A_n`: symmetric `A` with spectrum in
/// `[−0.7, −0.3]`, and `Ã_n = ±E` with probability ½ each for a symmetric
/// `E` of spectral norm 0.3. Noise is bounded (Rademacher) with
/// `Σ^Δ = I/2 + 𝟙𝟙ᵀ/(4d)`.
pub fn mixture_model(d: usize, rng_seed: u64) -> Result<LinearModelSpec> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let q = random_orthogonal(d, &mut rng);
    let spectrum = Vector::from_fn(d, |i, _| {
        if d == 1 {
            -0.5
        } else {
            -0.3 - 0.4 * i as f64 / (d - 1) as f64
        }
    });
    let a = symmetrize(&(&q * Mat::from_diagonal(&spectrum) * q.transpose()));
    let h = Mat::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let e = symmetrize(&h);
    let enorm = e
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let e = e * (0.3 / enorm);
    let theta_star = Vector::from_fn(d, |i, _| 1.0 + 0.5 * i as f64);
    let b = &a * &theta_star;
    let noise = Mat::identity(d, d) * 0.5 + Mat::from_element(d, d, 0.25 / d as f64);
    LinearModelSpec::new(
        a,
        b,
        noise,
        vec![(e.clone(), 0.5), (-e, 0.5)],
        NoiseKind::BoundedMixture,
    )
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &["scalar", "fig2", "fig2-d4", "mixture-d3", "mixture-d4"];

/// Seed used for every randomized preset.
pub const PRESET_SEED: u64 = 2018;

/// Named model presets.
pub fn preset(name: &str) -> Result<LinearModelSpec> {
    match name {
        "scalar" => Ok(scalar_model()),
        "fig2" => figure2_model(10, PRESET_SEED),
        "fig2-d4" => figure2_model(4, PRESET_SEED),
        "mixture-d3" => mixture_model(3, PRESET_SEED),
        "mixture-d4" => mixture_model(4, PRESET_SEED),
        other => Err(Error::InvalidArgument(format!(
            "unknown model preset `{other}` (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Spectral radius of the vectorized `𝓛`.
pub fn l_spectral_radius(spec: &LinearModelSpec) -> Result<f64> {
    spectral_radius(&facts(spec)?.l_operator)
}
