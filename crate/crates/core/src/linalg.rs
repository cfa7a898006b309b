//! Small dense linear algebra: spectra, pseudo-inverses, Kronecker products
//! and discrete Lyapunov solves.
//!
//! Everything here works on `nalgebra` dynamic matrices. Dimensions are small
//! (tabular problems stay below a few hundred coordinates), so all routines
//! are dense.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix.
pub type Mat = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Largest dimension accepted by [`eigenvalues`].
pub const MAX_EIGEN_DIM: usize = 512;

/// Above this dimension the Lyapunov solve switches from the vectorized
/// `d² × d²` system to the doubling iteration.
pub const MAX_VECTORIZED_DIM: usize = 32;

/// Default relative cut-off for [`pseudo_inverse_default`].
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;

fn check_square(m: &Mat, what: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// All eigenvalues of a square matrix, with multiplicity.
///
/// Computed from the real Schur form. The order is whatever the Schur
/// decomposition produces; callers that need an order should sort.
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>> {
    let d = check_square(m, "eigenvalues")?;
    if d > MAX_EIGEN_DIM {
        return Err(Error::Shape(format!(
            "eigenvalues: dimension {d} exceeds the cap of {MAX_EIGEN_DIM}"
        )));
    }
    if d == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eigenvalues input"));
    }
    // Triangular input (zero and diagonal included) needs no iteration.
    let upper = (0..d).all(|j| (j + 1..d).all(|i| m[(i, j)] == 0.0));
    let lower = (0..d).all(|j| (0..j).all(|i| m[(i, j)] == 0.0));
    if upper || lower {
        return Ok((0..d).map(|i| Complex::new(m[(i, i)], 0.0)).collect());
    }
    if m == &m.transpose() {
        let e = m.clone().symmetric_eigenvalues();
        return Ok(e.iter().map(|&x| Complex::new(x, 0.0)).collect());
    }
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 100_000)
        .ok_or(Error::EigenFailure { dim: d })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Moore–Penrose pseudo-inverse. Singular values at or below `tol` are
/// treated as zero.
pub fn pseudo_inverse(m: &Mat, tol: f64) -> Result<Mat> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pseudo_inverse: tolerance must be non-negative, got {tol}"
        )));
    }
    if m.is_empty() {
        return Ok(Mat::zeros(m.ncols(), m.nrows()));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = Mat::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            // out += v_k (1/s) u_kᵀ
            out.ger(1.0 / s, &v_t.row(k).transpose(), &u.column(k), 1.0);
        }
    }
    Ok(out)
}

/// Pseudo-inverse with the cut-off `DEFAULT_PINV_RTOL × σ_max`.
pub fn pseudo_inverse_default(m: &Mat) -> Result<Mat> {
    let smax = if m.is_empty() {
        0.0
    } else {
        m.clone().singular_values().max()
    };
    pseudo_inverse(m, DEFAULT_PINV_RTOL * smax)
}

/// Computes `m⁺ · rhs` with singular values below `rtol × σ_max` dropped.
///
/// A partial-pivot LU solve is tried first; when its pivots look
/// rank-deficient (ratio of smallest to largest below `1e-6`) the SVD route
/// is taken instead. On a nonsingular, reasonably conditioned matrix both
/// routes give `m⁻¹ · rhs`.
pub fn pinv_solve(m: &Mat, rhs: &Vector, rtol: f64) -> Vector {
    let d = m.nrows();
    debug_assert_eq!(d, m.ncols());
    if d == 0 {
        return Vector::zeros(0);
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    for i in 0..d {
        let p = u[(i, i)].abs();
        pmin = pmin.min(p);
        pmax = pmax.max(p);
    }
    if pmax > 0.0 && pmin > 1e-6 * pmax {
        if let Some(x) = lu.solve(rhs) {
            if x.iter().all(|v| v.is_finite()) {
                return x;
            }
        }
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Vector::zeros(d);
    }
    svd.solve(rhs, rtol * smax)
        .unwrap_or_else(|_| Vector::zeros(d))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Column-major vectorization of a matrix.
pub fn vec_of(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`] for a `rows × cols` matrix.
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v.as_slice())
}

/// `(m + mᵀ) / 2`
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Frobenius-relative distance `‖x − target‖_F / ‖target‖_F`.
///
/// Falls back to the absolute distance when the target is zero.
pub fn frobenius_rel(x: &Mat, target: &Mat) -> f64 {
    let diff = (x - target).norm();
    let scale = target.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Solves `X = f X fᵀ + q` for `X`.
///
/// Requires the spectral radius of `f` to be strictly below one. The solve
/// is done on the vectorized system `(I − f ⊗ f) vec(X) = vec(q)` for
/// `d ≤ MAX_VECTORIZED_DIM`; larger problems use the doubling iteration.
/// The result is symmetrized.
pub fn solve_discrete_lyapunov(f: &Mat, q: &Mat) -> Result<Mat> {
    let d = check_square(f, "solve_discrete_lyapunov")?;
    if q.shape() != (d, d) {
        return Err(Error::Shape(format!(
            "solve_discrete_lyapunov: q is {}x{}, expected {d}x{d}",
            q.nrows(),
            q.ncols()
        )));
    }
    check_stable(f)?;
    let x = if d <= MAX_VECTORIZED_DIM {
        let system = Mat::identity(d * d, d * d) - kron(f, f);
        let sol = system
            .lu()
            .solve(&vec_of(q))
            .ok_or(Error::Singular("I - f⊗f"))?;
        unvec(&sol, d, d)
    } else {
        lyapunov_doubling(f, q)
    };
    Ok(symmetrize(&x))
}

fn check_stable(f: &Mat) -> Result<()> {
    let eig = eigenvalues(f)?;
    if let Some(worst) = eig
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
    {
        if worst.norm() >= 1.0 {
            return Err(Error::Unstable {
                re: worst.re,
                im: worst.im,
                modulus: worst.norm(),
            });
        }
    }
    Ok(())
}

// Smith doubling: X_{k+1} = X_k + F_k X_k F_kᵀ, F_{k+1} = F_k².
fn lyapunov_doubling(f: &Mat, q: &Mat) -> Mat {
    let mut x = q.clone();
    let mut fk = f.clone();
    for _ in 0..64 {
        let incr = &fk * &x * fk.transpose();
        let done = incr.norm() <= 1e-16 * x.norm().max(f64::MIN_POSITIVE);
        x += incr;
        if done {
            break;
        }
        fk = &fk * &fk;
    }
    x
}

/// Solves `(I − L) vec(X) = vec(q)` for a vectorized linear operator `L`
/// acting on `d × d` matrices, and symmetrizes the result.
///
/// Dense LU up to `d = MAX_VECTORIZED_DIM`, fixed-point iteration
/// `X ← L(X) + q` to relative tolerance `1e-10` above that. The caller is
/// expected to have checked that the spectral radius of `L` is below one.
pub fn solve_operator_lyapunov(l_op: &Mat, q: &Mat) -> Result<Mat> {
    let d = check_square(q, "solve_operator_lyapunov")?;
    if l_op.shape() != (d * d, d * d) {
        return Err(Error::Shape(format!(
            "solve_operator_lyapunov: operator is {}x{}, expected {}x{}",
            l_op.nrows(),
            l_op.ncols(),
            d * d,
            d * d
        )));
    }
    let vq = vec_of(q);
    let sol = if d <= MAX_VECTORIZED_DIM {
        (Mat::identity(d * d, d * d) - l_op)
            .lu()
            .solve(&vq)
            .ok_or(Error::Singular("I - L"))?
    } else {
        let mut x = vq.clone();
        let mut converged = false;
        for _ in 0..1_000_000 {
            let next = l_op * &x + &vq;
            let step = (&next - &x).norm();
            x = next;
            if step <= 1e-10 * x.norm().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence("operator Lyapunov fixed-point iteration"));
        }
        x
    };
    Ok(symmetrize(&unvec(&sol, d, d)))
}

/// True when every eigenvalue of the symmetric part is `≥ -tol`.
pub fn is_psd(m: &Mat, tol: f64) -> bool {
    if m.is_empty() {
        return true;
    }
    let s = symmetrize(m);
    let scale = s.norm().max(1.0);
    s.symmetric_eigen()
        .eigenvalues
        .iter()
        .all(|&l| l >= -tol * scale)
}

/// Symmetric square root factor `R` with `R Rᵀ = m` for a PSD matrix.
/// Negative round-off eigenvalues are clipped to zero.
pub fn psd_factor(m: &Mat) -> Mat {
    let eig = symmetrize(m).symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&sqrt_vals)
}
