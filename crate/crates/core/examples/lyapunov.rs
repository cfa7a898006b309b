//! Linear-algebra toolkit: Kronecker products, vectorized Lyapunov solves,
//! eigenvalues and pseudo-inverses.

use sa_momentum::linalg::{
    eigenvalues, kron, pseudo_inverse_default, solve_discrete_lyapunov, solve_operator_lyapunov,
};
use sa_momentum::Mat;

fn main() -> sa_momentum::Result<()> {
    // X = F X Fᵀ + Q
    let f = Mat::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
    let q = Mat::identity(2, 2);
    let x = solve_discrete_lyapunov(&f, &q)?;
    println!("X =\n{x:.6}");
    println!("residual {:.2e}", (&x - &f * &x * f.transpose() - &q).norm());

    // Same fixed point through the d²×d² operator F ⊗ F.
    let y = solve_operator_lyapunov(&kron(&f, &f), &q)?;
    println!("operator form agrees to {:.2e}", (&x - &y).norm());

    for l in eigenvalues(&f)? {
        println!("λ(F) = {:.4}{:+.4}i  |λ| = {:.4}", l.re, l.im, l.norm());
    }

    let rank_one = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
    let p = pseudo_inverse_default(&rank_one)?;
    println!("‖M M⁺ M − M‖ = {:.2e}", (&rank_one * &p * &rank_one - &rank_one).norm());
    Ok(())
}
