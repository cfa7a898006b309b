//! Stochastic approximation with matrix momentum.
//!
//! Root finding for `f̄(θ) = E[f_n(θ)] = 0` from noisy linear evaluations
//! `f_{n+1}(θ) = A_{n+1}θ − b_{n+1}`, with five update rules:
//!
//! | algorithm | increment `Δθ_{n+1}` |
//! |-----------|----------------------|
//! | SA        | `α G f(θ_n)` |
//! | SNR       | `−α Â⁺ f(θ_n)` |
//! | PolSA     | `(I + ζÂ) Δθ_n + αζ f(θ_n)` |
//! | PolSA-D   | `(I + D̂Â) Δθ_n + α D̂ f(θ_n)` |
//! | NeSA      | `Δθ_n + ζ[f(θ_n) − f(θ_{n−1})] + αζ f(θ_n)` |
//!
//! PolSA couples with SNR and so reaches the optimal asymptotic covariance
//! `A⁻¹Σ^ΔA⁻ᵀ` without any matrix inversion; NeSA is cheaper still, with a
//! covariance given by a Lyapunov equation.
//!
//! Modules:
//!
//! * [`linalg`]: eigenvalues, pseudo-inverse, Kronecker products, Lyapunov solves
//! * [`sa`]: the steppers and the single-run driver
//! * [`linear_model`]: synthetic `(A_n, b_n)` generators and presets
//! * [`variance`]: analytic covariance predictions and stability checks
//! * [`mdp`]: finite MDPs, random-graph shortest path, value iteration, exploration
//! * [`rl`]: Q-learning and TD(0)-family instantiations
//! * [`harness`]: seeded parallel Monte-Carlo trials and their statistics
//! * [`cli`]: the `samom` command line
//!
//! Runnable walkthroughs live in this crate's `examples/` directory.

pub mod cli;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod linear_model;
pub mod mdp;
pub mod rl;
pub mod sa;
pub mod variance;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
