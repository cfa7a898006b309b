//! Invariant checks shared by the property suite and the acceptance runner.
//! Each takes a seed (and a size) and returns a description of the first
//! violation found.

#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sa_momentum::harness::{accumulate_moments, run_trials, AlgoSpec, Problem, TrialPlan};
use sa_momentum::linalg::{
    eigenvalues, is_psd, kron, pseudo_inverse_default, solve_discrete_lyapunov,
};
use sa_momentum::linear_model::{preset, satisfies_eigen_conditions};
use sa_momentum::mdp::{
    q_value_iteration, random_graph_mdp, bellman_error, ExplorationKind, ExplorationStream,
    STOCHASTIC_TOL,
};
use sa_momentum::rl::{q_sample, td_sample, QAlgorithm, QEvent, TdModel};
use sa_momentum::sa::{
    step_nesa, step_nesa_matrix, Algorithm, GainSchedule, IterateState, LinearSample, Stepper,
};
use sa_momentum::variance::check_stability;
use sa_momentum::{Mat, Vector};

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_mat(r: usize, c: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(d: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Random `A` with `ρ(I + A) < 1`, not symmetric.
pub fn random_stable(d: usize, rng: &mut impl Rng) -> Mat {
    loop {
        let g = gaussian_mat(d, d, rng);
        let k = gaussian_mat(d, d, rng);
        let s = &g * g.transpose() / d as f64 + Mat::identity(d, d) * 0.3;
        let a = -(s + (&k - k.transpose()) * 0.2);
        // rescale until I + cA is a contraction
        for c in [1.0, 0.5, 0.25, 0.1] {
            let ac = &a * c;
            let r = eigenvalues(&(Mat::identity(d, d) + &ac))
                .unwrap()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            if r < 0.95 {
                return ac;
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `M M⁺ M = M`, `M⁺ M M⁺ = M⁺`, both products symmetric.
pub fn penrose(seed: u64, rows: usize, cols: usize, rank: usize) -> Check {
    let mut r = rng(seed);
    let rank = rank.min(rows).min(cols);
    let m = gaussian_mat(rows, rank, &mut r) * gaussian_mat(rank, cols, &mut r);
    let p = pseudo_inverse_default(&m).map_err(|e| e.to_string())?;
    let scale = 1.0 + m.norm() * p.norm();
    let tol = 1e-9 * scale * scale;
    let checks = [
        (&m * &p * &m - &m).norm(),
        (&p * &m * &p - &p).norm(),
        (&m * &p - (&m * &p).transpose()).norm(),
        (&p * &m - (&p * &m).transpose()).norm(),
    ];
    for (i, c) in checks.iter().enumerate() {
        ensure(*c <= tol, || format!("Penrose identity {i} off by {c} (seed {seed})"))?;
    }
    Ok(())
}

/// Eigenvalues of `A ⊗ B` are the pairwise products.
pub fn kron_spectrum(seed: u64, da: usize, db: usize) -> Check {
    let mut r = rng(seed);
    // symmetric factors keep the spectra real and easy to match
    let a = {
        let g = gaussian_mat(da, da, &mut r);
        &g + g.transpose()
    };
    let b = {
        let g = gaussian_mat(db, db, &mut r);
        &g + g.transpose()
    };
    let mut want: Vec<f64> = Vec::new();
    for x in eigenvalues(&a).unwrap() {
        for y in eigenvalues(&b).unwrap() {
            want.push(x.re * y.re);
        }
    }
    let mut got: Vec<f64> = eigenvalues(&kron(&a, &b)).unwrap().iter().map(|z| z.re).collect();
    want.sort_by(|x, y| x.total_cmp(y));
    got.sort_by(|x, y| x.total_cmp(y));
    let scale = 1.0 + want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (g, w) in got.iter().zip(&want) {
        ensure((g - w).abs() <= 1e-8 * scale, || {
            format!("kron eigenvalue {g} vs {w} (seed {seed})")
        })?;
    }
    Ok(())
}

/// `X = F X Fᵀ + Q` holds and `X` is PSD for PSD `Q`.
pub fn lyapunov_residual(seed: u64, d: usize) -> Check {
    let mut r = rng(seed);
    let a = random_stable(d, &mut r);
    let f = Mat::identity(d, d) + &a;
    let g = gaussian_mat(d, d, &mut r);
    let q = &g * g.transpose();
    let x = solve_discrete_lyapunov(&f, &q).map_err(|e| e.to_string())?;
    let res = (&f * &x * f.transpose() + &q - &x).norm();
    ensure(res <= 1e-8 * (1.0 + x.norm()), || {
        format!("Lyapunov residual {res} (seed {seed})")
    })?;
    ensure(is_psd(&x, 1e-9 * (1.0 + x.norm())), || {
        format!("Lyapunov solution not PSD (seed {seed})")
    })
}

/// The stability report agrees with eigenvalues computed directly.
pub fn stability_predicate(seed: u64, d: usize) -> Check {
    let mut r = rng(seed);
    let a = gaussian_mat(d, d, &mut r) * 0.7 - Mat::identity(d, d) * r.gen_range(0.0..1.5);
    let zeta = r.gen_range(0.1..2.0);
    let ev = eigenvalues(&a).unwrap();
    let re_neg = ev.iter().all(|z| z.re < 0.0);
    let contract = ev
        .iter()
        .all(|z| (z * zeta + 1.0).norm() < 1.0);
    let rep = check_stability(&a, zeta, None).map_err(|e| e.to_string())?;
    ensure(
        rep.re_negative.iter().all(|b| *b) == re_neg
            && rep.momentum_contractive.iter().all(|b| *b) == contract
            && rep.overall == (re_neg && contract),
        || {
        format!("stability flags disagree with eigenvalues (seed {seed})")
    })?;
    let both = satisfies_eigen_conditions(&a, zeta).map_err(|e| e.to_string())?;
    ensure(both == (re_neg && contract), || {
        format!("eigen-condition predicate disagrees (seed {seed})")
    })
}

/// Two-evaluation and matrix forms of NeSA coincide on linear samples.
pub fn nesa_forms_agree(seed: u64, d: usize) -> Check {
    let mut r = rng(seed);
    let mut s1 = IterateState::new(gaussian_vec(d, &mut r));
    s1.dtheta = gaussian_vec(d, &mut r);
    let mut s2 = s1.clone();
    let sched = GainSchedule::default();
    for _ in 0..20 {
        let smp = LinearSample::dense(gaussian_mat(d, d, &mut r) * 0.3, gaussian_vec(d, &mut r));
        step_nesa(&mut s1, &smp, &sched, 0.7);
        step_nesa_matrix(&mut s2, &smp, &sched, 0.7);
    }
    let diff = (&s1.theta - &s2.theta).norm();
    ensure(diff <= 1e-10 * (1.0 + s1.theta.norm()), || {
        format!("NeSA forms differ by {diff} (seed {seed})")
    })
}

/// `nÂ_nθ̃_n = −Σ_{k≤n} Δ*_k` for SNR with `α_n = 1/n` and idealized SNR's
/// `nθ̃*_n = −A⁻¹ Σ Δ_k`. Returns the worst relative error.
pub fn snr_representation(seed: u64, d: usize, n: usize) -> std::result::Result<f64, String> {
    let mut r = rng(seed);
    let a = random_stable(d, &mut r);
    let a_inv = a.clone().try_inverse().ok_or("singular mean")?;
    let theta_star = gaussian_vec(d, &mut r);
    let theta0 = gaussian_vec(d, &mut r);
    let sched = GainSchedule::default();
    let mut snr = Stepper::new(Algorithm::snr(), theta0.clone());
    let mut ideal = Stepper::new(Algorithm::SnrIdealized { a_inv: a_inv.clone() }, theta0);
    let mut sum_star = Vector::zeros(d);
    let mut sum_delta = Vector::zeros(d);
    let mut a_sum = Mat::zeros(d, d);
    let mut worst = 0.0f64;
    for k in 1..=n {
        let ak = &a + gaussian_mat(d, d, &mut r) * 0.5;
        let bk = &ak * &theta_star + gaussian_vec(d, &mut r);
        let smp = LinearSample::dense(ak.clone(), bk);
        sum_star += smp.eval(&theta_star);
        // Δ_k = f_k(θ*_{k−1}) − A θ̃*_{k−1}
        let prev = ideal.state.theta.clone();
        sum_delta += smp.eval(&prev) - &a * (&prev - &theta_star);
        a_sum += &ak;
        snr.step(&smp, &sched, None).map_err(|e| e.to_string())?;
        ideal.step(&smp, &sched, None).map_err(|e| e.to_string())?;

        let lhs = &a_sum * (&snr.state.theta - &theta_star);
        let rel = (&lhs + &sum_star).norm() / (lhs.norm() + sum_star.norm()).max(1e-300);
        worst = worst.max(rel);
        let lhs = (&ideal.state.theta - &theta_star) * k as f64;
        let rhs = -(&a_inv * &sum_delta);
        let rel = (&lhs - &rhs).norm() / (lhs.norm() + rhs.norm()).max(1e-300);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Every Q-learning sample has at most two nonzeros in `A` and one in `b`.
pub fn q_sparsity(seed: u64, nodes: usize) -> Check {
    let mut r = rng(seed);
    let mdp = random_graph_mdp(nodes, 0.3, 0.8, seed, 0.8).map_err(|e| e.to_string())?;
    let mut s = ExplorationStream::new(ExplorationKind::Async, &mdp, &mut r);
    let theta = gaussian_vec(mdp.d(), &mut r);
    for _ in 0..500 {
        let e = QEvent::new(&mdp, s.next_event(&mdp, &mut r), &theta);
        let smp = q_sample(&mdp, &e);
        ensure(smp.a.nnz() <= 2, || format!("A has {} nonzeros (seed {seed})", smp.a.nnz()))?;
        let nb = smp.b.iter().filter(|v| **v != 0.0).count();
        ensure(nb <= 1, || format!("b has {nb} nonzeros (seed {seed})"))?;
    }
    Ok(())
}

/// Transition rows of generated MDPs are distributions; value iteration
/// meets its residual bound.
pub fn mdp_rows_and_vi(seed: u64, nodes: usize) -> Check {
    let mdp = random_graph_mdp(nodes, 0.3, 0.8, seed, 0.9).map_err(|e| e.to_string())?;
    for i in 0..mdp.d() {
        let row = mdp.transition_row(i);
        let s: f64 = row.iter().sum();
        ensure((s - 1.0).abs() <= STOCHASTIC_TOL && row.iter().all(|p| *p >= 0.0), || {
            format!("row {i} sums to {s} (seed {seed})")
        })?;
    }
    let tol = 1e-8;
    let q = q_value_iteration(&mdp, tol).map_err(|e| e.to_string())?;
    let err = bellman_error(&mdp, &q);
    ensure(err <= tol, || format!("Bellman residual {err} > {tol} (seed {seed})"))
}

/// TD samples are rank one.
pub fn td_rank_one(seed: u64, l: usize) -> Check {
    let mut r = rng(seed);
    let p = {
        let raw = Mat::from_fn(l, l, |_, _| r.gen_range(0.01..1.0));
        let mut m = raw.clone();
        for i in 0..l {
            let s = raw.row(i).sum();
            for j in 0..l {
                m[(i, j)] = raw[(i, j)] / s;
            }
            let fix = 1.0 - m.row(i).sum();
            m[(i, l - 1)] += fix;
        }
        m
    };
    let feats = gaussian_mat(l, l.min(3), &mut r);
    let model = TdModel::new(feats, gaussian_vec(l, &mut r), 0.6, p).map_err(|e| e.to_string())?;
    for _ in 0..50 {
        let (x, y) = (r.gen_range(0..l), r.gen_range(0..l));
        let a = td_sample(&model, x, y).a.to_dense();
        ensure(a.rank(1e-10 * (1.0 + a.norm())) <= 1, || format!("rank > 1 (seed {seed})"))?;
    }
    Ok(())
}

/// Same plan and seed give identical output, whatever the thread count.
pub fn determinism(seed: u64) -> Check {
    let mdp = Arc::new(random_graph_mdp(6, 0.4, 0.8, seed, 0.8).map_err(|e| e.to_string())?);
    let mut plan = TrialPlan::new(
        Problem::QLearning {
            mdp,
            exploration: ExplorationKind::Async,
        },
        QAlgorithm::ALL
            .iter()
            .map(|a| AlgoSpec::new(a.name(), a.algorithm()))
            .collect(),
        300,
        3,
    );
    plan.base_seed = seed;
    let a = run_trials(&plan).map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(2)
        .build()
        .map_err(|e| e.to_string())?;
    let b = pool.install(|| run_trials(&plan)).map_err(|e| e.to_string())?;
    ensure(a.results == b.results, || format!("runs differ (seed {seed})"))?;
    let sums: Vec<u64> = a.results[0].traces.iter().map(|t| t.checksum).collect();
    ensure(sums.windows(2).all(|w| w[0] == w[1]), || {
        format!("paired streams differ (seed {seed})")
    })
}

/// Moments aggregated in two halves equal the one-pass result.
pub fn two_half_aggregation(seed: u64) -> Check {
    let m = Arc::new(preset("mixture-d3").map_err(|e| e.to_string())?);
    let ts = m.theta_star().clone();
    let mut plan = TrialPlan::new(
        Problem::Linear(m),
        vec![AlgoSpec::new("nesa", Algorithm::nesa(1.0))],
        50,
        8,
    );
    plan.base_seed = seed;
    let set = run_trials(&plan).map_err(|e| e.to_string())?;
    let all = accumulate_moments(&set, 0, &ts, 0..8);
    let mut lo = accumulate_moments(&set, 0, &ts, 0..3);
    let hi = accumulate_moments(&set, 0, &ts, 3..8);
    for (x, y) in lo.iter_mut().zip(&hi) {
        for i in 0..3 {
            x[i].merge(&y[i]);
        }
    }
    for (x, y) in lo.iter().zip(&all) {
        for i in 0..3 {
            let d = (x[i].mean() - y[i].mean()).norm();
            ensure(d <= 1e-12 * (1.0 + y[i].mean().norm()), || {
                format!("split aggregation off by {d} (seed {seed})")
            })?;
        }
    }
    Ok(())
}
