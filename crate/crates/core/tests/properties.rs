//! Randomized invariants of every module. No Monte-Carlo experiment is run.

mod common;

use proptest::prelude::*;

use common::*;

fn ok(c: Check) -> std::result::Result<(), TestCaseError> {
    c.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn pseudo_inverse_penrose(seed in any::<u64>(), rows in 1usize..7, cols in 1usize..7, rank in 1usize..7) {
        ok(penrose(seed, rows, cols, rank))?;
    }

    #[test]
    fn kron_eigenvalues_are_products(seed in any::<u64>(), da in 1usize..4, db in 1usize..4) {
        ok(kron_spectrum(seed, da, db))?;
    }

    #[test]
    fn lyapunov_solution_residual_and_psd(seed in any::<u64>(), d in 1usize..6) {
        ok(lyapunov_residual(seed, d))?;
    }

    #[test]
    fn stability_predicates_match_eigenvalues(seed in any::<u64>(), d in 1usize..5) {
        ok(stability_predicate(seed, d))?;
    }

    #[test]
    fn nesa_two_forms_coincide(seed in any::<u64>(), d in 1usize..6) {
        ok(nesa_forms_agree(seed, d))?;
    }

    #[test]
    fn snr_error_representation(seed in any::<u64>(), d in 1usize..6, n in 1usize..120) {
        let worst = snr_representation(seed, d, n).map_err(TestCaseError::fail)?;
        prop_assert!(worst <= 1e-6, "relative error {}", worst);
    }

    #[test]
    fn q_samples_are_sparse(seed in any::<u64>(), nodes in 2usize..12) {
        ok(q_sparsity(seed, nodes))?;
    }

    #[test]
    fn mdp_rows_stochastic_and_value_iteration_bound(seed in any::<u64>(), nodes in 2usize..15) {
        ok(mdp_rows_and_vi(seed, nodes))?;
    }

    #[test]
    fn td_samples_rank_one(seed in any::<u64>(), l in 2usize..7) {
        ok(td_rank_one(seed, l))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn trials_are_bitwise_reproducible(seed in any::<u64>()) {
        ok(determinism(seed))?;
    }

    #[test]
    fn split_aggregation_is_exact(seed in any::<u64>()) {
        ok(two_half_aggregation(seed))?;
    }
}
