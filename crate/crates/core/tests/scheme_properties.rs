use paulilearn::channel::{hypothesis_channel, Sign};
use paulilearn::linalg::{identity, max_abs_diff, random_density, real_trace, Mat};
use paulilearn::random::{random_instrument, random_pauli_channel, random_policy, random_separable_scheme};
use paulilearn::scheme::{
    compile_cma_to_separable, compile_separable_to_cma, count_measurements, is_trivial_instrument, povm_element_of,
    run_scheme_exact, Instrument,
};
use paulilearn::tvd::mu_trajectory_check;
use paulilearn::PauliString;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn instruments_are_complete(seed in any::<u64>(), n in 1usize..=2) {
        let mut r = rng(seed);
        let dim = 1 << n;
        let instr = random_instrument(dim, &mut r);
        let total = instr.branches().iter().map(povm_element_of).fold(Mat::zeros(dim, dim), |acc, e| acc + e);
        prop_assert!(max_abs_diff(&total, &identity(dim)) < 1e-9);
    }

    #[test]
    fn exact_distributions_are_normalized(seed in any::<u64>(), n in 1usize..=2, depth in 1usize..=3) {
        let mut r = rng(seed);
        let policy = random_policy(n, depth, &mut r).unwrap();
        let channel = random_pauli_channel(n, &mut r).unwrap();
        let dist = run_scheme_exact(&policy, &channel).unwrap();
        prop_assert!(dist.entries().values().all(|&p| p >= -1e-12));
        prop_assert!((dist.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trivial_instruments_ignore_the_state(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dim = 2;
        let instr = random_instrument(dim, &mut r);
        if is_trivial_instrument(&instr, 1e-9) {
            let probs = |rho: &Mat| -> Vec<f64> { instr.branches().iter().map(|b| real_trace(&b.apply(rho))).collect() };
            let reference = probs(&random_density(dim, 1, &mut r));
            for _ in 0..4 {
                let other = probs(&random_density(dim, 2, &mut r));
                for (a, b) in reference.iter().zip(&other) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn inserted_identities_do_not_count(seed in any::<u64>(), depth in 1usize..=3) {
        let mut r = rng(seed);
        let policy = random_policy(1, depth, &mut r).unwrap();
        let step = r.random_range(1..=depth);
        let widened = policy.with_identity_inserted(step).unwrap();
        prop_assert_eq!(widened.depth(), depth + 1);
        prop_assert_eq!(count_measurements(&widened), count_measurements(&policy));
    }

    #[test]
    fn separable_schemes_compile_to_equivalent_policies(seed in any::<u64>(), dim_a in 1usize..=4, depth in 1usize..=2) {
        let mut r = rng(seed);
        let sep = random_separable_scheme(1, dim_a, depth, &mut r).unwrap();
        let compiled = compile_separable_to_cma(&sep).unwrap();
        for _ in 0..3 {
            let channel = random_pauli_channel(1, &mut r).unwrap();
            let direct = sep.run_exact(&channel).unwrap();
            let via = compiled.marginal(&run_scheme_exact(&compiled.policy, &channel).unwrap());
            for (a, b) in direct.iter().zip(&via) {
                prop_assert!((a - b).abs() < 1e-9, "{direct:?} vs {via:?}");
            }
        }
    }

    #[test]
    fn policies_compile_to_equivalent_separable_schemes(seed in any::<u64>(), depth in 1usize..=2) {
        let mut r = rng(seed);
        let policy = random_policy(1, depth, &mut r).unwrap();
        let compiled = compile_cma_to_separable(&policy).unwrap();
        for _ in 0..3 {
            let channel = random_pauli_channel(1, &mut r).unwrap();
            let cma = run_scheme_exact(&policy, &channel).unwrap();
            let sep = compiled.scheme.run_exact(&channel).unwrap();
            for (k, p) in sep.iter().enumerate() {
                prop_assert!((p - cma.prob(&compiled.history_of(k))).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mu_recurrence_tracks_dense_states(seed in any::<u64>(), n in 1usize..=2, eps0 in 0.0f64..=1.0 / 3.0) {
        let mut r = rng(seed);
        let policy = random_policy(n, 3, &mut r).unwrap();
        let a = PauliString::from_index(n, r.random_range(1..(1 << (2 * n)))).unwrap();
        prop_assert!(mu_trajectory_check(&policy, &a, eps0).unwrap() < 1e-10);
    }
}

#[test]
fn compiled_round_trip_preserves_distributions() {
    let mut r = rng(5);
    for _ in 0..10 {
        let policy = random_policy(1, 2, &mut r).unwrap();
        let sep = compile_cma_to_separable(&policy).unwrap();
        let back = compile_separable_to_cma(&sep.scheme).unwrap();
        let channel = random_pauli_channel(1, &mut r).unwrap();
        let original = run_scheme_exact(&policy, &channel).unwrap();
        let twice = back.marginal(&run_scheme_exact(&back.policy, &channel).unwrap());
        for (k, p) in twice.iter().enumerate() {
            assert!((p - original.prob(&sep.history_of(k))).abs() < 1e-9);
        }
    }
}

#[test]
fn identity_steps_follow_the_recurrence() {
    let n = 1;
    let a = PauliString::from_index(n, 2).unwrap();
    let ch = hypothesis_channel(n, &a, Sign::Minus, 0.25).unwrap();
    assert_eq!(ch.eigenvalue(2), -0.25);
    // |+><+| has mu_0 = Tr(X rho) = 1
    let plus = Mat::from_element(2, 2, paulilearn::linalg::c(0.5));
    let initial = vec![plus];
    let policy = paulilearn::SchemePolicy::oblivious(
        n,
        initial,
        vec![Instrument::identity(2), Instrument::identity(2)],
        paulilearn::Povm::computational(2),
    )
    .unwrap();
    assert!(mu_trajectory_check(&policy, &a, 0.25).unwrap() < 1e-14);
}
