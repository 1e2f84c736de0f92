use paulilearn::linalg::{c, Mat};
use paulilearn::random::{random_partition, random_policy};
use paulilearn::scheme::count_measurements;
use paulilearn::tvd::{avg_tvd, certify_inequality, optimal_game_success, second_moment_check, tvd_budget, HypothesisFamily};
use paulilearn::{Povm, SchemePolicy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS0: [f64; 3] = [0.1, 0.2, 1.0 / 3.0];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn family(r: &mut ChaCha8Rng, n: usize, eps0: f64, coarse: bool) -> HypothesisFamily {
    if coarse {
        HypothesisFamily::coarse(random_partition(n, 3, r).unwrap(), eps0).unwrap()
    } else {
        HypothesisFamily::pointwise(n, eps0).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inequality_holds(seed in any::<u64>(), depth in 1usize..=3, e in 0usize..3, coarse in any::<bool>()) {
        let mut r = rng(seed);
        let policy = random_policy(1, depth, &mut r).unwrap();
        let fam = family(&mut r, 1, EPS0[e], coarse);
        let report = certify_inequality(&policy, &fam).unwrap();
        prop_assert!(report.holds, "{report:?}");
        prop_assert!((0.0..=1.0 + 1e-12).contains(&report.lhs));
        prop_assert!(report.rhs >= 0.0);
    }

    #[test]
    fn identity_insertion_keeps_budget(seed in any::<u64>(), depth in 1usize..=2, e in 0usize..3, coarse in any::<bool>()) {
        let mut r = rng(seed);
        let policy = random_policy(1, depth, &mut r).unwrap();
        let step = r.random_range(1..=depth);
        let widened = policy.with_identity_inserted(step).unwrap();
        let fam = family(&mut r, 1, EPS0[e], coarse);
        prop_assert_eq!(count_measurements(&widened), count_measurements(&policy));
        prop_assert!((tvd_budget(&widened, &fam).unwrap() - tvd_budget(&policy, &fam).unwrap()).abs() < 1e-15);
        // the extra channel use can change the distance, never past the unchanged budget
        prop_assert!(certify_inequality(&widened, &fam).unwrap().holds);
    }

    #[test]
    fn winning_players_need_distance(seed in any::<u64>(), depth in 1usize..=3, e in 0usize..3) {
        let mut r = rng(seed);
        let policy = random_policy(1, depth, &mut r).unwrap();
        let fam = HypothesisFamily::pointwise(1, EPS0[e]).unwrap();
        let success = optimal_game_success(&policy, &fam).unwrap();
        let tvd = avg_tvd(&policy, &fam).unwrap();
        prop_assert!((success - 0.5 * (1.0 + tvd)).abs() < 1e-12);
        if success >= 2.0 / 3.0 {
            prop_assert!(tvd >= 1.0 / 3.0 - 1e-12);
        }
    }

    #[test]
    fn second_moment_bound_holds(seed in any::<u64>(), depth in 1usize..=3, e in 0usize..3) {
        let mut r = rng(seed);
        let policy = random_policy(1, depth, &mut r).unwrap();
        let fam = HypothesisFamily::pointwise(1, EPS0[e]).unwrap();
        let report = second_moment_check(&policy, &fam).unwrap();
        prop_assert!(report.holds, "{report:?}");
    }
}

/// Prepare |0>, measure Z at the end. One channel use gives distance 0; an
/// inserted identity step makes the Z component see `Lambda^2`, whose
/// eigenvalue `eps0^2` survives sign mixing: `(1/3) * eps0^2 / 2`.
#[test]
fn inserted_channel_use_can_raise_distance() {
    let eps0 = 0.3;
    let zero = Mat::from_fn(2, 2, |i, j| c(if i == 0 && j == 0 { 1.0 } else { 0.0 }));
    let policy = SchemePolicy::oblivious(1, vec![zero], vec![], Povm::computational(2)).unwrap();
    let widened = policy.with_identity_inserted(1).unwrap();
    let fam = HypothesisFamily::pointwise(1, eps0).unwrap();
    assert!(avg_tvd(&policy, &fam).unwrap().abs() < 1e-15);
    assert!((avg_tvd(&widened, &fam).unwrap() - eps0 * eps0 / 6.0).abs() < 1e-12);
    assert_eq!(count_measurements(&widened), 1);
}

#[test]
fn two_qubit_policies_certify() {
    let mut r = rng(77);
    for i in 0..12 {
        let depth = 1 + i % 3;
        let policy = random_policy(2, depth, &mut r).unwrap();
        for coarse in [false, true] {
            let fam = family(&mut r, 2, EPS0[i % 3], coarse);
            let report = certify_inequality(&policy, &fam).unwrap();
            assert!(report.holds, "{report:?}");
        }
    }
}
