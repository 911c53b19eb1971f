mod common;

use common::*;
use gmmdr::eval::adjusted_rand_index;
use proptest::prelude::*;

#[test]
fn directions_are_affine_invariant() {
    let worst = affine_invariance(100, 11);
    assert!(worst < 1e-8, "max deviation {worst:e}");
}

#[test]
fn data_level_properties_hold_on_every_suite_fit() {
    let fits = suite_fits();
    let bases = bases(&fits);
    let split = eigen_split(&bases);
    assert!(split < 1e-10, "eigenvalue split off by {split:e}");
    let gram = sigma_orthonormality(&fits, &bases);
    assert!(gram < 1e-10, "V'SV - I reaches {gram:e}");
    let cov = projected_correlation(&fits, &bases);
    assert!(cov < 1e-10, "projected covariance off-diagonal {cov:e}");
    let drop = em_monotonicity(&fits);
    assert!(drop < 1e-8, "log-likelihood fell by {drop:e}");
    let angle = equal_covariance_angles(&fits);
    assert!(angle < 1e-6, "principal angle {angle:e}");
}

#[test]
fn ari_matches_pair_counting() {
    let worst = ari_oracle(500, 12);
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn bic_reg_matches_regression_oracle() {
    let worst = bic_reg_oracle(50, 13);
    assert!(worst < 1e-9, "{worst:e}");
}

fn partition(max_n: usize) -> impl Strategy<Value = Vec<usize>> {
    (2..=max_n).prop_flat_map(|n| prop::collection::vec(1usize..=6, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ari_ignores_label_names(a in partition(120), shift in 1usize..50) {
        let b: Vec<usize> = a.iter().map(|l| l * 7 + shift).collect();
        prop_assert!((adjusted_rand_index(&a, &b).unwrap() - ari_by_pairs(&a, &a)).abs() < 1e-12);
    }

    #[test]
    fn ari_is_symmetric(a in partition(150), seed in any::<u64>()) {
        let b: Vec<usize> = a.iter().enumerate().map(|(i, l)| (l + (seed as usize >> (i % 13))) % 4 + 1).collect();
        let ab = adjusted_rand_index(&a, &b).unwrap();
        let ba = adjusted_rand_index(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((ab - ari_by_pairs(&a, &b)).abs() < 1e-12);
    }
}
