mod common;

use proptest::prelude::*;

use common::{quadprog_reference, random_qp};
use ofoflex::qp::{kkt_check, solve_least_distance, QpStatus, KKT_TOLERANCE};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_dual_active_set_reference(seed in any::<u64>(), p in 1usize..7, n in 0usize..9) {
        let prob = random_qp(seed, p, n);
        let ours = solve_least_distance(&prob).unwrap();
        let reference = quadprog_reference(&prob);
        for (a, b) in ours.w.iter().zip(&reference) {
            prop_assert!((a - b).abs() <= 1e-6, "w = {:?}, reference = {:?}", ours.w, reference);
        }
        prop_assert!(kkt_check(&prob, &ours) <= KKT_TOLERANCE);
    }

    #[test]
    fn step_stays_in_box_and_slack_is_nonnegative(seed in any::<u64>(), p in 1usize..7, n in 0usize..9) {
        let prob = random_qp(seed, p, n);
        let r = solve_least_distance(&prob).unwrap();
        for j in 0..p {
            prop_assert!(r.w[j] >= prob.input_lower[j] - 1e-12);
            prop_assert!(r.w[j] <= prob.input_upper[j] + 1e-12);
        }
        prop_assert!(r.slack.iter().all(|&s| s >= 0.0));
        if r.status == QpStatus::Optimal {
            for k in 0..n {
                prop_assert!(prob.row_violation(k, &r.w) <= 1e-9);
            }
        }
    }

    #[test]
    fn solution_is_bit_stable(seed in any::<u64>()) {
        let prob = random_qp(seed, 4, 6);
        let a = solve_least_distance(&prob).unwrap();
        let b = solve_least_distance(&prob).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn unconstrained_step_is_negative_gradient() {
    let prob = random_qp(7, 3, 0);
    let mut wide = prob.clone();
    wide.input_lower = vec![-10.0; 3];
    wide.input_upper = vec![10.0; 3];
    let r = solve_least_distance(&wide).unwrap();
    for (w, g) in r.w.iter().zip(&wide.g) {
        assert!((w + g).abs() < 1e-12);
    }
}
