mod common;

use common::checks::filter_oracle;

#[test]
fn tracker_and_focal_filters_match_the_dense_recursion() {
    let r = filter_oracle(3000, 11);
    assert_eq!(r.cycles, 3000);
    assert!(r.max_state_error < 1e-10, "{r:?}");
    assert!(r.max_cov_error < 1e-10, "{r:?}");
}

#[test]
fn short_sequences_are_covered_too() {
    let r = filter_oracle(7, 3);
    assert_eq!(r.cycles, 7);
    assert!(r.max_state_error < 1e-10, "{r:?}");
}
