mod common;

use common::gradient_suite;

#[test]
fn bilinear_gradients_match_finite_differences() {
    let s = gradient_suite(300, 1, 21, 1e-4, 1e-4);
    assert!(s.max_table < 1e-4 && s.max_decoder < 1e-4, "{s:?}");
    assert!(s.max_coord < 1e-3, "{s:?}");
}

#[test]
fn cubic_gradients_match_finite_differences() {
    let s = gradient_suite(300, 2, 22, 1e-4, 1e-4);
    assert!(s.max_table < 1e-4 && s.max_decoder < 1e-4, "{s:?}");
    assert!(s.max_coord < 1e-3, "{s:?}");
}
