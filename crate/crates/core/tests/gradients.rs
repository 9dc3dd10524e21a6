mod common;

use common::gradcheck::run_suite;

#[test]
fn every_layer_matches_finite_differences() {
    for r in run_suite(20, 100) {
        println!("{:<24} {:.3e}", r.layer, r.max_rel_err);
        assert!(r.max_rel_err < 1e-4, "{}: {:.3e}", r.layer, r.max_rel_err);
    }
}
