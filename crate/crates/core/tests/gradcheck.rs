use woundflow_core::nn::gradcheck::{check_all_layers, relative_error};

#[test]
fn every_backward_matches_central_differences() {
    for seed in [1, 2, 3] {
        for check in check_all_layers(seed, 150).unwrap() {
            assert!(
                check.max_rel_error < 1e-4,
                "{} (seed {seed}): max relative error {:.3e}",
                check.layer,
                check.max_rel_error
            );
        }
    }
}

#[test]
fn relative_error_has_absolute_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
}
