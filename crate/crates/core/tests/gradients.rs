mod common;

use common::gradcheck::{model_suite, primitive_suite};

#[test]
fn primitive_gradients_match_central_differences() {
    let report = primitive_suite(6, 7);
    assert!(report.trials >= 100, "{} trials", report.trials);
    assert!(report.all_passed(), "{:#?}", report.failures);
}

#[test]
fn model_gradients_match_f64_reference() {
    let report = model_suite(8, 11);
    assert!(report.all_passed(), "{:#?}", report.failures);
}
