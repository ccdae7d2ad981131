mod common;

#[test]
fn analytic_gradients_match_central_differences() {
    common::checks::gradient_check().unwrap();
}
