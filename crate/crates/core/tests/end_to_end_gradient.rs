mod common;

use common::gradient::joint_objective_gradient_sweep;

#[test]
fn joint_objective_gradients_match_central_differences() {
    let sweep = joint_objective_gradient_sweep();
    assert!(sweep.checked > 100);
    assert!(sweep.worst <= 1e-3, "worst relative error {:e} at {}", sweep.worst, sweep.at);
}
