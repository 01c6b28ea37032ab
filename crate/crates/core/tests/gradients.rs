mod common;

use common::{gradcheck_model, small_config};
use genli::model::Variant;

fn assert_passes(model: &str) {
    let report = gradcheck_model(small_config(model.parse::<Variant>().unwrap()), 3);
    assert!(report.checked > 500, "{model}: only {} scalars", report.checked);
    assert!(report.passed(), "{model}: {} failures, worst {:?}", report.failures.len(), report.worst);
    assert!(report.boundary.len() * 100 < report.checked, "{model}: {} scalars on a boundary", report.boundary.len());
}

#[test]
fn full_model_loss_gradients() {
    assert_passes("genli");
}

#[test]
fn ablated_model_gradients() {
    for m in ["genli-no-implicit", "genli-no-explicit", "genli-no-relative"] {
        assert_passes(m);
    }
}

#[test]
fn baseline_model_gradients() {
    for m in ["avgpool", "sim-soft", "sim-hard"] {
        assert_passes(m);
    }
}
