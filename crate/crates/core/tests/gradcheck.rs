use std::time::Instant;

use astpn_core::gradcheck::{gradcheck, GradcheckConfig};
use astpn_core::graph::Fault;
use astpn_core::model::Variant;

#[test]
fn toy_model_gradients_match_finite_differences() {
    let start = Instant::now();
    let report = gradcheck(&GradcheckConfig::default()).unwrap();
    for t in &report.tensors {
        println!("{:<18} {:>4} elements  max rel err {:.3e}", t.name, t.checked, t.max_rel_err);
    }
    println!("elapsed {:?}", start.elapsed());
    assert_eq!(report.tensors.len(), 11);
    assert!(report.passed(), "worst relative error {:.3e}", report.worst());
}

#[test]
fn corrupted_backward_is_detected() {
    let cfg = GradcheckConfig {
        fault: Some(Fault::TanhDerivative),
        random_elements: 4,
        top_elements: 4,
        ..Default::default()
    };
    let report = gradcheck(&cfg).unwrap();
    assert!(!report.passed());
}

#[test]
fn ablation_variants_pass_too() {
    for variant in [Variant::AtpnOnly, Variant::MaxPool, Variant::MeanPool] {
        let cfg = GradcheckConfig {
            variant,
            random_elements: 6,
            top_elements: 4,
            ..Default::default()
        };
        let report = gradcheck(&cfg).unwrap();
        assert!(report.passed(), "{variant:?}: worst {:.3e}", report.worst());
    }
}
