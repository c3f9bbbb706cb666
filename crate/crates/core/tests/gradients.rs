mod common;

use common::{finite_difference_report, toy_model};
use planetoid::ModelVariant;

const VARIANTS: [ModelVariant; 3] = [
    ModelVariant::Transductive,
    ModelVariant::Inductive,
    ModelVariant::GraphOnly,
];

#[test]
fn every_tensor_matches_central_differences() {
    for variant in VARIANTS {
        for seed in [1, 2, 3] {
            for check in finite_difference_report(variant, seed, 1e-5) {
                assert!(
                    check.max_rel_err < 1e-4,
                    "{variant} seed {seed} {} loss, {}: rel err {:.3e}",
                    check.loss,
                    check.tensor,
                    check.max_rel_err
                );
            }
        }
    }
}

#[test]
fn report_covers_every_tensor() {
    let expected = [
        (ModelVariant::Transductive, 7),
        (ModelVariant::Inductive, 10),
        (ModelVariant::GraphOnly, 5),
    ];
    for (variant, tensors) in expected {
        let model = toy_model(variant, 1);
        assert_eq!(common::tensor_count(&model), tensors, "{variant}");
        let report = finite_difference_report(variant, 1, 1e-5);
        assert_eq!(report.len(), 2 * tensors);
        assert!(report.iter().all(|c| c.entries > 0));
    }
}

#[test]
fn inductive_context_gradient_reaches_the_encoder() {
    let report = finite_difference_report(ModelVariant::Inductive, 4, 1e-5);
    let names: Vec<_> = report
        .iter()
        .filter(|c| c.loss == "context")
        .map(|c| c.tensor.as_str())
        .collect();
    assert!(names.contains(&"encoder.0.weight"));
    assert!(names.contains(&"encoder.1.weight"));
    assert!(!names.contains(&"embedding_table"));
}
