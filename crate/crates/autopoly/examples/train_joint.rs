//! Baseline joint training on a homophilic graph, against the MLP baseline.
//!
//! With p_in >> p_out neighborhood averaging denoises the features, so the
//! propagating model should beat the graph-agnostic MLP (the frozen delta0
//! filter) comfortably.

use autopoly::data::{random_split, sbm_generate, SbmParams};
use autopoly::filter::{init_coefficients, Basis, FilterSpec, InitStrategy};
use autopoly::model::ModelState;
use autopoly::train::{train_frozen, train_joint, TrainOptions};

fn main() {
    let mut bundle = sbm_generate(&SbmParams {
        nodes: 600,
        classes: 3,
        p_in: 0.08,
        p_out: 0.01,
        feature_dim: 16,
        feature_noise: 2.0,
        seed: 99,
    })
    .expect("SBM generation");
    bundle.normalize_rows_l1();
    println!("dataset: {} ({} edges)", bundle.name, bundle.graph.edges().len());

    let make_model = |strategy, seed| {
        let theta = init_coefficients(strategy, 10, seed).unwrap();
        let filter = FilterSpec::new(Basis::Monomial, theta).unwrap();
        ModelState::init(bundle.feature_dim(), 64, bundle.num_classes(), 0.5, filter, seed)
            .unwrap()
    };

    println!("{:>5} {:>12} {:>12} {:>12}", "seed", "mlp test", "joint test", "best epoch");
    let mut joint_acc = Vec::new();
    let mut mlp_acc = Vec::new();
    for seed in 0..5u64 {
        let split = random_split(bundle.n(), 0.10, 0.10, 0.80, seed).unwrap();
        split.validate_classes(&bundle.labels).unwrap();
        let opts = TrainOptions {
            weight_decay: 0.0005,
            max_epochs: 500,
            patience: 100,
            dropout_stream: seed,
        };

        let mlp =
            train_frozen(&bundle, &split, make_model(InitStrategy::Delta0, seed), 0.05, &opts)
                .unwrap();
        let joint = train_joint(
            &bundle,
            &split,
            make_model(InitStrategy::RandomUniform, seed),
            0.05,
            &opts,
        )
        .unwrap();

        println!(
            "{:>5} {:>12.4} {:>12.4} {:>12}",
            seed,
            mlp.report.test_acc_at_best,
            joint.report.test_acc_at_best,
            joint.report.best_epoch
        );
        mlp_acc.push(mlp.report.test_acc_at_best);
        joint_acc.push(joint.report.test_acc_at_best);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!();
    println!("mean MLP baseline: {:.4}", mean(&mlp_acc));
    println!("mean joint:        {:.4}", mean(&joint_acc));
}
