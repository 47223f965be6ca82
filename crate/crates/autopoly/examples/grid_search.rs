//! Small brute-force sweep over coefficient vectors: train only the MLP per
//! candidate, rank by validation accuracy, and compare the winner with what
//! joint training learned on the same split.

use autopoly::data::{random_split, sbm_generate, SbmParams};
use autopoly::filter::{init_coefficients, Basis, FilterSpec, InitStrategy};
use autopoly::model::ModelState;
use autopoly::train::{grid_search, train_joint, GridOptions, TrainOptions};

fn main() {
    let mut bundle = sbm_generate(&SbmParams {
        nodes: 500,
        classes: 2,
        p_in: 0.01,
        p_out: 0.05,
        feature_dim: 16,
        feature_noise: 2.0,
        seed: 31,
    })
    .expect("SBM generation");
    bundle.normalize_rows_l1();
    println!("dataset: {} ({} edges)", bundle.name, bundle.graph.edges().len());

    let split = random_split(bundle.n(), 0.10, 0.10, 0.80, 0).unwrap();
    split.validate_classes(&bundle.labels).unwrap();

    let order = 2;
    let grid = [-0.9, -0.5, 0.0, 0.5, 0.9];
    let build = |theta: Vec<f64>| {
        let filter = FilterSpec::new(Basis::Monomial, theta)?;
        ModelState::init(bundle.feature_dim(), 32, bundle.num_classes(), 0.5, filter, 0)
    };
    let opts = GridOptions {
        lr: 0.05,
        weight_decay: 0.0005,
        max_epochs: 100,
        patience: 30,
        dropout_stream: 0,
        workers: 2,
        ..GridOptions::default()
    };
    let result = grid_search(&bundle, &split, build, &grid, order, &opts).expect("grid search");
    println!("{} candidates evaluated ({}^{})", result.rows.len(), grid.len(), order + 1);

    println!("top five by validation accuracy:");
    let mut ranked: Vec<usize> = (0..result.rows.len()).collect();
    ranked.sort_by(|&a, &b| result.rows[b].val_acc.partial_cmp(&result.rows[a].val_acc).unwrap());
    for &i in ranked.iter().take(5) {
        let row = &result.rows[i];
        println!(
            "  theta = {:?}  val {:.4}  test {:.4}",
            row.theta, row.val_acc, row.test_acc
        );
    }

    // joint training on the same split for reference
    let theta = init_coefficients(InitStrategy::RandomUniform, order, 0).unwrap();
    let model = ModelState::init(
        bundle.feature_dim(),
        32,
        bundle.num_classes(),
        0.5,
        FilterSpec::new(Basis::Monomial, theta).unwrap(),
        0,
    )
    .unwrap();
    let train_opts = TrainOptions {
        weight_decay: 0.0005,
        max_epochs: 500,
        patience: 100,
        dropout_stream: 0,
    };
    let joint = train_joint(&bundle, &split, model, 0.05, &train_opts).unwrap();
    println!();
    println!(
        "grid best: val {:.4} test {:.4} at theta {:?}",
        result.best.val_acc, result.best.test_acc, result.best.theta
    );
    println!(
        "joint:     val {:.4} test {:.4} at theta {:?}",
        joint.report.val_acc_at_best,
        joint.report.test_acc_at_best,
        joint
            .report
            .final_theta
            .iter()
            .map(|t| (t * 1000.0).round() / 1000.0)
            .collect::<Vec<f64>>()
    );
}
