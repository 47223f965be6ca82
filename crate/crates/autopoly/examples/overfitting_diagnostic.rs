//! The overfitting signature: training accuracy saturates while validation
//! stalls, and validation-driven coefficient learning closes the gap.
//!
//! Prints a sampled view of the per-epoch curves for one split under both
//! regimes, then the final train/val gaps.

use autopoly::data::{random_split, sbm_generate, SbmParams};
use autopoly::filter::{init_coefficients, Basis, FilterSpec, InitStrategy};
use autopoly::model::ModelState;
use autopoly::train::{train_auto, train_joint, Curves, MetaConfig, TrainOptions, TrainReport};

fn print_curve_samples(name: &str, curves: &Curves) {
    println!("  {name} (epoch: train/val/test accuracy)");
    let n = curves.len();
    for &epoch in &[1usize, 5, 20, 50, 100, 200, 400, 800] {
        if epoch <= n {
            let i = epoch - 1;
            println!(
                "    {:>4}: {:.3} / {:.3} / {:.3}",
                epoch, curves.train_acc[i], curves.val_acc[i], curves.test_acc[i]
            );
        }
    }
    if n > 0 {
        println!(
            "    last ({n}): {:.3} / {:.3} / {:.3}",
            curves.train_acc[n - 1],
            curves.val_acc[n - 1],
            curves.test_acc[n - 1]
        );
    }
}

fn gap(report: &TrainReport) -> f64 {
    let c = &report.curves;
    match (c.train_acc.last(), c.val_acc.last()) {
        (Some(t), Some(v)) => t - v,
        _ => 0.0,
    }
}

fn main() {
    let mut bundle = sbm_generate(&SbmParams {
        nodes: 1000,
        classes: 2,
        p_in: 0.006,
        p_out: 0.018,
        feature_dim: 256,
        feature_noise: 2.0,
        seed: 2024,
    })
    .expect("SBM generation");
    bundle.normalize_rows_l1();
    println!(
        "dataset: {} ({} edges), 10%/10%/80% split",
        bundle.name,
        bundle.graph.edges().len()
    );

    let seed = 0u64;
    let split = random_split(bundle.n(), 0.10, 0.10, 0.80, seed).unwrap();
    split.validate_classes(&bundle.labels).unwrap();
    let opts = TrainOptions {
        weight_decay: 0.0005,
        max_epochs: 1000,
        patience: 200,
        dropout_stream: seed,
    };

    let joint_init = {
        let theta = init_coefficients(InitStrategy::RandomUniform, 10, seed).unwrap();
        ModelState::init(
            bundle.feature_dim(),
            64,
            bundle.num_classes(),
            0.5,
            FilterSpec::new(Basis::Monomial, theta).unwrap(),
            seed,
        )
        .unwrap()
    };
    let joint = train_joint(&bundle, &split, joint_init, 0.05, &opts).unwrap();
    print_curve_samples("joint", &joint.report.curves);

    let auto_init = {
        let theta = init_coefficients(InitStrategy::Delta0, 10, seed).unwrap();
        ModelState::init(
            bundle.feature_dim(),
            64,
            bundle.num_classes(),
            0.5,
            FilterSpec::new(Basis::Monomial, theta).unwrap(),
            seed,
        )
        .unwrap()
    };
    let meta = MetaConfig {
        xi: 0.0,
        eta0: 0.01,
        eta1: 0.05,
        freq: 1,
        theta_weight_decay: 0.0005,
        adam_on_theta: true,
        ..MetaConfig::default()
    };
    let auto = train_auto(&bundle, &split, auto_init, &meta, &opts).unwrap();
    print_curve_samples("auto", &auto.report.curves);

    println!();
    println!("final train-val gap, joint: {:.3}", gap(&joint.report));
    println!("final train-val gap, auto:  {:.3}", gap(&auto.report));
    println!("test accuracy at best val, joint: {:.4}", joint.report.test_acc_at_best);
    println!("test accuracy at best val, auto:  {:.4}", auto.report.test_acc_at_best);
}
