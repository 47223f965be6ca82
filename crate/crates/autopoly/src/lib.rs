//! Polynomial spectral graph filters for semi-supervised node classification.
//!
//! The crate builds decoupled spectral classifiers — a 2-layer MLP feature
//! transform followed by a learnable polynomial filter over the graph — and
//! trains them under three regimes:
//!
//! * **joint**: filter coefficients and MLP weights share one Adam optimizer
//!   driven by the training loss (the usual approach, prone to overfitting
//!   the coefficients when labels are scarce);
//! * **auto**: bi-level learning where the coefficients follow the
//!   *validation* loss through a one-step-unrolled meta-gradient with a
//!   finite-difference second-order correction;
//! * **grid**: brute-force enumeration of a coefficient grid, training only
//!   the MLP per candidate — an empirical upper bound on what a filter of
//!   that order can do.
//!
//! Three polynomial bases are supported (monomial over the normalized
//! adjacency, Chebyshev over the rescaled Laplacian, Bernstein over the
//! Laplacian), each applied purely through sparse matvec recurrences and
//! checked against a dense eigendecomposition oracle.
//!
//! ## Examples
//!
//! The `examples/` directory is the guided tour — one runnable program per
//! capability:
//!
//! ```text
//! cargo run --release --example filter_basics          # bases, responses, oracle agreement
//! cargo run --release --example homophily              # the node-homophily metric on SBMs
//! cargo run --release --example sbm_dataset            # materialize a synthetic bundle
//! cargo run --release --example train_joint            # baseline joint training
//! cargo run --release --example train_auto             # bi-level coefficient learning
//! cargo run --release --example overfitting_diagnostic # train/val gap, joint vs auto
//! cargo run --release --example grid_search            # small brute-force sweep
//! cargo run --release --example spectrum_export        # checkpoint -> response CSV
//! ```
//!
//! The `autopoly` binary wraps the same machinery for config-driven runs:
//! `autopoly run <config.toml>`, `autopoly grid`, `autopoly homophily`,
//! `autopoly spectrum`, `autopoly sbm`.

pub mod cli;
pub mod data;
pub mod filter;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod train;

pub use data::{load_bundle, random_split, sbm_generate, Bundle, SbmParams, Split};
pub use filter::{
    apply_filter, dense_spectral_filter, init_coefficients, ppr_coefficients, spectral_response,
    Basis, FilterSpec, InitStrategy, SpectralResponse,
};
pub use graph::{node_homophily, spmv, Graph, Homophily, LabelVector};
pub use linalg::DenseMatrix;
pub use model::{
    backward, forward, loss_and_accuracy, ForwardCache, Gradients, LossReport, Mode, ModelState,
};
pub use train::{
    adam_step, grid_search, meta_gradient, train_auto, train_frozen, train_joint, AdamState,
    GridOptions, GridSearchResult, MetaConfig, TrainOptions, TrainOutcome, TrainReport,
};
