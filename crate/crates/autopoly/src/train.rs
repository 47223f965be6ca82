//! Optimizers and the three training regimes.
//!
//! * [`train_joint`] — the baseline: Θ and w are one parameter set, updated
//!   together by Adam against the training loss.
//! * [`train_auto`] — bi-level learning: Θ follows the validation loss
//!   through a one-step-unrolled meta-gradient (with a finite-difference
//!   second-order correction), w follows the training loss with Adam.
//! * [`grid_search`] — brute force: enumerate a coefficient grid, train only
//!   w per candidate, rank candidates by best validation accuracy.
//!
//! All regimes share the same epoch loop: evaluate, track the best
//! validation accuracy (ties broken by lower validation loss), stop when it
//! has not improved for `patience` epochs, and restore the best snapshot.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Bundle, DataError, Split};
use crate::model::{
    backward, forward, forward_with_cache, loss_and_accuracy, Gradients, LossReport, Mode,
    ModelError, ModelState,
};

const TRAIN_DROPOUT_SALT: u64 = 0x74_72_61_69;
const META_DROPOUT_SALT: u64 = 0x6d_65_74_61;

#[derive(Debug)]
pub enum TrainError {
    Numeric(String),
    Model(ModelError),
    Data(DataError),
    GridTooLarge { combinations: u128, limit: u128 },
    InvalidConfig(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Data(e) => write!(f, "{e}"),
            TrainError::GridTooLarge { combinations, limit } => write!(
                f,
                "grid search refused: {combinations} combinations exceed the {limit} limit; \
                 coarsen the grid or lower the order"
            ),
            TrainError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<DataError> for TrainError {
    fn from(e: DataError) -> Self {
        TrainError::Data(e)
    }
}

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&s| vec![0.0; s]).collect(),
            v: shapes.iter().map(|&s| vec![0.0; s]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over a parameter tensor list. Weight decay is classic L2
/// added to the gradient before the moment updates. A non-finite gradient
/// aborts with a numeric error before any state is touched.
pub fn adam_step(
    adam: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if params.len() != adam.m.len() || grads.len() != adam.m.len() {
        return Err(TrainError::InvalidConfig(format!(
            "adam_step: {} tensors for an optimizer with {}",
            params.len(),
            adam.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != adam.m[i].len() || g.len() != adam.m[i].len() {
            return Err(TrainError::InvalidConfig(format!(
                "adam_step: tensor {i} shape mismatch"
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Numeric(format!("non-finite gradient in tensor {i}")));
        }
    }
    adam.t += 1;
    let bc1 = 1.0 - adam.beta1.powi(adam.t as i32);
    let bc2 = 1.0 - adam.beta2.powi(adam.t as i32);
    for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut adam.m[i], &mut adam.v[i]);
        for j in 0..param.len() {
            let g = grad[j] + weight_decay * param[j];
            m[j] = adam.beta1 * m[j] + (1.0 - adam.beta1) * g;
            v[j] = adam.beta2 * v[j] + (1.0 - adam.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            param[j] -= lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
    Ok(())
}

/// Hyperparameters of the bi-level regime.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner-step learning rate for the one-step unrolled approximation;
    /// 0 selects the first-order mode.
    pub xi: f64,
    /// Learning rate of the coefficient update (plain gradient descent).
    pub eta0: f64,
    /// Learning rate of the Adam update on the model weights.
    pub eta1: f64,
    /// Coefficients are updated once every `freq` epochs.
    pub freq: usize,
    /// L2 term added to the meta-gradient before the Θ step.
    pub theta_weight_decay: f64,
    /// Finite-difference ε = eps_scale / ‖∇_{w'} L_val‖₂ ...
    pub eps_scale: f64,
    /// ... floored at eps_floor.
    pub eps_floor: f64,
    /// Optional Adam on Θ instead of plain gradient descent; off by default.
    pub adam_on_theta: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            xi: 0.05,
            eta0: 0.01,
            eta1: 0.05,
            freq: 1,
            theta_weight_decay: 0.0,
            eps_scale: 0.01,
            eps_floor: 1e-8,
            adam_on_theta: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.xi < 0.0 {
            return Err(TrainError::InvalidConfig(format!("xi must be >= 0, got {}", self.xi)));
        }
        if self.eta0 <= 0.0 || self.eta1 <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "eta0 and eta1 must be positive, got {} and {}",
                self.eta0, self.eta1
            )));
        }
        if self.freq == 0 {
            return Err(TrainError::InvalidConfig("freq must be at least 1".into()));
        }
        if self.eps_scale <= 0.0 || self.eps_floor <= 0.0 {
            return Err(TrainError::InvalidConfig("eps rule parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Loop controls shared by every regime.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Base seed for per-epoch dropout masks.
    pub dropout_stream: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { weight_decay: 0.0005, max_epochs: 1000, patience: 200, dropout_stream: 0 }
    }
}

/// Per-epoch curves over the three masks.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Curves {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
}

impl Curves {
    fn push(&mut self, train: LossReport, val: LossReport, test: LossReport) {
        self.train_loss.push(train.loss);
        self.val_loss.push(val.loss);
        self.test_loss.push(test.loss);
        self.train_acc.push(train.accuracy);
        self.val_acc.push(val.accuracy);
        self.test_acc.push(test.accuracy);
    }

    pub fn len(&self) -> usize {
        self.train_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_loss.is_empty()
    }
}

/// What a training run produced. Curve lengths equal the epochs actually run;
/// epoch 0 metrics (the untrained model) live in the `*_at_best` fields when
/// no epoch improved on them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub regime: String,
    pub epochs_run: usize,
    /// Epoch whose parameters were kept; 0 means the initial state.
    pub best_epoch: usize,
    pub train_acc_at_best: f64,
    pub val_acc_at_best: f64,
    pub val_loss_at_best: f64,
    pub test_acc_at_best: f64,
    pub curves: Curves,
    /// Θ after every coefficient update, starting with the initial vector.
    pub theta_trajectory: Vec<Vec<f64>>,
    /// Θ of the restored best model.
    pub final_theta: Vec<f64>,
    pub wall_clock_sec: f64,
    pub peak_mem_bytes: u64,
    /// Set when the run aborted (numeric divergence); curves hold the epochs
    /// that completed.
    pub failure: Option<String>,
}

impl TrainReport {
    pub fn mean_epoch_sec(&self) -> f64 {
        if self.epochs_run == 0 {
            0.0
        } else {
            self.wall_clock_sec / self.epochs_run as f64
        }
    }
}

/// A finished run: the report and the restored best-validation model.
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: ModelState,
}

/// Peak resident set of this process in bytes (Linux VmHWM; 0 elsewhere).
pub fn peak_memory_bytes() -> u64 {
    if let Ok(text) = std::fs::read_to_string("/proc/self/status") {
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("VmHWM:") {
                let kb: u64 =
                    rest.trim().trim_end_matches("kB").trim().parse().unwrap_or(0);
                return kb * 1024;
            }
        }
    }
    0
}

fn epoch_seed(stream: u64, epoch: usize, salt: u64) -> u64 {
    stream ^ salt ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn validate_split(bundle: &Bundle, split: &Split) -> Result<(), TrainError> {
    if split.n() != bundle.n() {
        return Err(TrainError::InvalidConfig(format!(
            "split covers {} nodes, bundle has {}",
            split.n(),
            bundle.n()
        )));
    }
    for (name, count) in [
        ("train", split.train_count()),
        ("val", split.val_count()),
        ("test", split.test_count()),
    ] {
        if count == 0 {
            return Err(TrainError::Data(DataError::EmptyMask(match name {
                "train" => "train",
                "val" => "val",
                _ => "test",
            })));
        }
    }
    Ok(())
}

enum Regime<'a> {
    Joint,
    Frozen,
    Auto(&'a MetaConfig),
}

impl Regime<'_> {
    fn name(&self) -> &'static str {
        match self {
            Regime::Joint => "joint",
            Regime::Frozen => "frozen",
            Regime::Auto(_) => "auto",
        }
    }
}

struct BestSnapshot {
    epoch: usize,
    val_acc: f64,
    val_loss: f64,
    train_acc: f64,
    test_acc: f64,
    model: ModelState,
}

fn evaluate(
    model: &ModelState,
    bundle: &Bundle,
    split: &Split,
) -> Result<(LossReport, LossReport, LossReport), TrainError> {
    let (logits, _) = forward(model, &bundle.graph, &bundle.features, Mode::Eval)?;
    let train = loss_and_accuracy(&logits, &bundle.labels, &split.train_mask)?;
    let val = loss_and_accuracy(&logits, &bundle.labels, &split.val_mask)?;
    let test = loss_and_accuracy(&logits, &bundle.labels, &split.test_mask)?;
    Ok((train, val, test))
}

fn train_gradients(
    model: &ModelState,
    bundle: &Bundle,
    split: &Split,
    dropout_seed: u64,
) -> Result<Gradients, TrainError> {
    let (_, cache) = forward_with_cache(model, &bundle.graph, &bundle.features, Some(dropout_seed))?;
    let grads = backward(model, &bundle.graph, &cache, &bundle.labels, &split.train_mask)?;
    if !grads.is_finite() {
        return Err(TrainError::Numeric("non-finite training gradient".into()));
    }
    Ok(grads)
}

fn run_training(
    bundle: &Bundle,
    split: &Split,
    mut model: ModelState,
    regime: Regime<'_>,
    lr: f64,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    validate_split(bundle, split)?;
    if lr <= 0.0 {
        return Err(TrainError::InvalidConfig(format!("learning rate must be positive, got {lr}")));
    }
    if let Regime::Auto(meta) = &regime {
        meta.validate()?;
    }

    let start = Instant::now();
    let regime_name = regime.name().to_string();

    let w_shapes: Vec<usize> = {
        let tensors = model.w_tensors_mut();
        tensors.iter().map(|t| t.len()).collect()
    };
    let theta_len = model.theta().len();
    let mut adam = match regime {
        Regime::Joint => {
            let mut shapes = w_shapes.clone();
            shapes.push(theta_len);
            AdamState::new(&shapes)
        }
        _ => AdamState::new(&w_shapes),
    };
    let mut adam_theta = match &regime {
        Regime::Auto(meta) if meta.adam_on_theta => Some(AdamState::new(&[theta_len])),
        _ => None,
    };

    let (train0, val0, test0) = evaluate(&model, bundle, split)?;
    let mut best = BestSnapshot {
        epoch: 0,
        val_acc: val0.accuracy,
        val_loss: val0.loss,
        train_acc: train0.accuracy,
        test_acc: test0.accuracy,
        model: model.clone(),
    };
    let mut curves = Curves::default();
    let mut theta_trajectory = vec![model.theta().to_vec()];
    let mut epochs_run = 0usize;
    let mut failure = None;

    'epochs: for epoch in 1..=opts.max_epochs {
        let step_result = (|| -> Result<(), TrainError> {
            match &regime {
                Regime::Joint => {
                    let seed = epoch_seed(opts.dropout_stream, epoch, TRAIN_DROPOUT_SALT);
                    let grads = train_gradients(&model, bundle, split, seed)?;
                    let mut params = model.all_tensors_mut();
                    let mut grad_slices: Vec<&[f64]> = grads.w_slices().to_vec();
                    grad_slices.push(&grads.theta);
                    adam_step(&mut adam, &mut params, &grad_slices, lr, opts.weight_decay)?;
                    theta_trajectory.push(model.theta().to_vec());
                }
                Regime::Frozen => {
                    let seed = epoch_seed(opts.dropout_stream, epoch, TRAIN_DROPOUT_SALT);
                    let grads = train_gradients(&model, bundle, split, seed)?;
                    let mut params = model.w_tensors_mut();
                    adam_step(&mut adam, &mut params, &grads.w_slices(), lr, opts.weight_decay)?;
                }
                Regime::Auto(meta) => {
                    if epoch % meta.freq == 0 {
                        let meta_seed = epoch_seed(opts.dropout_stream, epoch, META_DROPOUT_SALT);
                        let grad = meta_gradient(&model, bundle, split, meta, meta_seed)?;
                        if let Some(adam_t) = adam_theta.as_mut() {
                            let decayed: Vec<f64> = grad;
                            let theta = model.filter_mut().theta_mut();
                            adam_step(
                                adam_t,
                                &mut [theta],
                                &[&decayed],
                                meta.eta0,
                                meta.theta_weight_decay,
                            )?;
                        } else {
                            let theta = model.filter_mut().theta_mut();
                            for (t, g) in theta.iter_mut().zip(&grad) {
                                if !g.is_finite() {
                                    return Err(TrainError::Numeric(
                                        "non-finite meta-gradient".into(),
                                    ));
                                }
                                *t -= meta.eta0 * (g + meta.theta_weight_decay * *t);
                            }
                        }
                        theta_trajectory.push(model.theta().to_vec());
                    }
                    let seed = epoch_seed(opts.dropout_stream, epoch, TRAIN_DROPOUT_SALT);
                    let grads = train_gradients(&model, bundle, split, seed)?;
                    let mut params = model.w_tensors_mut();
                    adam_step(&mut adam, &mut params, &grads.w_slices(), meta.eta1, opts.weight_decay)?;
                }
            }
            Ok(())
        })();
        if let Err(e) = step_result {
            failure = Some(e.to_string());
            break 'epochs;
        }

        epochs_run = epoch;
        let (train, val, test) = match evaluate(&model, bundle, split) {
            Ok(metrics) => metrics,
            Err(e) => {
                failure = Some(e.to_string());
                break 'epochs;
            }
        };
        curves.push(train, val, test);

        let improved = val.accuracy > best.val_acc
            || (val.accuracy == best.val_acc && val.loss < best.val_loss);
        if improved {
            best = BestSnapshot {
                epoch,
                val_acc: val.accuracy,
                val_loss: val.loss,
                train_acc: train.accuracy,
                test_acc: test.accuracy,
                model: model.clone(),
            };
        } else if epoch - best.epoch >= opts.patience {
            break 'epochs;
        }
    }

    let report = TrainReport {
        regime: regime_name,
        epochs_run,
        best_epoch: best.epoch,
        train_acc_at_best: best.train_acc,
        val_acc_at_best: best.val_acc,
        val_loss_at_best: best.val_loss,
        test_acc_at_best: best.test_acc,
        curves,
        theta_trajectory,
        final_theta: best.model.theta().to_vec(),
        wall_clock_sec: start.elapsed().as_secs_f64(),
        peak_mem_bytes: peak_memory_bytes(),
        failure,
    };
    Ok(TrainOutcome { report, model: best.model })
}

/// Baseline regime: one Adam optimizer updates the MLP weights and the
/// filter coefficients together against the training loss.
pub fn train_joint(
    bundle: &Bundle,
    split: &Split,
    model: ModelState,
    lr: f64,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    run_training(bundle, split, model, Regime::Joint, lr, opts)
}

/// Trains only the MLP weights; Θ stays at its initial value. This is the
/// per-candidate trainer of the grid search and the MLP baseline (delta0
/// coefficients make the propagation an identity on the feature block).
pub fn train_frozen(
    bundle: &Bundle,
    split: &Split,
    model: ModelState,
    lr: f64,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    run_training(bundle, split, model, Regime::Frozen, lr, opts)
}

/// The bi-level regime: every `freq` epochs Θ takes a plain gradient-descent
/// step along the validation meta-gradient, then w takes its Adam step on
/// the training loss at the new Θ.
pub fn train_auto(
    bundle: &Bundle,
    split: &Split,
    model: ModelState,
    meta: &MetaConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    run_training(bundle, split, model, Regime::Auto(meta), meta.eta1, opts)
}

/// The validation meta-gradient of the filter coefficients.
///
/// With ξ = 0 this is exactly ∇_Θ L_val at the current weights. With ξ > 0
/// the inner problem is approximated by one plain SGD step
/// w' = w − ξ∇_w L_train, and the result is
///
/// ```text
/// ∇_Θ L_val(w', Θ) − ξ · [∇_Θ L_train(w⁺, Θ) − ∇_Θ L_train(w⁻, Θ)] / 2ε
/// ```
///
/// with w± = w ± ε·∇_{w'}L_val(w', Θ) and ε = eps_scale/‖∇_{w'}L_val‖₂
/// floored at eps_floor. Validation losses are differentiated without
/// dropout; the training-loss forwards all reuse `train_dropout_seed` so the
/// three of them see identical masks.
pub fn meta_gradient(
    state: &ModelState,
    bundle: &Bundle,
    split: &Split,
    meta: &MetaConfig,
    train_dropout_seed: u64,
) -> Result<Vec<f64>, TrainError> {
    meta.validate()?;
    let graph = &bundle.graph;
    let x = &bundle.features;
    let labels = &bundle.labels;

    if meta.xi == 0.0 {
        let (_, cache) = forward_with_cache(state, graph, x, None)?;
        return Ok(backward(state, graph, &cache, labels, &split.val_mask)?.theta);
    }

    let (_, cache_train) = forward_with_cache(state, graph, x, Some(train_dropout_seed))?;
    let grad_train = backward(state, graph, &cache_train, labels, &split.train_mask)?;
    let w_prime = state.offset_w(-meta.xi, &grad_train);

    let (_, cache_val) = forward_with_cache(&w_prime, graph, x, None)?;
    let grad_val = backward(&w_prime, graph, &cache_val, labels, &split.val_mask)?;
    let first_term = grad_val.theta.clone();

    let g_norm = grad_val.w_l2_norm();
    if g_norm == 0.0 {
        return Ok(first_term);
    }
    let eps = (meta.eps_scale / g_norm).max(meta.eps_floor);

    let theta_grad_at = |s: &ModelState| -> Result<Vec<f64>, TrainError> {
        let (_, cache) = forward_with_cache(s, graph, x, Some(train_dropout_seed))?;
        Ok(backward(s, graph, &cache, labels, &split.train_mask)?.theta)
    };
    let plus = theta_grad_at(&state.offset_w(eps, &grad_val))?;
    let minus = theta_grad_at(&state.offset_w(-eps, &grad_val))?;

    Ok(first_term
        .iter()
        .zip(plus.iter().zip(&minus))
        .map(|(f, (p, m))| f - meta.xi * (p - m) / (2.0 * eps))
        .collect())
}

/// One grid-search candidate: the frozen coefficients and what training only
/// w under them achieved.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridRow {
    pub theta: Vec<f64>,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: GridRow,
    /// Enumeration index of the winner (lexicographic order, first wins ties).
    pub best_index: usize,
    pub rows: Vec<GridRow>,
}

/// Grid-search controls. The per-candidate epoch budget is deliberately
/// smaller than a full training run; an exhaustive 11-value order-2 sweep is
/// 1331 candidates.
#[derive(Clone, Debug)]
pub struct GridOptions {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub dropout_stream: u64,
    pub workers: usize,
    pub max_combinations: u128,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            lr: 0.05,
            weight_decay: 0.0005,
            max_epochs: 200,
            patience: 50,
            dropout_stream: 0,
            workers: 1,
            max_combinations: 1_000_000,
        }
    }
}

fn candidate_theta(grid: &[f64], order: usize, index: usize) -> Vec<f64> {
    // θ_0 is the most significant digit of the enumeration
    let mut theta = vec![0.0; order + 1];
    let mut rest = index;
    for k in (0..=order).rev() {
        theta[k] = grid[rest % grid.len()];
        rest /= grid.len();
    }
    theta
}

/// Exhaustive search over Θ ∈ grid^(order+1). Each candidate trains only the
/// MLP weights from the same initial state; candidates are ranked by their
/// best validation accuracy and ties keep the first (lexicographically
/// smallest) candidate. The full table comes back for audit.
pub fn grid_search<F>(
    bundle: &Bundle,
    split: &Split,
    build_model: F,
    grid_values: &[f64],
    order: usize,
    opts: &GridOptions,
) -> Result<GridSearchResult, TrainError>
where
    F: Fn(Vec<f64>) -> Result<ModelState, ModelError> + Sync,
{
    if grid_values.is_empty() {
        return Err(TrainError::InvalidConfig("grid values must be non-empty".into()));
    }
    let combinations = (grid_values.len() as u128)
        .checked_pow(order as u32 + 1)
        .unwrap_or(u128::MAX);
    if combinations > opts.max_combinations {
        return Err(TrainError::GridTooLarge { combinations, limit: opts.max_combinations });
    }
    let total = combinations as usize;

    let train_opts = TrainOptions {
        weight_decay: opts.weight_decay,
        max_epochs: opts.max_epochs,
        patience: opts.patience,
        dropout_stream: opts.dropout_stream,
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<GridRow, String>>>> = Mutex::new(vec![None; total]);
    let workers = opts.workers.max(1).min(total.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= total {
                    break;
                }
                let theta = candidate_theta(grid_values, order, index);
                let row = build_model(theta.clone())
                    .map_err(TrainError::from)
                    .and_then(|model| train_frozen(bundle, split, model, opts.lr, &train_opts))
                    .map(|outcome| GridRow {
                        theta,
                        val_acc: outcome.report.val_acc_at_best,
                        test_acc: outcome.report.test_acc_at_best,
                    })
                    .map_err(|e| e.to_string());
                results.lock().unwrap()[index] = Some(row);
            });
        }
    });

    let collected = results.into_inner().unwrap();
    let mut rows = Vec::with_capacity(total);
    for slot in collected {
        match slot.expect("every candidate index was visited") {
            Ok(row) => rows.push(row),
            Err(msg) => return Err(TrainError::Numeric(msg)),
        }
    }

    // argmax by enumeration index: strict improvement keeps the first winner
    let mut best_index = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.val_acc > rows[best_index].val_acc {
            best_index = i;
        }
    }
    Ok(GridSearchResult { best: rows[best_index].clone(), best_index, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{random_split, sbm_generate, SbmParams};
    use crate::filter::{Basis, FilterSpec, InitStrategy};

    fn small_bundle(seed: u64) -> Bundle {
        sbm_generate(&SbmParams {
            nodes: 40,
            classes: 2,
            p_in: 0.4,
            p_out: 0.05,
            feature_dim: 4,
            feature_noise: 0.8,
            seed,
        })
        .unwrap()
    }

    fn small_model(bundle: &Bundle, order: usize, dropout: f64, seed: u64) -> ModelState {
        let theta =
            crate::filter::init_coefficients(InitStrategy::RandomUniform, order, seed).unwrap();
        let filter = FilterSpec::new(Basis::Monomial, theta).unwrap();
        ModelState::init(bundle.feature_dim(), 8, bundle.num_classes(), dropout, filter, seed)
            .unwrap()
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(&[3]);
        let mut params = vec![1.0, -2.0, 0.5];
        let grads = vec![0.0; 3];
        adam_step(&mut adam, &mut [&mut params], &[&grads], 0.1, 0.0).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the first step is lr·sign(g)/(1+eps) ≈ lr
        let mut adam = AdamState::new(&[1]);
        let mut params = vec![0.0];
        let grads = vec![1.0];
        adam_step(&mut adam, &mut [&mut params], &[&grads], 0.1, 0.0).unwrap();
        assert!((params[0] + 0.1).abs() < 1e-8, "param {}", params[0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut adam = AdamState::new(&[2]);
            let mut params = vec![0.3, -0.4];
            for i in 0..5 {
                let grads = vec![0.1 * i as f64, -0.2];
                adam_step(&mut adam, &mut [&mut params], &[&grads], 0.05, 0.01).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut adam = AdamState::new(&[1]);
        let mut params = vec![0.0];
        let grads = vec![f64::NAN];
        assert!(matches!(
            adam_step(&mut adam, &mut [&mut params], &[&grads], 0.1, 0.0),
            Err(TrainError::Numeric(_))
        ));
    }

    #[test]
    fn meta_gradient_xi_zero_equals_validation_theta_gradient() {
        let bundle = small_bundle(1);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 1).unwrap();
        let state = small_model(&bundle, 3, 0.0, 1);
        let meta = MetaConfig { xi: 0.0, ..MetaConfig::default() };
        let mg = meta_gradient(&state, &bundle, &split, &meta, 5).unwrap();

        let (_, cache) =
            forward_with_cache(&state, &bundle.graph, &bundle.features, None).unwrap();
        let direct =
            backward(&state, &bundle.graph, &cache, &bundle.labels, &split.val_mask).unwrap().theta;
        assert_eq!(mg, direct);
    }

    #[test]
    fn meta_gradient_flat_loss_is_zero() {
        // W2 = 0, b2 = 0 make the MLP output zero, so logits vanish for every
        // Θ and the first-order meta-gradient is exactly zero
        let bundle = small_bundle(2);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 2).unwrap();
        let mut state = small_model(&bundle, 2, 0.0, 2);
        state.w_tensors_mut()[2].iter_mut().for_each(|v| *v = 0.0);
        state.w_tensors_mut()[3].iter_mut().for_each(|v| *v = 0.0);
        let meta = MetaConfig { xi: 0.0, ..MetaConfig::default() };
        let mg = meta_gradient(&state, &bundle, &split, &meta, 3).unwrap();
        assert!(mg.iter().all(|&g| g == 0.0), "{mg:?}");
    }

    #[test]
    fn meta_gradient_zero_val_gradient_skips_second_term() {
        // saturated, correct validation predictions make ∇_w' L_val exactly
        // zero; the ε division must be skipped and the result is zero
        let bundle = small_bundle(3);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 3).unwrap();
        let mut state = small_model(&bundle, 2, 0.0, 3);
        *state.filter_mut() = FilterSpec::new(Basis::Monomial, vec![1.0, 0.0, 0.0]).unwrap();
        state.w_tensors_mut()[0].iter_mut().for_each(|v| *v = 0.0);
        state.w_tensors_mut()[2].iter_mut().for_each(|v| *v = 0.0);
        // all nodes in class 0 on this block layout would need label control;
        // instead saturate toward class 0 and keep only class-0 validation
        // nodes by relabeling the bundle
        let mut bundle = bundle;
        bundle.labels = crate::graph::LabelVector::new(vec![0; bundle.n()], 2).unwrap();
        state.w_tensors_mut()[3].copy_from_slice(&[1000.0, -1000.0]);
        let meta = MetaConfig { xi: 0.05, ..MetaConfig::default() };
        let mg = meta_gradient(&state, &bundle, &split, &meta, 4).unwrap();
        assert!(mg.iter().all(|&g| g == 0.0), "{mg:?}");
    }

    /// Exact gradient of the one-step-unrolled objective
    /// φ(Θ) = L_val(w − ξ∇_w L_train(w, Θ), Θ) by central finite differences
    /// over Θ, re-running the inner step per perturbation.
    fn unrolled_objective_fd(
        state: &ModelState,
        bundle: &Bundle,
        split: &Split,
        xi: f64,
        step: f64,
    ) -> Vec<f64> {
        let phi = |s: &ModelState| -> f64 {
            let (_, cache) =
                forward_with_cache(s, &bundle.graph, &bundle.features, None).unwrap();
            let grads =
                backward(s, &bundle.graph, &cache, &bundle.labels, &split.train_mask).unwrap();
            let w_prime = s.offset_w(-xi, &grads);
            let (logits, _) =
                forward_with_cache(&w_prime, &bundle.graph, &bundle.features, None).unwrap();
            loss_and_accuracy(&logits, &bundle.labels, &split.val_mask).unwrap().loss
        };
        (0..state.theta().len())
            .map(|k| {
                let mut plus = state.clone();
                plus.filter_mut().theta_mut()[k] += step;
                let mut minus = state.clone();
                minus.filter_mut().theta_mut()[k] -= step;
                (phi(&plus) - phi(&minus)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn meta_gradient_matches_double_finite_difference_oracle() {
        // the n = 12, K = 2 instance: ξ > 0 meta-gradient vs the exact
        // unrolled gradient computed by finite differences over Θ
        let bundle = sbm_generate(&SbmParams {
            nodes: 12,
            classes: 2,
            p_in: 0.5,
            p_out: 0.2,
            feature_dim: 3,
            feature_noise: 0.5,
            seed: 7,
        })
        .unwrap();
        let split = random_split(12, 0.34, 0.33, 0.33, 7).unwrap();
        let theta = crate::filter::init_coefficients(InitStrategy::RandomUniform, 2, 7).unwrap();
        let filter = FilterSpec::new(Basis::Monomial, theta).unwrap();
        let state = ModelState::init(3, 5, 2, 0.0, filter, 7).unwrap();

        let meta = MetaConfig { xi: 0.05, ..MetaConfig::default() };
        let analytic = meta_gradient(&state, &bundle, &split, &meta, 0).unwrap();
        let numeric = unrolled_objective_fd(&state, &bundle, &split, meta.xi, 1e-5);
        for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel <= 5e-3, "theta[{k}]: analytic {a} vs numeric {n} (rel {rel})");
        }
    }

    #[test]
    fn meta_gradient_second_term_vanishes_as_xi_shrinks() {
        let bundle = sbm_generate(&SbmParams {
            nodes: 12,
            classes: 2,
            p_in: 0.5,
            p_out: 0.2,
            feature_dim: 3,
            feature_noise: 0.5,
            seed: 7,
        })
        .unwrap();
        let split = random_split(12, 0.34, 0.33, 0.33, 7).unwrap();
        let theta = crate::filter::init_coefficients(InitStrategy::RandomUniform, 2, 7).unwrap();
        let filter = FilterSpec::new(Basis::Monomial, theta).unwrap();
        let state = ModelState::init(3, 5, 2, 0.0, filter, 7).unwrap();

        let tiny = MetaConfig { xi: 1e-8, ..MetaConfig::default() };
        let zero = MetaConfig { xi: 0.0, ..MetaConfig::default() };
        let g_tiny = meta_gradient(&state, &bundle, &split, &tiny, 0).unwrap();
        let g_zero = meta_gradient(&state, &bundle, &split, &zero, 0).unwrap();
        let diff: f64 = g_tiny
            .iter()
            .zip(&g_zero)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff <= 1e-5, "diff {diff}");
    }

    #[test]
    fn zero_epochs_report_holds_untrained_evaluation() {
        let bundle = small_bundle(4);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 4).unwrap();
        let model = small_model(&bundle, 2, 0.0, 4);
        let opts = TrainOptions { max_epochs: 0, ..TrainOptions::default() };
        let outcome = train_joint(&bundle, &split, model, 0.05, &opts).unwrap();
        assert_eq!(outcome.report.epochs_run, 0);
        assert_eq!(outcome.report.best_epoch, 0);
        assert!(outcome.report.curves.is_empty());
        assert!(outcome.report.val_acc_at_best >= 0.0);
        assert_eq!(outcome.report.theta_trajectory.len(), 1);
    }

    #[test]
    fn auto_with_huge_freq_never_updates_theta() {
        let bundle = small_bundle(5);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 5).unwrap();
        let model = small_model(&bundle, 3, 0.0, 5);
        let initial_theta = model.theta().to_vec();
        let meta = MetaConfig { freq: 10_000, ..MetaConfig::default() };
        let opts = TrainOptions { max_epochs: 30, patience: 30, ..TrainOptions::default() };
        let outcome = train_auto(&bundle, &split, model, &meta, &opts).unwrap();
        assert_eq!(outcome.report.theta_trajectory.len(), 1);
        assert_eq!(outcome.report.theta_trajectory[0], initial_theta);
    }

    #[test]
    fn auto_update_count_follows_freq() {
        let bundle = small_bundle(6);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 6).unwrap();
        for freq in [1usize, 2, 3, 5] {
            let model = small_model(&bundle, 2, 0.0, 6);
            let meta = MetaConfig { freq, eta0: 0.001, ..MetaConfig::default() };
            let epochs = 12;
            let opts = TrainOptions {
                max_epochs: epochs,
                patience: epochs + 1,
                ..TrainOptions::default()
            };
            let outcome = train_auto(&bundle, &split, model, &meta, &opts).unwrap();
            assert_eq!(outcome.report.epochs_run, epochs);
            assert_eq!(
                outcome.report.theta_trajectory.len() - 1,
                epochs / freq,
                "freq {freq}"
            );
        }
    }

    #[test]
    fn early_stopping_restores_best_parameters() {
        let bundle = small_bundle(7);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 7).unwrap();
        let model = small_model(&bundle, 2, 0.3, 7);
        let opts =
            TrainOptions { max_epochs: 120, patience: 15, ..TrainOptions::default() };
        let outcome = train_joint(&bundle, &split, model, 0.05, &opts).unwrap();
        let report = &outcome.report;
        assert!(report.best_epoch <= report.epochs_run);
        // re-evaluating the returned model must reproduce the reported metrics
        let (_, val, test) = evaluate(&outcome.model, &bundle, &split).unwrap();
        assert_eq!(val.accuracy, report.val_acc_at_best);
        assert_eq!(test.accuracy, report.test_acc_at_best);
        // curves have one entry per executed epoch
        assert_eq!(report.curves.len(), report.epochs_run);
    }

    #[test]
    fn grid_search_enumerates_exhaustively() {
        let bundle = small_bundle(8);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 8).unwrap();
        let opts = GridOptions { max_epochs: 5, patience: 5, ..GridOptions::default() };
        let build = |theta: Vec<f64>| {
            let filter = FilterSpec::new(Basis::Monomial, theta)?;
            ModelState::init(bundle.feature_dim(), 8, 2, 0.0, filter, 8)
        };
        let result = grid_search(&bundle, &split, build, &[0.0, 1.0], 1, &opts).unwrap();
        assert_eq!(result.rows.len(), 4);
        // lexicographic enumeration with θ_0 most significant
        assert_eq!(result.rows[0].theta, vec![0.0, 0.0]);
        assert_eq!(result.rows[1].theta, vec![0.0, 1.0]);
        assert_eq!(result.rows[2].theta, vec![1.0, 0.0]);
        assert_eq!(result.rows[3].theta, vec![1.0, 1.0]);
        let max = result.rows.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.best.val_acc, max);
        assert_eq!(result.rows[result.best_index].val_acc, result.best.val_acc);
    }

    #[test]
    fn grid_search_guard_refuses_huge_grids() {
        let bundle = small_bundle(9);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 9).unwrap();
        let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let build = |theta: Vec<f64>| {
            let filter = FilterSpec::new(Basis::Monomial, theta)?;
            ModelState::init(bundle.feature_dim(), 8, 2, 0.0, filter, 9)
        };
        // 11^6 = 1_771_561 > 1e6
        match grid_search(&bundle, &split, build, &grid, 5, &GridOptions::default()) {
            Err(TrainError::GridTooLarge { combinations, .. }) => {
                assert_eq!(combinations, 1_771_561);
            }
            other => panic!("expected GridTooLarge, got {:?}", other.map(|r| r.rows.len())),
        }
    }

    #[test]
    fn grid_search_workers_agree_with_serial() {
        let bundle = small_bundle(10);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 10).unwrap();
        let build = |theta: Vec<f64>| {
            let filter = FilterSpec::new(Basis::Monomial, theta)?;
            ModelState::init(bundle.feature_dim(), 8, 2, 0.0, filter, 10)
        };
        let serial = GridOptions { max_epochs: 4, patience: 4, workers: 1, ..GridOptions::default() };
        let parallel = GridOptions { workers: 4, ..serial.clone() };
        let a = grid_search(&bundle, &split, &build, &[-0.5, 0.0, 0.5], 1, &serial).unwrap();
        let b = grid_search(&bundle, &split, &build, &[-0.5, 0.0, 0.5], 1, &parallel).unwrap();
        assert_eq!(a.best_index, b.best_index);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.theta, rb.theta);
            assert_eq!(ra.val_acc, rb.val_acc);
            assert_eq!(ra.test_acc, rb.test_acc);
        }
    }

    #[test]
    fn frozen_theta_never_moves() {
        let bundle = small_bundle(11);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 11).unwrap();
        let model = small_model(&bundle, 3, 0.0, 11);
        let theta0 = model.theta().to_vec();
        let opts = TrainOptions { max_epochs: 20, patience: 20, ..TrainOptions::default() };
        let outcome = train_frozen(&bundle, &split, model, 0.05, &opts).unwrap();
        assert_eq!(outcome.model.theta(), &theta0[..]);
        assert_eq!(outcome.report.theta_trajectory.len(), 1);
    }

    #[test]
    fn joint_training_learns_the_easy_instance() {
        let bundle = small_bundle(12);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 12).unwrap();
        split.validate_classes(&bundle.labels).unwrap();
        let model = small_model(&bundle, 3, 0.0, 12);
        let opts = TrainOptions { max_epochs: 200, patience: 50, ..TrainOptions::default() };
        let outcome = train_joint(&bundle, &split, model, 0.05, &opts).unwrap();
        assert!(outcome.report.failure.is_none());
        assert!(
            outcome.report.val_acc_at_best >= 0.7,
            "val acc {}",
            outcome.report.val_acc_at_best
        );
    }

    #[test]
    fn divergence_is_flagged_not_fatal() {
        let bundle = small_bundle(13);
        let split = random_split(bundle.n(), 0.3, 0.3, 0.4, 13).unwrap();
        let model = small_model(&bundle, 2, 0.0, 13);
        // an absurd learning rate overflows the logits within a few epochs
        let opts = TrainOptions { max_epochs: 400, patience: 400, ..TrainOptions::default() };
        let outcome = train_joint(&bundle, &split, model, 1e150, &opts).unwrap();
        assert!(outcome.report.failure.is_some());
    }

    #[test]
    fn mean_epoch_time_is_wall_clock_over_epochs() {
        let report = TrainReport {
            regime: "joint".into(),
            epochs_run: 4,
            best_epoch: 2,
            train_acc_at_best: 0.0,
            val_acc_at_best: 0.0,
            val_loss_at_best: 0.0,
            test_acc_at_best: 0.0,
            curves: Curves::default(),
            theta_trajectory: vec![],
            final_theta: vec![],
            wall_clock_sec: 2.0,
            peak_mem_bytes: 0,
            failure: None,
        };
        assert_eq!(report.mean_epoch_sec(), 0.5);
        let empty = TrainReport { epochs_run: 0, wall_clock_sec: 1.0, ..report };
        assert_eq!(empty.mean_epoch_sec(), 0.0);
    }
}
