//! The decoupled spectral node classifier: a 2-layer MLP feature transform
//! followed by parameter-free polynomial filter propagation, with exact
//! reverse-mode gradients for both the MLP weights and the filter
//! coefficients.
//!
//! Forward order is dropout → affine → ReLU → dropout → affine → propagate.
//! Dropout is inverted (masks carry 1/(1−p)) so evaluation needs no rescale.
//! A training-mode forward caches the per-order propagated blocks
//! P_k(M)·MLP(X); each coefficient gradient is then a single Frobenius inner
//! product against the loss gradient at the logits, and no matvec is rerun.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::filter::{apply_filter, basis_blocks, FilterError, FilterSpec};
use crate::graph::{Graph, GraphError, LabelVector};
use crate::linalg::DenseMatrix;
use crate::rng::Rng;

pub const CHECKPOINT_VERSION: &str = "autopoly-ckpt-1";

const GLOROT_STREAM: u64 = 0x67_6c_72_74;
const DROPOUT_STREAM: u64 = 0x64_72_6f_70;

#[derive(Debug)]
pub enum ModelError {
    NonFinite { context: &'static str },
    ShapeMismatch { context: &'static str, expected: usize, actual: usize },
    EmptyMask,
    CacheMismatch(&'static str),
    CheckpointVersion { found: String },
    CheckpointFormat(String),
    Io { path: std::path::PathBuf, source: std::io::Error },
    InvalidDropout(f64),
    Filter(FilterError),
    Graph(GraphError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::NonFinite { context } => write!(f, "non-finite values in {context}"),
            ModelError::ShapeMismatch { context, expected, actual } => {
                write!(f, "{context}: expected {expected}, got {actual}")
            }
            ModelError::EmptyMask => write!(f, "node mask is empty"),
            ModelError::CacheMismatch(context) => {
                write!(f, "forward cache does not match the model state: {context}")
            }
            ModelError::CheckpointVersion { found } => {
                write!(f, "checkpoint version '{found}' is not '{CHECKPOINT_VERSION}'")
            }
            ModelError::CheckpointFormat(msg) => write!(f, "malformed checkpoint: {msg}"),
            ModelError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ModelError::InvalidDropout(p) => write!(f, "dropout must lie in [0, 1), got {p}"),
            ModelError::Filter(e) => write!(f, "{e}"),
            ModelError::Graph(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<FilterError> for ModelError {
    fn from(e: FilterError) -> Self {
        ModelError::Filter(e)
    }
}

impl From<GraphError> for ModelError {
    fn from(e: GraphError) -> Self {
        ModelError::Graph(e)
    }
}

/// MLP weights, dropout configuration and the filter coefficients.
#[derive(Clone, Debug)]
pub struct ModelState {
    w1: DenseMatrix,
    b1: Vec<f64>,
    w2: DenseMatrix,
    b2: Vec<f64>,
    dropout_p: f64,
    filter: FilterSpec,
}

impl ModelState {
    /// Glorot-uniform weights, zero biases, seeded by the portable RNG.
    pub fn init(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        dropout_p: f64,
        filter: FilterSpec,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(ModelError::InvalidDropout(dropout_p));
        }
        let mut rng = Rng::derive(seed, GLOROT_STREAM);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            DenseMatrix::from_fn(rows, cols, |_, _| rng.uniform(-limit, limit))
        };
        Ok(ModelState {
            w1: glorot(input_dim, hidden),
            b1: vec![0.0; hidden],
            w2: glorot(hidden, classes),
            b2: vec![0.0; classes],
            dropout_p,
            filter,
        })
    }

    /// Builds a state from explicit tensors; used by tests and checkpoints.
    pub fn from_parts(
        w1: DenseMatrix,
        b1: Vec<f64>,
        w2: DenseMatrix,
        b2: Vec<f64>,
        dropout_p: f64,
        filter: FilterSpec,
    ) -> Result<Self, ModelError> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(ModelError::InvalidDropout(dropout_p));
        }
        if w1.cols() != b1.len() {
            return Err(ModelError::ShapeMismatch {
                context: "b1 length vs w1 columns",
                expected: w1.cols(),
                actual: b1.len(),
            });
        }
        if w1.cols() != w2.rows() {
            return Err(ModelError::ShapeMismatch {
                context: "w2 rows vs w1 columns",
                expected: w1.cols(),
                actual: w2.rows(),
            });
        }
        if w2.cols() != b2.len() {
            return Err(ModelError::ShapeMismatch {
                context: "b2 length vs w2 columns",
                expected: w2.cols(),
                actual: b2.len(),
            });
        }
        Ok(ModelState { w1, b1, w2, b2, dropout_p, filter })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn filter(&self) -> &FilterSpec {
        &self.filter
    }

    pub fn filter_mut(&mut self) -> &mut FilterSpec {
        &mut self.filter
    }

    pub fn theta(&self) -> &[f64] {
        self.filter.theta()
    }

    /// Mutable views of the four weight tensors, in the fixed order
    /// (w1, b1, w2, b2) used everywhere gradients travel.
    pub fn w_tensors_mut(&mut self) -> [&mut [f64]; 4] {
        let ModelState { w1, b1, w2, b2, .. } = self;
        [w1.data_mut(), b1.as_mut_slice(), w2.data_mut(), b2.as_mut_slice()]
    }

    /// As [`ModelState::w_tensors_mut`] with the filter coefficients appended,
    /// for optimizers that treat Θ as a fifth tensor.
    pub fn all_tensors_mut(&mut self) -> [&mut [f64]; 5] {
        let ModelState { w1, b1, w2, b2, filter, .. } = self;
        [w1.data_mut(), b1.as_mut_slice(), w2.data_mut(), b2.as_mut_slice(), filter.theta_mut()]
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.is_finite()
            && self.b2.iter().all(|v| v.is_finite())
            && self.filter.theta().iter().all(|v| v.is_finite())
    }

    /// Returns a copy with w ← w + scale · grad_w; Θ is untouched. This is the
    /// plain-SGD step the one-step unrolled meta-gradient needs.
    pub fn offset_w(&self, scale: f64, grads: &Gradients) -> ModelState {
        let mut out = self.clone();
        out.w1.axpy(scale, &grads.w1);
        for (b, g) in out.b1.iter_mut().zip(&grads.b1) {
            *b += scale * g;
        }
        out.w2.axpy(scale, &grads.w2);
        for (b, g) in out.b2.iter_mut().zip(&grads.b2) {
            *b += scale * g;
        }
        out
    }

    /// The MLP transform alone (no dropout): ReLU(X·W1 + b1)·W2 + b2.
    pub fn mlp_eval(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut a1 = x.matmul(&self.w1);
        add_bias(&mut a1, &self.b1);
        let h = a1.clone().into_relu();
        let mut out = h.matmul(&self.w2);
        add_bias(&mut out, &self.b2);
        out
    }
}

trait Relu {
    fn into_relu(self) -> Self;
}

impl Relu for DenseMatrix {
    fn into_relu(mut self) -> Self {
        for v in self.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self
    }
}

fn add_bias(m: &mut DenseMatrix, bias: &[f64]) {
    for r in 0..m.rows() {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn column_sums(m: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// Forward mode: training draws dropout masks from the given seed and
/// returns a cache; evaluation is deterministic and cache-free.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

/// Intermediate values kept by a training-mode forward, sufficient for an
/// exact backward pass without re-running any matvec.
pub struct ForwardCache {
    x_dropped: DenseMatrix,
    a1: DenseMatrix,
    h_dropped: DenseMatrix,
    /// Hidden dropout mask with the 1/(1−p) scale folded in; all ones when
    /// dropout is off.
    mask1: Option<DenseMatrix>,
    /// P_k(M)·MLP(X) for k = 0..=K.
    blocks: Vec<DenseMatrix>,
    logits: DenseMatrix,
}

impl ForwardCache {
    pub fn logits(&self) -> &DenseMatrix {
        &self.logits
    }

    pub fn blocks(&self) -> &[DenseMatrix] {
        &self.blocks
    }
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> DenseMatrix {
    let scale = 1.0 / (1.0 - p);
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.next_f64() >= p { scale } else { 0.0 })
}

fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= m;
    }
    out
}

/// Forward pass that always produces a cache. `dropout_seed = None` disables
/// dropout while still recording the intermediates, which is how validation
/// losses are differentiated deterministically.
pub fn forward_with_cache(
    state: &ModelState,
    graph: &Graph,
    x: &DenseMatrix,
    dropout_seed: Option<u64>,
) -> Result<(DenseMatrix, ForwardCache), ModelError> {
    check_forward_inputs(state, graph, x)?;
    let p = state.dropout_p;
    let use_dropout = dropout_seed.is_some() && p > 0.0;
    let mut rng = dropout_seed.map(|s| Rng::derive(s, DROPOUT_STREAM));

    let x_dropped = if use_dropout {
        let mask0 = dropout_mask(x.rows(), x.cols(), p, rng.as_mut().unwrap());
        hadamard(x, &mask0)
    } else {
        x.clone()
    };

    let mut a1 = x_dropped.matmul(&state.w1);
    add_bias(&mut a1, &state.b1);
    let h = a1.clone().into_relu();

    let (h_dropped, mask1) = if use_dropout {
        let mask = dropout_mask(h.rows(), h.cols(), p, rng.as_mut().unwrap());
        (hadamard(&h, &mask), Some(mask))
    } else {
        (h, None)
    };

    let mut mlp_out = h_dropped.matmul(&state.w2);
    add_bias(&mut mlp_out, &state.b2);

    let blocks = basis_blocks(&state.filter, graph, &mlp_out)?;
    let mut logits = DenseMatrix::zeros(x.rows(), state.classes());
    for (k, block) in blocks.iter().enumerate() {
        logits.axpy(state.filter.theta()[k], block);
    }

    let cache = ForwardCache { x_dropped, a1, h_dropped, mask1, blocks, logits: logits.clone() };
    Ok((logits, cache))
}

fn check_forward_inputs(
    state: &ModelState,
    graph: &Graph,
    x: &DenseMatrix,
) -> Result<(), ModelError> {
    if x.rows() != graph.n() {
        return Err(ModelError::ShapeMismatch {
            context: "feature rows vs node count",
            expected: graph.n(),
            actual: x.rows(),
        });
    }
    if x.cols() != state.input_dim() {
        return Err(ModelError::ShapeMismatch {
            context: "feature columns vs model input dim",
            expected: state.input_dim(),
            actual: x.cols(),
        });
    }
    if !state.is_finite() {
        return Err(ModelError::NonFinite { context: "model weights" });
    }
    if !x.is_finite() {
        return Err(ModelError::NonFinite { context: "input features" });
    }
    Ok(())
}

/// The classifier forward pass: logits = Σ_k θ_k P_k(M) · MLP(X).
pub fn forward(
    state: &ModelState,
    graph: &Graph,
    x: &DenseMatrix,
    mode: Mode,
) -> Result<(DenseMatrix, Option<ForwardCache>), ModelError> {
    match mode {
        Mode::Train { dropout_seed } => {
            let (logits, cache) = forward_with_cache(state, graph, x, Some(dropout_seed))?;
            Ok((logits, Some(cache)))
        }
        Mode::Eval => {
            check_forward_inputs(state, graph, x)?;
            let mlp_out = state.mlp_eval(x);
            let logits = apply_filter(&state.filter, graph, &mlp_out)?;
            Ok((logits, None))
        }
    }
}

/// Mean cross-entropy and accuracy over a node mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub accuracy: f64,
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - max;
        sum += o.exp();
    }
    let log_sum = sum.ln();
    for o in out.iter_mut() {
        *o -= log_sum;
    }
}

fn argmax_lowest_tie(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Numerically stable masked mean cross-entropy plus accuracy; prediction
/// ties break toward the lowest class id.
pub fn loss_and_accuracy(
    logits: &DenseMatrix,
    labels: &LabelVector,
    mask: &[bool],
) -> Result<LossReport, ModelError> {
    if logits.rows() != labels.len() || mask.len() != labels.len() {
        return Err(ModelError::ShapeMismatch {
            context: "logits/labels/mask row counts",
            expected: labels.len(),
            actual: logits.rows().min(mask.len()),
        });
    }
    let mut count = 0usize;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut log_probs = vec![0.0; logits.cols()];
    for v in 0..labels.len() {
        if !mask[v] {
            continue;
        }
        count += 1;
        let row = logits.row(v);
        log_softmax_row(row, &mut log_probs);
        loss_sum -= log_probs[labels.get(v)];
        if argmax_lowest_tie(row) == labels.get(v) {
            correct += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::EmptyMask);
    }
    Ok(LossReport { loss: loss_sum / count as f64, accuracy: correct as f64 / count as f64 })
}

/// ∂L/∂logits for the masked mean cross-entropy: (softmax − onehot)/m on
/// masked rows, zero elsewhere.
fn output_gradient(
    logits: &DenseMatrix,
    labels: &LabelVector,
    mask: &[bool],
) -> Result<DenseMatrix, ModelError> {
    let count = mask.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(ModelError::EmptyMask);
    }
    let inv = 1.0 / count as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut log_probs = vec![0.0; logits.cols()];
    for v in 0..labels.len() {
        if !mask[v] {
            continue;
        }
        log_softmax_row(logits.row(v), &mut log_probs);
        let out = grad.row_mut(v);
        for (c, &lp) in log_probs.iter().enumerate() {
            out[c] = lp.exp() * inv;
        }
        out[labels.get(v)] -= inv;
    }
    Ok(grad)
}

/// Gradients for the four weight tensors and the filter coefficients.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Gradients {
    /// Immutable views in the (w1, b1, w2, b2) order.
    pub fn w_slices(&self) -> [&[f64]; 4] {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    pub fn w_l2_norm(&self) -> f64 {
        self.w_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.w_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.theta.iter().all(|v| v.is_finite())
    }
}

/// Exact gradients of the masked mean cross-entropy with respect to every
/// weight tensor and coefficient, reusing the cached propagated blocks:
/// ∂L/∂θ_k = ⟨∂L/∂logits, P_k(M)·MLP(X)⟩.
pub fn backward(
    state: &ModelState,
    graph: &Graph,
    cache: &ForwardCache,
    labels: &LabelVector,
    mask: &[bool],
) -> Result<Gradients, ModelError> {
    if cache.blocks.len() != state.filter.order() + 1 {
        return Err(ModelError::CacheMismatch("block count vs filter order"));
    }
    if cache.a1.cols() != state.hidden() || cache.x_dropped.cols() != state.input_dim() {
        return Err(ModelError::CacheMismatch("hidden or input width"));
    }
    if cache.logits.rows() != labels.len() {
        return Err(ModelError::CacheMismatch("cached logits rows vs labels"));
    }

    let upstream = output_gradient(&cache.logits, labels, mask)?;

    let theta: Vec<f64> = cache.blocks.iter().map(|block| upstream.dot(block)).collect();

    // All basis operators are symmetric, so ∂L/∂F = Σ_k θ_k P_k(M)ᵀ G is the
    // same filter applied to the upstream gradient.
    let d_mlp = apply_filter(&state.filter, graph, &upstream)?;

    let w2 = cache.h_dropped.transposed_matmul(&d_mlp);
    let b2 = column_sums(&d_mlp);

    let mut d_hidden = d_mlp.matmul_transposed(&state.w2);
    if let Some(mask1) = &cache.mask1 {
        d_hidden = hadamard(&d_hidden, mask1);
    }
    // ReLU gate from the cached pre-activations
    for (g, &a) in d_hidden.data_mut().iter_mut().zip(cache.a1.data()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }

    let w1 = cache.x_dropped.transposed_matmul(&d_hidden);
    let b1 = column_sums(&d_hidden);

    Ok(Gradients { w1, b1, w2, b2, theta })
}

#[derive(Serialize, Deserialize)]
struct TensorData {
    rows: usize,
    cols: usize,
    data: String,
}

fn encode_tensor(rows: usize, cols: usize, data: &[f64]) -> TensorData {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    TensorData { rows, cols, data: BASE64.encode(bytes) }
}

fn decode_tensor(t: &TensorData) -> Result<Vec<f64>, ModelError> {
    let bytes = BASE64
        .decode(&t.data)
        .map_err(|e| ModelError::CheckpointFormat(format!("bad base64: {e}")))?;
    if bytes.len() != t.rows * t.cols * 8 {
        return Err(ModelError::CheckpointFormat(format!(
            "tensor byte length {} does not match {}x{} f64",
            bytes.len(),
            t.rows,
            t.cols
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: String,
    filter: FilterSpec,
    dropout_p: f64,
    tensors: BTreeMap<String, TensorData>,
}

impl ModelState {
    /// Single-document JSON checkpoint with base64 little-endian f64 tensors.
    pub fn to_checkpoint_json(&self) -> String {
        let mut tensors = BTreeMap::new();
        tensors.insert("w1".to_string(), encode_tensor(self.w1.rows(), self.w1.cols(), self.w1.data()));
        tensors.insert("b1".to_string(), encode_tensor(1, self.b1.len(), &self.b1));
        tensors.insert("w2".to_string(), encode_tensor(self.w2.rows(), self.w2.cols(), self.w2.data()));
        tensors.insert("b2".to_string(), encode_tensor(1, self.b2.len(), &self.b2));
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            filter: self.filter.clone(),
            dropout_p: self.dropout_p,
            tensors,
        };
        serde_json::to_string_pretty(&ckpt).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_str(text)
            .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::CheckpointVersion { found: ckpt.version });
        }
        ckpt.filter.validate()?;
        let tensor = |name: &str| -> Result<(usize, usize, Vec<f64>), ModelError> {
            let t = ckpt
                .tensors
                .get(name)
                .ok_or_else(|| ModelError::CheckpointFormat(format!("missing tensor '{name}'")))?;
            Ok((t.rows, t.cols, decode_tensor(t)?))
        };
        let (r1, c1, w1) = tensor("w1")?;
        let (_, _, b1) = tensor("b1")?;
        let (r2, c2, w2) = tensor("w2")?;
        let (_, _, b2) = tensor("b2")?;
        let as_matrix = |rows: usize, cols: usize, data: Vec<f64>| {
            let mut m = DenseMatrix::zeros(rows, cols);
            m.data_mut().copy_from_slice(&data);
            m
        };
        ModelState::from_parts(
            as_matrix(r1, c1, w1),
            b1,
            as_matrix(r2, c2, w2),
            b2,
            ckpt.dropout_p,
            ckpt.filter,
        )
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_checkpoint_json())
            .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
        ModelState::from_checkpoint_json(&text)
    }
}
