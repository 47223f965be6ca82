//! Polynomial spectral filters over the graph operators.
//!
//! A filter is a coefficient vector Θ over a polynomial basis applied to a
//! graph operator: monomial powers of the normalized adjacency, Chebyshev
//! polynomials of the rescaled Laplacian, or Bernstein polynomials of the
//! Laplacian. [`apply_filter`] evaluates the filter purely through sparse
//! matvec recurrences; [`dense_spectral_filter`] evaluates the same filter
//! through an explicit eigendecomposition and exists solely as an
//! independent oracle for the sparse path.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{spmv, CsrMatrix, Graph, GraphError};
use crate::linalg::{symmetric_eigen, DenseMatrix};
use crate::rng::Rng;

/// Largest graph the dense eigendecomposition oracle will accept.
pub const DENSE_ORACLE_MAX_NODES: usize = 500;

const INIT_STREAM: u64 = 0x66_69_6c_74; // namespace for coefficient init draws

#[derive(Debug)]
pub enum FilterError {
    ThetaLength { expected: usize, actual: usize },
    InvalidLambdaMax(f64),
    InvalidAlpha(f64),
    GraphTooLarge { n: usize, max: usize },
    InvalidGrid(String),
    EmptyTheta,
    Graph(GraphError),
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::ThetaLength { expected, actual } => {
                write!(f, "theta has {actual} coefficients, order requires {expected}")
            }
            FilterError::InvalidLambdaMax(v) => {
                write!(f, "lambda_max must lie in (0, 2], got {v}")
            }
            FilterError::InvalidAlpha(v) => write!(f, "teleport alpha must lie in (0, 1], got {v}"),
            FilterError::GraphTooLarge { n, max } => {
                write!(f, "dense spectral filter refused: n = {n} exceeds the {max}-node limit")
            }
            FilterError::InvalidGrid(msg) => write!(f, "invalid spectral grid: {msg}"),
            FilterError::EmptyTheta => write!(f, "theta must have at least one coefficient"),
            FilterError::Graph(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FilterError {}

impl From<GraphError> for FilterError {
    fn from(e: GraphError) -> Self {
        FilterError::Graph(e)
    }
}

/// Polynomial basis for the filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Powers of the normalized adjacency (generalized PageRank form).
    Monomial,
    /// Chebyshev polynomials of the rescaled Laplacian 2L̃/λ_max − I.
    Chebyshev,
    /// Bernstein polynomials of the normalized Laplacian.
    Bernstein,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Monomial => write!(f, "monomial"),
            Basis::Chebyshev => write!(f, "chebyshev"),
            Basis::Bernstein => write!(f, "bernstein"),
        }
    }
}

impl std::str::FromStr for Basis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "monomial" => Ok(Basis::Monomial),
            "chebyshev" => Ok(Basis::Chebyshev),
            "bernstein" => Ok(Basis::Bernstein),
            other => Err(format!("unknown basis '{other}' (monomial|chebyshev|bernstein)")),
        }
    }
}

/// A polynomial filter: basis, coefficients θ₀..θ_K and, for the Chebyshev
/// basis, the spectrum upper bound used in the rescaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    basis: Basis,
    theta: Vec<f64>,
    lambda_max: f64,
}

impl FilterSpec {
    /// Filter of order `theta.len() - 1` with the default λ_max = 2, the
    /// upper bound of the normalized Laplacian spectrum.
    pub fn new(basis: Basis, theta: Vec<f64>) -> Result<Self, FilterError> {
        if theta.is_empty() {
            return Err(FilterError::EmptyTheta);
        }
        Ok(FilterSpec { basis, theta, lambda_max: 2.0 })
    }

    /// As [`FilterSpec::new`] but validating the coefficient count against an
    /// explicit order.
    pub fn with_order(basis: Basis, order: usize, theta: Vec<f64>) -> Result<Self, FilterError> {
        if theta.len() != order + 1 {
            return Err(FilterError::ThetaLength { expected: order + 1, actual: theta.len() });
        }
        FilterSpec::new(basis, theta)
    }

    pub fn with_lambda_max(mut self, lambda_max: f64) -> Result<Self, FilterError> {
        if !(lambda_max > 0.0 && lambda_max <= 2.0) {
            return Err(FilterError::InvalidLambdaMax(lambda_max));
        }
        self.lambda_max = lambda_max;
        Ok(self)
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn order(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Mutable coefficient access for training; the length is fixed.
    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Validates a deserialized spec (checkpoints, configs).
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.theta.is_empty() {
            return Err(FilterError::EmptyTheta);
        }
        if !(self.lambda_max > 0.0 && self.lambda_max <= 2.0) {
            return Err(FilterError::InvalidLambdaMax(self.lambda_max));
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Bernstein weights θ'_k = θ_k · 2^{−K} · C(K, k). The binomials are exact
/// 128-bit integers; the 2^{−K} scaling is an exact power of two.
fn bernstein_weights(theta: &[f64]) -> Vec<f64> {
    let order = theta.len() - 1;
    let scale = (0.5f64).powi(order as i32);
    theta
        .iter()
        .enumerate()
        .map(|(k, &t)| t * scale * binomial(order, k) as f64)
        .collect()
}

fn chebyshev_operator(graph: &Graph, lambda_max: f64) -> CsrMatrix {
    graph.norm_laplacian().scale_shift(2.0 / lambda_max, -1.0)
}

/// Applies the filter to an n×d signal with K (monomial, Chebyshev) or 2K
/// (Bernstein Horner ladder) sparse matvecs.
pub fn apply_filter(
    spec: &FilterSpec,
    graph: &Graph,
    x: &DenseMatrix,
) -> Result<DenseMatrix, FilterError> {
    if x.rows() != graph.n() {
        return Err(FilterError::Graph(GraphError::DimensionMismatch {
            expected: graph.n(),
            actual: x.rows(),
            context: "apply_filter: signal rows vs node count",
        }));
    }
    let theta = spec.theta();
    let order = spec.order();
    match spec.basis() {
        Basis::Monomial => {
            let mut acc = x.scaled(theta[0]);
            let mut power = x.clone();
            for &t in &theta[1..] {
                power = spmv(graph.norm_adjacency(), &power)?;
                acc.axpy(t, &power);
            }
            Ok(acc)
        }
        Basis::Chebyshev => {
            let m = chebyshev_operator(graph, spec.lambda_max());
            let mut acc = x.scaled(theta[0]);
            if order == 0 {
                return Ok(acc);
            }
            let mut prev = x.clone();
            let mut cur = spmv(&m, x)?;
            acc.axpy(theta[1], &cur);
            for &t in &theta[2..] {
                let mut next = spmv(&m, &cur)?;
                next.scale(2.0);
                next.axpy(-1.0, &prev);
                acc.axpy(t, &next);
                prev = cur;
                cur = next;
            }
            Ok(acc)
        }
        Basis::Bernstein => {
            // Horner ladder in B = 2I − L̃ over the Laplacian powers of x:
            // R_0 = θ'_0 x, then R_k = B·R_{k−1} + θ'_k L̃^k x.
            let weights = bernstein_weights(theta);
            let lap = graph.norm_laplacian();
            let mut acc = x.scaled(weights[0]);
            let mut lap_power = x.clone();
            for &w in &weights[1..] {
                lap_power = spmv(lap, &lap_power)?;
                let lap_acc = spmv(lap, &acc)?;
                acc.scale(2.0);
                acc.axpy(-1.0, &lap_acc);
                acc.axpy(w, &lap_power);
            }
            Ok(acc)
        }
    }
}

/// Per-order propagated blocks P_k(M)·x for k = 0..=K, so that
/// `apply_filter(spec, g, x) = Σ_k θ_k · blocks[k]`. The training cache keeps
/// these to price coefficient gradients at one inner product each.
pub fn basis_blocks(
    spec: &FilterSpec,
    graph: &Graph,
    x: &DenseMatrix,
) -> Result<Vec<DenseMatrix>, FilterError> {
    if x.rows() != graph.n() {
        return Err(FilterError::Graph(GraphError::DimensionMismatch {
            expected: graph.n(),
            actual: x.rows(),
            context: "basis_blocks: signal rows vs node count",
        }));
    }
    let order = spec.order();
    let mut blocks = Vec::with_capacity(order + 1);
    match spec.basis() {
        Basis::Monomial => {
            blocks.push(x.clone());
            for k in 1..=order {
                let next = spmv(graph.norm_adjacency(), &blocks[k - 1])?;
                blocks.push(next);
            }
        }
        Basis::Chebyshev => {
            let m = chebyshev_operator(graph, spec.lambda_max());
            blocks.push(x.clone());
            if order >= 1 {
                blocks.push(spmv(&m, x)?);
            }
            for k in 2..=order {
                let mut next = spmv(&m, &blocks[k - 1])?;
                next.scale(2.0);
                next.axpy(-1.0, &blocks[k - 2]);
                blocks.push(next);
            }
        }
        Basis::Bernstein => {
            // blocks[k] = 2^{−K} C(K,k) (2I−L̃)^{K−k} L̃^k x
            let lap = graph.norm_laplacian();
            let scale = (0.5f64).powi(order as i32);
            let mut lap_powers = Vec::with_capacity(order + 1);
            lap_powers.push(x.clone());
            for k in 1..=order {
                let next = spmv(lap, &lap_powers[k - 1])?;
                lap_powers.push(next);
            }
            for (k, base) in lap_powers.into_iter().enumerate() {
                let mut block = base;
                for _ in 0..(order - k) {
                    let lap_block = spmv(lap, &block)?;
                    block.scale(2.0);
                    block.axpy(-1.0, &lap_block);
                }
                block.scale(scale * binomial(order, k) as f64);
                blocks.push(block);
            }
        }
    }
    Ok(blocks)
}

fn chebyshev_scalar(order: usize, x: f64) -> f64 {
    match order {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for _ in 2..=order {
                let next = 2.0 * x * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Scalar filter value at the eigenvalue `mu` of the basis operator
/// (Ã for monomial, the rescaled Laplacian for Chebyshev, L̃ for Bernstein).
fn eval_on_operator_eigenvalue(spec: &FilterSpec, mu: f64) -> f64 {
    let theta = spec.theta();
    match spec.basis() {
        Basis::Monomial => {
            let mut acc = 0.0;
            let mut power = 1.0;
            for &t in theta {
                acc += t * power;
                power *= mu;
            }
            acc
        }
        Basis::Chebyshev => theta
            .iter()
            .enumerate()
            .map(|(k, &t)| t * chebyshev_scalar(k, mu))
            .sum(),
        Basis::Bernstein => {
            let order = spec.order();
            bernstein_weights(theta)
                .iter()
                .enumerate()
                .map(|(k, &w)| w * (2.0 - mu).powi((order - k) as i32) * mu.powi(k as i32))
                .sum()
        }
    }
}

/// Scalar spectral response h_Θ(λ) on the Laplacian axis λ ∈ [0, 2].
fn scalar_response(spec: &FilterSpec, lambda: f64) -> f64 {
    let mu = match spec.basis() {
        Basis::Monomial => 1.0 - lambda,
        Basis::Chebyshev => 2.0 * lambda / spec.lambda_max() - 1.0,
        Basis::Bernstein => lambda,
    };
    eval_on_operator_eigenvalue(spec, mu)
}

/// Eigendecomposition route U h(Λ) Uᵀ X. Refuses graphs beyond
/// [`DENSE_ORACLE_MAX_NODES`]; this is the testing oracle, not the fast path.
pub fn dense_spectral_filter(
    spec: &FilterSpec,
    graph: &Graph,
    x: &DenseMatrix,
) -> Result<DenseMatrix, FilterError> {
    let n = graph.n();
    if n > DENSE_ORACLE_MAX_NODES {
        return Err(FilterError::GraphTooLarge { n, max: DENSE_ORACLE_MAX_NODES });
    }
    if x.rows() != n {
        return Err(FilterError::Graph(GraphError::DimensionMismatch {
            expected: n,
            actual: x.rows(),
            context: "dense_spectral_filter: signal rows vs node count",
        }));
    }
    let operator = match spec.basis() {
        Basis::Monomial => graph.norm_adjacency().to_dense(),
        Basis::Chebyshev => chebyshev_operator(graph, spec.lambda_max()).to_dense(),
        Basis::Bernstein => graph.norm_laplacian().to_dense(),
    };
    let (eigenvalues, vectors) = symmetric_eigen(&operator);
    let mut projected = vectors.transposed_matmul(x); // Uᵀ X
    for (i, &mu) in eigenvalues.iter().enumerate() {
        let h = eval_on_operator_eigenvalue(spec, mu);
        for v in projected.row_mut(i) {
            *v *= h;
        }
    }
    Ok(vectors.matmul(&projected))
}

/// The scalar response sampled on a grid over [0, 2].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralResponse {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
}

impl SpectralResponse {
    /// `grid_size` uniform points spanning [0, 2] inclusive.
    pub fn uniform_grid(grid_size: usize) -> Vec<f64> {
        if grid_size == 1 {
            return vec![0.0];
        }
        (0..grid_size).map(|i| 2.0 * i as f64 / (grid_size - 1) as f64).collect()
    }
}

pub fn spectral_response(spec: &FilterSpec, grid: &[f64]) -> Result<SpectralResponse, FilterError> {
    for pair in grid.windows(2) {
        if pair[1] <= pair[0] {
            return Err(FilterError::InvalidGrid("grid points must be strictly increasing".into()));
        }
    }
    if let (Some(&first), Some(&last)) = (grid.first(), grid.last()) {
        if first < 0.0 || last > 2.0 {
            return Err(FilterError::InvalidGrid(format!(
                "grid must lie within [0, 2], got [{first}, {last}]"
            )));
        }
    }
    let values: Vec<f64> = grid.iter().map(|&l| scalar_response(spec, l)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::InvalidGrid("non-finite response value".into()));
    }
    Ok(SpectralResponse { lambdas: grid.to_vec(), values })
}

/// Personalized-PageRank coefficients θ_k = α(1−α)^k, with the last
/// coefficient absorbing the tail so the sum is exactly one.
pub fn ppr_coefficients(alpha: f64, order: usize) -> Result<Vec<f64>, FilterError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(FilterError::InvalidAlpha(alpha));
    }
    let mut theta = Vec::with_capacity(order + 1);
    let mut residual = 1.0;
    for _ in 0..order {
        theta.push(alpha * residual);
        residual *= 1.0 - alpha;
    }
    theta.push(residual);
    Ok(theta)
}

/// Coefficient initialization strategies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitStrategy {
    /// Each θ_k drawn from U(−0.5, 0.5).
    RandomUniform,
    /// Personalized-PageRank profile with the given teleport probability.
    Ppr(f64),
    /// (1, 0, …, 0): the filter starts as the identity on the feature block.
    Delta0,
}

pub fn init_coefficients(
    strategy: InitStrategy,
    order: usize,
    seed: u64,
) -> Result<Vec<f64>, FilterError> {
    match strategy {
        InitStrategy::RandomUniform => {
            let mut rng = Rng::derive(seed, INIT_STREAM);
            Ok((0..=order).map(|_| rng.uniform(-0.5, 0.5)).collect())
        }
        InitStrategy::Ppr(alpha) => ppr_coefficients(alpha, order),
        InitStrategy::Delta0 => {
            let mut theta = vec![0.0; order + 1];
            theta[0] = 1.0;
            Ok(theta)
        }
    }
}

/// Largest eigenvalue of L̃ by power iteration (tolerance 1e-6, at most 1000
/// iterations). L̃ is positive semidefinite so the dominant eigenvalue in
/// magnitude is the largest one.
pub fn estimate_lambda_max(graph: &Graph) -> f64 {
    let n = graph.n();
    if n == 0 {
        return 0.0;
    }
    let mut rng = Rng::seed_from_u64(0xA070);
    let mut v = DenseMatrix::from_fn(n, 1, |_, _| rng.uniform(-1.0, 1.0));
    let norm = v.frobenius_norm();
    v.scale(1.0 / norm);
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let w = spmv(graph.norm_laplacian(), &v).expect("matching dimensions");
        let next = v.dot(&w); // Rayleigh quotient with ‖v‖ = 1
        let w_norm = w.frobenius_norm();
        if w_norm == 0.0 {
            return 0.0;
        }
        v = w.scaled(1.0 / w_norm);
        if (next - estimate).abs() <= 1e-6 {
            return next;
        }
        estimate = next;
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_graph(n: usize, edge_prob: f64, rng: &mut Rng) -> Graph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.next_f64() < edge_prob {
                    edges.push((u, v));
                }
            }
        }
        Graph::from_edge_list(n, &edges).unwrap()
    }

    fn random_spec(order: usize, basis: Basis, rng: &mut Rng) -> FilterSpec {
        let theta: Vec<f64> = (0..=order).map(|_| rng.uniform(-1.0, 1.0)).collect();
        FilterSpec::new(basis, theta).unwrap()
    }

    #[test]
    fn monomial_delta0_is_identity() {
        let mut rng = Rng::seed_from_u64(1);
        let g = random_graph(10, 0.4, &mut rng);
        let x = DenseMatrix::from_fn(10, 3, |_, _| rng.uniform(-1.0, 1.0));
        let spec = FilterSpec::new(Basis::Monomial, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let y = apply_filter(&spec, &g, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn bernstein_all_ones_is_identity() {
        // partition of unity: Σ_k 2^{−K} C(K,k) (2I−L̃)^{K−k} L̃^k = I
        let mut rng = Rng::seed_from_u64(2);
        let g = random_graph(12, 0.3, &mut rng);
        let x = DenseMatrix::from_fn(12, 2, |_, _| rng.uniform(-1.0, 1.0));
        let spec = FilterSpec::new(Basis::Bernstein, vec![1.0; 11]).unwrap();
        let y = apply_filter(&spec, &g, &x).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn monomial_first_order_is_one_hop() {
        let g = Graph::from_edge_list(2, &[(0, 1)]).unwrap();
        let x = DenseMatrix::from_rows(vec![vec![1.0], vec![0.0]]);
        let spec = FilterSpec::new(Basis::Monomial, vec![0.0, 1.0]).unwrap();
        let y = apply_filter(&spec, &g, &x).unwrap();
        assert!((y.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((y.get(1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sparse_and_dense_routes_agree() {
        let mut rng = Rng::seed_from_u64(3);
        for basis in [Basis::Monomial, Basis::Chebyshev, Basis::Bernstein] {
            for _ in 0..5 {
                let n = 5 + rng.below(30);
                let g = random_graph(n, 0.25, &mut rng);
                let order = rng.below(9);
                let spec = random_spec(order, basis, &mut rng);
                let x = DenseMatrix::from_fn(n, 3, |_, _| rng.uniform(-1.0, 1.0));
                let sparse = apply_filter(&spec, &g, &x).unwrap();
                let dense = dense_spectral_filter(&spec, &g, &x).unwrap();
                let rel = sparse.sub(&dense).frobenius_norm() / dense.frobenius_norm().max(1e-12);
                assert!(rel < 1e-8, "{basis} order {order} n {n}: rel err {rel}");
            }
        }
    }

    #[test]
    fn blocks_sum_matches_apply() {
        let mut rng = Rng::seed_from_u64(4);
        for basis in [Basis::Monomial, Basis::Chebyshev, Basis::Bernstein] {
            let g = random_graph(15, 0.3, &mut rng);
            let spec = random_spec(6, basis, &mut rng);
            let x = DenseMatrix::from_fn(15, 2, |_, _| rng.uniform(-1.0, 1.0));
            let blocks = basis_blocks(&spec, &g, &x).unwrap();
            assert_eq!(blocks.len(), 7);
            let mut acc = DenseMatrix::zeros(15, 2);
            for (k, block) in blocks.iter().enumerate() {
                acc.axpy(spec.theta()[k], block);
            }
            let direct = apply_filter(&spec, &g, &x).unwrap();
            assert!(acc.max_abs_diff(&direct) < 1e-10, "{basis}");
        }
    }

    #[test]
    fn constant_filter_scales_input_in_every_basis() {
        let mut rng = Rng::seed_from_u64(5);
        let g = random_graph(8, 0.4, &mut rng);
        let x = DenseMatrix::from_fn(8, 2, |_, _| rng.uniform(-1.0, 1.0));
        for basis in [Basis::Monomial, Basis::Chebyshev, Basis::Bernstein] {
            let spec = FilterSpec::new(basis, vec![0.7]).unwrap();
            let dense = dense_spectral_filter(&spec, &g, &x).unwrap();
            assert!(dense.max_abs_diff(&x.scaled(0.7)) < 1e-10, "{basis}");
            let sparse = apply_filter(&spec, &g, &x).unwrap();
            assert!(sparse.max_abs_diff(&x.scaled(0.7)) < 1e-12, "{basis}");
        }
    }

    #[test]
    fn filter_is_linear_in_signal_and_theta() {
        let mut rng = Rng::seed_from_u64(6);
        let g = random_graph(14, 0.3, &mut rng);
        for basis in [Basis::Monomial, Basis::Chebyshev, Basis::Bernstein] {
            let spec = random_spec(5, basis, &mut rng);
            let x1 = DenseMatrix::from_fn(14, 2, |_, _| rng.uniform(-1.0, 1.0));
            let x2 = DenseMatrix::from_fn(14, 2, |_, _| rng.uniform(-1.0, 1.0));
            let (a, b) = (0.3, -1.7);
            let mut combined = x1.scaled(a);
            combined.axpy(b, &x2);
            let lhs = apply_filter(&spec, &g, &combined).unwrap();
            let mut rhs = apply_filter(&spec, &g, &x1).unwrap().scaled(a);
            rhs.axpy(b, &apply_filter(&spec, &g, &x2).unwrap());
            assert!(lhs.max_abs_diff(&rhs) < 1e-10, "{basis} linearity in X");

            // superposition over coefficients
            let t1: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let t2: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let sum: Vec<f64> = t1.iter().zip(&t2).map(|(p, q)| p + q).collect();
            let s1 = FilterSpec::new(basis, t1).unwrap();
            let s2 = FilterSpec::new(basis, t2).unwrap();
            let s12 = FilterSpec::new(basis, sum).unwrap();
            let lhs = apply_filter(&s12, &g, &x1).unwrap();
            let rhs = apply_filter(&s1, &g, &x1).unwrap().add(&apply_filter(&s2, &g, &x1).unwrap());
            assert!(lhs.max_abs_diff(&rhs) < 1e-10, "{basis} linearity in theta");
        }
    }

    #[test]
    fn chebyshev_scalar_matches_cosine_form() {
        for k in 0..=10 {
            for i in 0..=100 {
                let x = -1.0 + 2.0 * i as f64 / 100.0;
                let expected = (k as f64 * x.acos()).cos();
                assert!(
                    (chebyshev_scalar(k, x) - expected).abs() < 1e-10,
                    "T_{k}({x})"
                );
            }
        }
    }

    #[test]
    fn bernstein_partition_of_unity_scalar() {
        for order in 0..=10 {
            let spec = FilterSpec::new(Basis::Bernstein, vec![1.0; order + 1]).unwrap();
            for i in 0..=200 {
                let lambda = 2.0 * i as f64 / 200.0;
                assert!((scalar_response(&spec, lambda) - 1.0).abs() < 1e-12, "K={order} λ={lambda}");
            }
        }
    }

    #[test]
    fn response_examples() {
        let spec = FilterSpec::new(Basis::Monomial, vec![0.5, 0.5]).unwrap();
        let resp = spectral_response(&spec, &[0.0, 2.0]).unwrap();
        assert!((resp.values[0] - 1.0).abs() < 1e-15);
        assert!(resp.values[1].abs() < 1e-15);

        for basis in [Basis::Monomial, Basis::Chebyshev, Basis::Bernstein] {
            let zero = FilterSpec::new(basis, vec![0.0; 4]).unwrap();
            let resp = spectral_response(&zero, &SpectralResponse::uniform_grid(21)).unwrap();
            assert!(resp.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn response_grid_validation() {
        let spec = FilterSpec::new(Basis::Monomial, vec![1.0]).unwrap();
        assert!(spectral_response(&spec, &[0.0, 0.0]).is_err());
        assert!(spectral_response(&spec, &[-0.1, 1.0]).is_err());
        assert!(spectral_response(&spec, &[0.0, 2.1]).is_err());
    }

    #[test]
    fn ppr_examples() {
        assert_eq!(ppr_coefficients(1.0, 4).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let theta = ppr_coefficients(0.5, 2).unwrap();
        assert_eq!(theta, vec![0.5, 0.25, 0.25]);
        for alpha in [0.05, 0.1, 0.3, 0.77, 0.99] {
            let theta = ppr_coefficients(alpha, 10).unwrap();
            let sum: f64 = theta.iter().sum();
            assert!((sum - 1.0).abs() < 1e-15, "alpha {alpha}: sum {sum}");
        }
        assert!(ppr_coefficients(0.0, 3).is_err());
        assert!(ppr_coefficients(1.5, 3).is_err());
    }

    #[test]
    fn init_strategies() {
        assert_eq!(
            init_coefficients(InitStrategy::Delta0, 3, 0).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        let a = init_coefficients(InitStrategy::RandomUniform, 5, 42).unwrap();
        let b = init_coefficients(InitStrategy::RandomUniform, 5, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| (-0.5..0.5).contains(&t)));
        let c = init_coefficients(InitStrategy::RandomUniform, 5, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(
            init_coefficients(InitStrategy::Ppr(0.5), 2, 0).unwrap(),
            vec![0.5, 0.25, 0.25]
        );
    }

    #[test]
    fn dense_oracle_refuses_large_graphs() {
        let edges: Vec<(usize, usize)> = (0..600).map(|i| (i, (i + 1) % 601)).collect();
        let g = Graph::from_edge_list(601, &edges).unwrap();
        let spec = FilterSpec::new(Basis::Monomial, vec![1.0]).unwrap();
        let x = DenseMatrix::zeros(601, 1);
        match dense_spectral_filter(&spec, &g, &x) {
            Err(FilterError::GraphTooLarge { n: 601, .. }) => {}
            other => panic!("expected GraphTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn lambda_max_estimate_matches_dense_eigenvalues() {
        let mut rng = Rng::seed_from_u64(7);
        let g = random_graph(40, 0.2, &mut rng);
        let (eigs, _) = symmetric_eigen(&g.norm_laplacian().to_dense());
        let top = eigs.last().copied().unwrap();
        let est = estimate_lambda_max(&g);
        assert!((est - top).abs() < 1e-4, "estimate {est} vs dense {top}");
    }

    #[test]
    fn theta_length_validation() {
        assert!(FilterSpec::with_order(Basis::Monomial, 3, vec![1.0, 0.0]).is_err());
        assert!(FilterSpec::new(Basis::Monomial, vec![]).is_err());
        assert!(FilterSpec::new(Basis::Chebyshev, vec![1.0]).unwrap().with_lambda_max(0.0).is_err());
        assert!(FilterSpec::new(Basis::Chebyshev, vec![1.0]).unwrap().with_lambda_max(2.5).is_err());
    }
}
