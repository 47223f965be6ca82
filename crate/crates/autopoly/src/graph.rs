//! Sparse graph representation and spectral operators.
//!
//! A [`Graph`] is immutable after construction and owns three symmetric
//! operators over the same node set: the raw adjacency A, the normalized
//! adjacency Ã = D̂^{-1/2}(A+I)D̂^{-1/2} and the normalized Laplacian
//! L̃ = I − Ã. Self-loops only ever enter through the normalization; the raw
//! edge set stays simple and undirected.
//!
//! The diagonals of Ã and L̃ are paired so that Ã + L̃ = I holds exactly in
//! f64, entry by entry, not just up to rounding.

use std::fmt;

use crate::linalg::DenseMatrix;

#[derive(Debug)]
pub enum GraphError {
    /// An input edge references a node outside [0, n).
    NodeOutOfRange { edge: (usize, usize), n: usize },
    DimensionMismatch { expected: usize, actual: usize, context: &'static str },
    /// A label is outside [0, num_classes).
    LabelOutOfRange { node: usize, label: usize, num_classes: usize },
    /// Fewer than two classes, or an empty label vector.
    InvalidLabels(String),
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::NodeOutOfRange { edge, n } => {
                write!(f, "edge ({}, {}) references a node outside [0, {})", edge.0, edge.1, n)
            }
            GraphError::DimensionMismatch { expected, actual, context } => {
                write!(f, "{context}: expected dimension {expected}, got {actual}")
            }
            GraphError::LabelOutOfRange { node, label, num_classes } => {
                write!(f, "label {label} at node {node} is outside [0, {num_classes})")
            }
            GraphError::InvalidLabels(msg) => write!(f, "invalid labels: {msg}"),
        }
    }
}

impl std::error::Error for GraphError {}

/// Compressed sparse row matrix with sorted column indices per row, giving a
/// deterministic accumulation order in products.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from COO triplets, sorting by (row, col) and summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut cur_row = 0usize;
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            while cur_row < r {
                cur_row += 1;
                row_ptr[cur_row] = col_idx.len();
            }
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        while cur_row < n_rows {
            cur_row += 1;
            row_ptr[cur_row] = col_idx.len();
        }
        CsrMatrix { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry lookup by binary search; O(log nnz(row)).
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(offset) => self.values[range.start + offset],
            Err(_) => 0.0,
        }
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row_entries(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    /// alpha·self + beta·I over the same pattern. Requires every diagonal
    /// entry to be structurally present, which holds for the operators built
    /// by [`Graph::from_edge_list`].
    pub fn scale_shift(&self, alpha: f64, beta: f64) -> CsrMatrix {
        assert_eq!(self.n_rows, self.n_cols);
        let mut out = self.clone();
        for r in 0..self.n_rows {
            let range = self.row_ptr[r]..self.row_ptr[r + 1];
            let diag = self.col_idx[range.clone()]
                .binary_search(&r)
                .expect("scale_shift requires an explicit diagonal");
            for (offset, v) in out.values[range.clone()].iter_mut().enumerate() {
                *v *= alpha;
                if offset == diag {
                    *v += beta;
                }
            }
        }
        out
    }
}

/// Sparse-dense product `matrix · dense`. Rows accumulate left to right in
/// column order, so results are bit-reproducible for a fixed build.
pub fn spmv(matrix: &CsrMatrix, dense: &DenseMatrix) -> Result<DenseMatrix, GraphError> {
    if matrix.n_cols != dense.rows() {
        return Err(GraphError::DimensionMismatch {
            expected: matrix.n_cols,
            actual: dense.rows(),
            context: "spmv: operator columns vs dense rows",
        });
    }
    let d = dense.cols();
    let mut out = DenseMatrix::zeros(matrix.n_rows, d);
    for r in 0..matrix.n_rows {
        let out_row = out.row_mut(r);
        for (c, v) in matrix.row_entries(r) {
            let src = dense.row(c);
            for (o, &x) in out_row.iter_mut().zip(src) {
                *o += v * x;
            }
        }
    }
    Ok(out)
}

/// Immutable undirected graph with its normalized spectral operators.
#[derive(Clone, Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: CsrMatrix,
    norm_adjacency: CsrMatrix,
    norm_laplacian: CsrMatrix,
}

impl Graph {
    /// Canonicalizes a raw undirected edge list: both orientations and
    /// duplicates collapse to one edge, self-loops are dropped, and the three
    /// operator matrices are materialized.
    pub fn from_edge_list(n: usize, raw_edges: &[(usize, usize)]) -> Result<Graph, GraphError> {
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(raw_edges.len());
        for &(u, v) in raw_edges {
            if u >= n || v >= n {
                return Err(GraphError::NodeOutOfRange { edge: (u, v), n });
            }
            if u == v {
                continue;
            }
            edges.push((u.min(v), u.max(v)));
        }
        edges.sort_unstable();
        edges.dedup();

        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }

        let mut adj_triplets = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in &edges {
            adj_triplets.push((u, v, 1.0));
            adj_triplets.push((v, u, 1.0));
        }
        let adjacency = CsrMatrix::from_triplets(n, n, adj_triplets);

        // Ã off-diagonal entries are computed once per unordered pair so both
        // halves carry identical bits; the diagonals of Ã and L̃ are paired so
        // adj + lap = 1 and 1 - lap = adj hold exactly.
        let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
        let mut adj_t = Vec::with_capacity(edges.len() * 2 + n);
        let mut lap_t = Vec::with_capacity(edges.len() * 2 + n);
        for i in 0..n {
            let raw = 1.0 / (degree[i] + 1) as f64;
            let lap_diag = 1.0 - raw;
            let adj_diag = 1.0 - lap_diag;
            adj_t.push((i, i, adj_diag));
            lap_t.push((i, i, lap_diag));
        }
        for &(u, v) in &edges {
            let w = inv_sqrt[u] * inv_sqrt[v];
            adj_t.push((u, v, w));
            adj_t.push((v, u, w));
            lap_t.push((u, v, -w));
            lap_t.push((v, u, -w));
        }
        let norm_adjacency = CsrMatrix::from_triplets(n, n, adj_t);
        let norm_laplacian = CsrMatrix::from_triplets(n, n, lap_t);

        Ok(Graph { n, edges, adjacency, norm_adjacency, norm_laplacian })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonical undirected edge set, each edge once with u < v.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn norm_adjacency(&self) -> &CsrMatrix {
        &self.norm_adjacency
    }

    pub fn norm_laplacian(&self) -> &CsrMatrix {
        &self.norm_laplacian
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency.row_ptr[v + 1] - self.adjacency.row_ptr[v]
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.row_entries(v).map(|(c, _)| c)
    }
}

/// Per-node integer class labels in [0, num_classes).
#[derive(Clone, Debug)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self, GraphError> {
        if num_classes < 2 {
            return Err(GraphError::InvalidLabels(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(GraphError::LabelOutOfRange { node, label, num_classes });
            }
        }
        Ok(LabelVector { labels, num_classes })
    }

    /// Infers the class count as max label + 1.
    pub fn infer(labels: Vec<usize>) -> Result<Self, GraphError> {
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
        LabelVector::new(labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Result of the node-homophily measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homophily {
    /// Average over non-isolated nodes of the same-label neighbor fraction.
    pub ratio: f64,
    /// Nodes with an empty neighborhood, excluded from the average because
    /// the per-node fraction is undefined there.
    pub excluded: usize,
}

/// Node homophily: the mean over nodes of the fraction of neighbors sharing
/// the node's label. Neighborhoods come from the raw adjacency (no self-loop).
/// If every node is isolated the ratio is reported as 0.0 with all nodes
/// excluded.
pub fn node_homophily(graph: &Graph, labels: &LabelVector) -> Result<Homophily, GraphError> {
    if labels.len() != graph.n() {
        return Err(GraphError::DimensionMismatch {
            expected: graph.n(),
            actual: labels.len(),
            context: "node_homophily: label count vs node count",
        });
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for v in 0..graph.n() {
        let deg = graph.degree(v);
        if deg == 0 {
            excluded += 1;
            continue;
        }
        let same = graph.neighbors(v).filter(|&u| labels.get(u) == labels.get(v)).count();
        total += same as f64 / deg as f64;
        counted += 1;
    }
    let ratio = if counted == 0 { 0.0 } else { total / counted as f64 };
    Ok(Homophily { ratio, excluded })
}
