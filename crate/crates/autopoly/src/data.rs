//! Dataset bundles, reproducible splits, and a synthetic stochastic block
//! model generator with controllable homophily.
//!
//! A bundle directory holds four files:
//!
//! ```text
//! edges.tsv      one edge per line, two whitespace-separated 0-based ids
//! features.csv   n lines, d comma-separated floats
//! labels.csv     n lines, one 0-based class id each
//! meta.json      optional: {"name": ..., "num_classes": ...}
//! ```
//!
//! `n` is inferred from labels.csv; everything else is validated against it.
//! Files are UTF-8 with LF or CRLF line endings.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError, LabelVector};
use crate::linalg::DenseMatrix;
use crate::rng::Rng;

const SPLIT_STREAM: u64 = 0x73_70_6c_74;
const SBM_EDGE_STREAM: u64 = 0x65_64_67_65;
const SBM_MEANS_STREAM: u64 = 0x6d_65_61_6e;
const SBM_NOISE_STREAM: u64 = 0x6e_6f_69_73;

#[derive(Debug)]
pub enum DataError {
    Io { path: PathBuf, source: std::io::Error },
    Parse { file: PathBuf, line: usize, message: String },
    Invalid(String),
    Graph(GraphError),
    EmptyMask(&'static str),
    ClassMissingFromTrain { class: usize },
    SbmClassIsolated { attempts: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            DataError::Parse { file, line, message } => {
                write!(f, "{}:{line}: {message}", file.display())
            }
            DataError::Invalid(msg) => write!(f, "{msg}"),
            DataError::Graph(e) => write!(f, "{e}"),
            DataError::EmptyMask(which) => write!(f, "{which} mask is empty"),
            DataError::ClassMissingFromTrain { class } => {
                write!(f, "class {class} has no training nodes; training would degenerate")
            }
            DataError::SbmClassIsolated { attempts } => {
                write!(f, "SBM left a class fully isolated after {attempts} attempts")
            }
        }
    }
}

impl std::error::Error for DataError {}

impl From<GraphError> for DataError {
    fn from(e: GraphError) -> Self {
        DataError::Graph(e)
    }
}

/// A dataset: graph, node features, labels and a name.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: LabelVector,
    pub name: String,
}

impl Bundle {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// Scales each feature row to unit L1 norm; all-zero rows are left alone.
    pub fn normalize_rows_l1(&mut self) {
        for r in 0..self.features.rows() {
            let row = self.features.row_mut(r);
            let norm: f64 = row.iter().map(|v| v.abs()).sum();
            if norm > 0.0 {
                for v in row {
                    *v /= norm;
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    num_classes: Option<usize>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .filter(|l| !l.trim().is_empty())
        .collect())
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<Bundle, DataError> {
    let labels_path = dir.join("labels.csv");
    let mut labels = Vec::new();
    for (i, line) in read_lines(&labels_path)?.iter().enumerate() {
        let label: usize = line.trim().parse().map_err(|_| DataError::Parse {
            file: labels_path.clone(),
            line: i + 1,
            message: format!("expected a class id, got '{line}'"),
        })?;
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(DataError::Invalid(format!("{}: no labels", labels_path.display())));
    }

    let meta_path = dir.join("meta.json");
    let meta: BundleMeta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path)
            .map_err(|source| DataError::Io { path: meta_path.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| DataError::Parse {
            file: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        BundleMeta { name: None, num_classes: None }
    };

    let num_classes = meta.num_classes.unwrap_or_else(|| labels.iter().max().unwrap() + 1).max(2);
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(DataError::Parse {
                file: labels_path.clone(),
                line: i + 1,
                message: format!("label {label} is outside the declared range [0, {num_classes})"),
            });
        }
    }
    let labels = LabelVector::new(labels, num_classes)?;

    let features_path = dir.join("features.csv");
    let feature_lines = read_lines(&features_path)?;
    if feature_lines.len() != n {
        return Err(DataError::Parse {
            file: features_path.clone(),
            line: feature_lines.len().min(n) + 1,
            message: format!("expected {n} feature rows, found {}", feature_lines.len()),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut dim = 0usize;
    for (i, line) in feature_lines.iter().enumerate() {
        let row: Result<Vec<f64>, _> =
            line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
        let row = row.map_err(|_| DataError::Parse {
            file: features_path.clone(),
            line: i + 1,
            message: format!("expected comma-separated floats, got '{line}'"),
        })?;
        if i == 0 {
            dim = row.len();
            if dim == 0 {
                return Err(DataError::Parse {
                    file: features_path.clone(),
                    line: 1,
                    message: "empty feature row".into(),
                });
            }
        } else if row.len() != dim {
            return Err(DataError::Parse {
                file: features_path.clone(),
                line: i + 1,
                message: format!("ragged row: expected {dim} values, got {}", row.len()),
            });
        }
        rows.push(row);
    }
    let features = DenseMatrix::from_rows(rows);

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (i, line) in read_lines(&edges_path)?.iter().enumerate() {
        let mut parts = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize, DataError> {
            tok.ok_or(())
                .and_then(|t| t.parse::<usize>().map_err(|_| ()))
                .map_err(|_| DataError::Parse {
                    file: edges_path.clone(),
                    line: i + 1,
                    message: format!("expected two node ids, got '{line}'"),
                })
        };
        let u = parse(parts.next())?;
        let v = parse(parts.next())?;
        if u >= n || v >= n {
            return Err(DataError::Parse {
                file: edges_path.clone(),
                line: i + 1,
                message: format!("edge ({u}, {v}) references a node outside [0, {n})"),
            });
        }
        edges.push((u, v));
    }
    let graph = Graph::from_edge_list(n, &edges)?;

    let name = meta.name.unwrap_or_else(|| {
        dir.file_name().map_or_else(|| "bundle".to_string(), |s| s.to_string_lossy().into_owned())
    });
    Ok(Bundle { graph, features, labels, name })
}

/// Writes a bundle as the four-file directory format accepted by
/// [`load_bundle`].
pub fn write_bundle(dir: &Path, bundle: &Bundle) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let write = |name: &str, contents: String| -> Result<(), DataError> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|source| DataError::Io { path, source })
    };

    let mut edges = String::new();
    for &(u, v) in bundle.graph.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write("edges.tsv", edges)?;

    let mut features = String::new();
    for r in 0..bundle.features.rows() {
        let row: Vec<String> = bundle.features.row(r).iter().map(|v| format!("{v}")).collect();
        features.push_str(&row.join(","));
        features.push('\n');
    }
    write("features.csv", features)?;

    let mut labels = String::new();
    for &l in bundle.labels.labels() {
        labels.push_str(&format!("{l}\n"));
    }
    write("labels.csv", labels)?;

    let meta = serde_json::json!({
        "name": bundle.name,
        "num_classes": bundle.num_classes(),
    });
    write("meta.json", format!("{}\n", serde_json::to_string_pretty(&meta).unwrap()))?;
    Ok(())
}

/// Disjoint train/validation/test node masks plus the seed that made them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Split {
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub seed: u64,
}

impl Split {
    pub fn n(&self) -> usize {
        self.train_mask.len()
    }

    pub fn train_count(&self) -> usize {
        self.train_mask.iter().filter(|&&b| b).count()
    }

    pub fn val_count(&self) -> usize {
        self.val_mask.iter().filter(|&&b| b).count()
    }

    pub fn test_count(&self) -> usize {
        self.test_mask.iter().filter(|&&b| b).count()
    }

    /// Rejects splits where some class present in the labels has no training
    /// node. No stratification is applied; degenerate draws are surfaced
    /// rather than repaired.
    pub fn validate_classes(&self, labels: &LabelVector) -> Result<(), DataError> {
        let mut present = vec![false; labels.num_classes()];
        let mut in_train = vec![false; labels.num_classes()];
        for (v, &is_train) in self.train_mask.iter().enumerate() {
            present[labels.get(v)] = true;
            if is_train {
                in_train[labels.get(v)] = true;
            }
        }
        for class in 0..labels.num_classes() {
            if present[class] && !in_train[class] {
                return Err(DataError::ClassMissingFromTrain { class });
            }
        }
        Ok(())
    }
}

/// Random node split by a seeded shuffle. Ratios must each lie in (0, 1);
/// when they sum above 1 the test ratio is clipped to the remainder (the
/// supervised-protocol repair), and sizes follow floor arithmetic. The same
/// seed yields the same masks on every platform.
pub fn random_split(
    n: usize,
    train_ratio: f64,
    val_ratio: f64,
    test_ratio: f64,
    seed: u64,
) -> Result<Split, DataError> {
    for (name, r) in [("train", train_ratio), ("val", val_ratio), ("test", test_ratio)] {
        if !(r > 0.0 && r < 1.0) {
            return Err(DataError::Invalid(format!("{name} ratio must lie in (0, 1), got {r}")));
        }
    }
    let mut test_ratio = test_ratio;
    if train_ratio + val_ratio + test_ratio > 1.0 + 1e-12 {
        test_ratio = 1.0 - train_ratio - val_ratio;
        if test_ratio <= 0.0 {
            return Err(DataError::Invalid(format!(
                "train + val ratios leave no room for test ({train_ratio} + {val_ratio})"
            )));
        }
    }

    let train_size = (train_ratio * n as f64).floor() as usize;
    let val_size = (val_ratio * n as f64).floor() as usize;
    let test_size = (test_ratio * n as f64).floor() as usize;
    if train_size == 0 || val_size == 0 || test_size == 0 {
        return Err(DataError::EmptyMask(if train_size == 0 {
            "train"
        } else if val_size == 0 {
            "val"
        } else {
            "test"
        }));
    }

    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = Rng::derive(seed, SPLIT_STREAM);
    rng.shuffle(&mut ids);

    let mut train_mask = vec![false; n];
    let mut val_mask = vec![false; n];
    let mut test_mask = vec![false; n];
    for &v in &ids[..train_size] {
        train_mask[v] = true;
    }
    for &v in &ids[train_size..train_size + val_size] {
        val_mask[v] = true;
    }
    for &v in &ids[train_size + val_size..train_size + val_size + test_size] {
        test_mask[v] = true;
    }
    Ok(Split { train_mask, val_mask, test_mask, seed })
}

/// Parameters of the stochastic block model generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SbmParams {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian feature noise around class means.
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmParams {
    fn validate(&self) -> Result<(), DataError> {
        if self.classes < 2 {
            return Err(DataError::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.nodes == 0 || self.nodes % self.classes != 0 {
            return Err(DataError::Invalid(format!(
                "node count {} must be a positive multiple of the class count {}",
                self.nodes, self.classes
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.feature_dim == 0 {
            return Err(DataError::Invalid("feature_dim must be at least 1".into()));
        }
        if self.feature_noise < 0.0 {
            return Err(DataError::Invalid("feature_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn bundle_name(&self) -> String {
        format!(
            "sbm_n{}_c{}_pin{}_pout{}_s{}",
            self.nodes, self.classes, self.p_in, self.p_out, self.seed
        )
    }
}

/// Near-orthogonal unit class means, a deterministic function of
/// (seed, classes, feature_dim): Gaussian draws passed through Gram-Schmidt
/// where the dimension allows, plain normalization otherwise.
fn class_means(seed: u64, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = Rng::derive(seed, SBM_MEANS_STREAM);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
            if means.len() < dim {
                for prev in &means {
                    let proj: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (x, p) in v.iter_mut().zip(prev) {
                        *x -= proj * p;
                    }
                }
            }
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                for x in &mut v {
                    *x /= norm;
                }
                means.push(v);
                break;
            }
        }
    }
    means
}

/// Samples an SBM bundle: equal-size blocks, Bernoulli edges with p_in within
/// a block and p_out across blocks, features = class mean + noise·N(0, I).
/// A draw that leaves an entire class isolated is retried with an
/// incremented sub-seed, at most 10 times.
pub fn sbm_generate(params: &SbmParams) -> Result<Bundle, DataError> {
    params.validate()?;
    let n = params.nodes;
    let classes = params.classes;
    let block = n / classes;
    let labels_raw: Vec<usize> = (0..n).map(|v| v / block).collect();

    const MAX_ATTEMPTS: u64 = 10;
    let mut graph = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = Rng::derive(params.seed.wrapping_add(attempt), SBM_EDGE_STREAM);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                let p = if labels_raw[u] == labels_raw[v] { params.p_in } else { params.p_out };
                if p > 0.0 && rng.next_f64() < p {
                    edges.push((u, v));
                }
            }
        }
        let candidate = Graph::from_edge_list(n, &edges)?;
        let mut class_connected = vec![false; classes];
        for v in 0..n {
            if candidate.degree(v) > 0 {
                class_connected[labels_raw[v]] = true;
            }
        }
        if class_connected.iter().all(|&c| c) {
            graph = Some(candidate);
            break;
        }
    }
    let graph = graph.ok_or(DataError::SbmClassIsolated { attempts: MAX_ATTEMPTS as usize })?;

    let means = class_means(params.seed, classes, params.feature_dim);
    let mut noise_rng = Rng::derive(params.seed, SBM_NOISE_STREAM);
    let mut rows = Vec::with_capacity(n);
    for &label in &labels_raw {
        let row: Vec<f64> = means[label]
            .iter()
            .map(|&m| m + params.feature_noise * noise_rng.next_gaussian())
            .collect();
        rows.push(row);
    }

    Ok(Bundle {
        graph,
        features: DenseMatrix::from_rows(rows),
        labels: LabelVector::new(labels_raw, classes)?,
        name: params.bundle_name(),
    })
}
