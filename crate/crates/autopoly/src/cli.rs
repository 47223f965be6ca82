//! Experiment harness behind the `autopoly` binary: TOML configuration with
//! `--set` overrides, multi-seed orchestration, mean±std summaries, and the
//! on-disk artifacts (summary.csv, per-seed reports, curves.csv, checkpoints,
//! grid audit tables, spectrum exports).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{load_bundle, random_split, sbm_generate, write_bundle, Bundle, SbmParams};
use crate::filter::{init_coefficients, spectral_response, Basis, FilterSpec, InitStrategy, SpectralResponse};
use crate::graph::node_homophily;
use crate::model::ModelState;
use crate::train::{
    grid_search, peak_memory_bytes, train_auto, train_frozen, train_joint, GridOptions, GridRow,
    MetaConfig, TrainError, TrainOptions, TrainReport,
};

pub const SUMMARY_HEADER: &str =
    "regime,dataset,seed_count,mean_acc,std_acc,mean_epoch_sec,peak_mem_bytes";
pub const CURVES_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc,test_acc";
pub const THREADS_ENV: &str = "AUTOPOLY_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Unparseable or invalid configuration, unreadable inputs. Exit code 2.
    Config(String),
    /// Numeric failure that prevented any result. Exit code 3.
    Numeric(String),
    /// A guard refused the request (grid too large, oracle too big). Exit 4.
    Guard(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            CliError::Guard(msg) => write!(f, "refused: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Guard(_) => 4,
        }
    }
}

fn config_io<E: fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{}: {e}", path.display()))
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::GridTooLarge { .. } => CliError::Guard(e.to_string()),
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

/// Training regime selected by a config file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    Joint,
    Auto,
    Grid,
    MlpBaseline,
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegimeKind::Joint => write!(f, "joint"),
            RegimeKind::Auto => write!(f, "auto"),
            RegimeKind::Grid => write!(f, "grid"),
            RegimeKind::MlpBaseline => write!(f, "mlp-baseline"),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub bundle_dir: Option<PathBuf>,
    #[serde(default)]
    pub sbm: Option<SbmParams>,
    #[serde(default)]
    pub row_l1_normalize: bool,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// "semi-supervised" (10/10/80) or "supervised" (48/32/20) preset.
    #[serde(default)]
    pub protocol: Option<String>,
    #[serde(default)]
    pub train: Option<f64>,
    #[serde(default)]
    pub val: Option<f64>,
    #[serde(default)]
    pub test: Option<f64>,
}

impl SplitSection {
    pub fn resolve(&self) -> Result<(f64, f64, f64), CliError> {
        let preset = match self.protocol.as_deref() {
            None => None,
            Some("semi-supervised") => Some((0.10, 0.10, 0.80)),
            Some("supervised") => Some((0.48, 0.32, 0.20)),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "split.protocol: unknown protocol '{other}' (semi-supervised|supervised)"
                )))
            }
        };
        match (preset, self.train, self.val, self.test) {
            (Some(p), None, None, None) => Ok(p),
            (None, Some(t), Some(v), Some(s)) => Ok((t, v, s)),
            (None, None, None, None) => Ok((0.10, 0.10, 0.80)),
            (Some(_), _, _, _) => Err(CliError::Config(
                "split: give either a protocol or explicit ratios, not both".into(),
            )),
            _ => Err(CliError::Config(
                "split: train, val and test ratios must be given together".into(),
            )),
        }
    }
}

fn default_hidden() -> usize {
    64
}

fn default_dropout() -> f64 {
    0.5
}

fn default_basis() -> String {
    "monomial".into()
}

fn default_order() -> usize {
    10
}

fn default_init() -> String {
    "random-uniform".into()
}

fn default_ppr_alpha() -> f64 {
    0.1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_basis")]
    pub basis: String,
    #[serde(default = "default_order")]
    pub order: usize,
    /// "random-uniform", "delta0" or "ppr".
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default = "default_ppr_alpha")]
    pub ppr_alpha: f64,
    #[serde(default)]
    pub lambda_max: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden: default_hidden(),
            dropout: default_dropout(),
            basis: default_basis(),
            order: default_order(),
            init: default_init(),
            ppr_alpha: default_ppr_alpha(),
            lambda_max: None,
        }
    }
}

impl ModelSection {
    pub fn basis(&self) -> Result<Basis, CliError> {
        self.basis.parse().map_err(|e| CliError::Config(format!("model.basis: {e}")))
    }

    pub fn init_strategy(&self) -> Result<InitStrategy, CliError> {
        match self.init.as_str() {
            "random-uniform" | "random" => Ok(InitStrategy::RandomUniform),
            "delta0" => Ok(InitStrategy::Delta0),
            "ppr" => Ok(InitStrategy::Ppr(self.ppr_alpha)),
            other => Err(CliError::Config(format!(
                "model.init: unknown strategy '{other}' (random-uniform|delta0|ppr)"
            ))),
        }
    }

    fn filter_for_seed(&self, seed: u64) -> Result<FilterSpec, CliError> {
        let theta = init_coefficients(self.init_strategy()?, self.order, seed)
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        let spec = FilterSpec::new(self.basis()?, theta)
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        match self.lambda_max {
            Some(lm) => {
                spec.with_lambda_max(lm).map_err(|e| CliError::Config(format!("model.lambda_max: {e}")))
            }
            None => Ok(spec),
        }
    }
}

fn default_lr() -> f64 {
    0.05
}

fn default_weight_decay() -> f64 {
    0.0005
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection { lr: default_lr(), weight_decay: default_weight_decay() }
    }
}

fn default_max_epochs() -> usize {
    1000
}

fn default_patience() -> usize {
    200
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection { max_epochs: default_max_epochs(), patience: default_patience() }
    }
}

fn default_xi() -> f64 {
    0.05
}

fn default_eta0() -> f64 {
    0.01
}

fn default_freq() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaSection {
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_freq")]
    pub freq: usize,
    #[serde(default)]
    pub theta_weight_decay: f64,
    #[serde(default)]
    pub adam_on_theta: bool,
}

impl Default for MetaSection {
    fn default() -> Self {
        MetaSection {
            xi: default_xi(),
            eta0: default_eta0(),
            freq: default_freq(),
            theta_weight_decay: 0.0,
            adam_on_theta: false,
        }
    }
}

impl MetaSection {
    pub fn to_meta_config(&self, eta1: f64) -> MetaConfig {
        MetaConfig {
            xi: self.xi,
            eta0: self.eta0,
            eta1,
            freq: self.freq,
            theta_weight_decay: self.theta_weight_decay,
            adam_on_theta: self.adam_on_theta,
            ..MetaConfig::default()
        }
    }
}

fn default_grid_values() -> Vec<f64> {
    vec![-0.9, -0.5, -0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2, 0.5, 0.9]
}

fn default_grid_order() -> usize {
    2
}

fn default_grid_epochs() -> usize {
    200
}

fn default_grid_patience() -> usize {
    50
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_grid_values")]
    pub values: Vec<f64>,
    #[serde(default = "default_grid_order")]
    pub order: usize,
    #[serde(default = "default_grid_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_grid_patience")]
    pub patience: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            values: default_grid_values(),
            order: default_grid_order(),
            max_epochs: default_grid_epochs(),
            patience: default_grid_patience(),
        }
    }
}

fn default_measure() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// When false, the timing and memory columns of summary.csv are written
    /// as zeros so the file is byte-reproducible across runs.
    #[serde(default = "default_measure")]
    pub measure: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { measure: default_measure() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub regime: RegimeKind,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub meta: MetaSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub report: ReportSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds: the seed list must be non-empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(CliError::Config(
                "seeds: duplicate seeds would overwrite each other's artifacts".into(),
            ));
        }
        match (&self.data.bundle_dir, &self.data.sbm) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "data: give either bundle_dir or an [data.sbm] table, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "data: one of bundle_dir or [data.sbm] is required".into(),
                ))
            }
            _ => {}
        }
        self.split.resolve()?;
        self.model.basis()?;
        self.model.init_strategy()?;
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(CliError::Config(format!(
                "model.dropout: must lie in [0, 1), got {}",
                self.model.dropout
            )));
        }
        if self.optimizer.lr <= 0.0 {
            return Err(CliError::Config(format!(
                "optimizer.lr: must be positive, got {}",
                self.optimizer.lr
            )));
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        if let Ok(text) = std::env::var(THREADS_ENV) {
            if let Ok(n) = text.trim().parse::<usize>() {
                if n >= 1 {
                    return n;
                }
            }
        }
        self.workers.unwrap_or(1).max(1)
    }
}

/// Parses a config file and applies `--set key=value` overrides (dotted
/// paths) before deserialization.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(config_io(path))?;
    let mut value: toml::Value = text.parse().map_err(config_io(path))?;
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    let config: ExperimentConfig =
        value.try_into().map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn apply_override(root: &mut toml::Value, entry: &str) -> Result<(), CliError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{entry}'")))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: '{part}' is not a table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("--set {key}: parent is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn load_data(config: &ExperimentConfig) -> Result<Bundle, CliError> {
    let mut bundle = if let Some(dir) = &config.data.bundle_dir {
        load_bundle(dir).map_err(|e| CliError::Config(e.to_string()))?
    } else {
        let params = config.data.sbm.as_ref().expect("validated");
        sbm_generate(params).map_err(|e| CliError::Config(e.to_string()))?
    };
    if config.data.row_l1_normalize {
        bundle.normalize_rows_l1();
    }
    Ok(bundle)
}

/// One row of the experiment summary.
#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub regime: String,
    pub dataset: String,
    pub seed_count: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    /// Zero when only one seed succeeded; see `std_flagged`.
    pub std_flagged: bool,
    pub mean_epoch_sec: f64,
    pub peak_mem_bytes: u64,
    pub per_seed_acc: Vec<f64>,
    pub failed_seeds: Vec<u64>,
}

impl SummaryRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{}",
            self.regime,
            self.dataset,
            self.seed_count,
            self.mean_acc,
            self.std_acc,
            self.mean_epoch_sec,
            self.peak_mem_bytes
        )
    }
}

/// Sample standard deviation (n−1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

enum SeedOutput {
    Train(Box<TrainReport>),
    Grid { best: GridRow, best_index: usize, candidates: usize, wall_clock_sec: f64 },
}

/// Split description embedded in every per-seed report so a run's protocol
/// is auditable from the artifact alone.
#[derive(Clone, Debug, Serialize)]
pub struct SplitInfo {
    pub seed: u64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
}

struct SeedRun {
    seed: u64,
    split: Option<SplitInfo>,
    output: Result<SeedOutput, String>,
    checkpoint: Option<String>,
}

#[derive(Serialize)]
struct TrainSeedReport<'a> {
    seed: u64,
    split: &'a SplitInfo,
    report: &'a TrainReport,
}

#[derive(Serialize)]
struct GridSeedReport<'a> {
    seed: u64,
    split: &'a SplitInfo,
    best: &'a GridRow,
    best_index: usize,
    candidates: usize,
    wall_clock_sec: f64,
}

fn run_one_seed(config: &ExperimentConfig, bundle: &Bundle, seed: u64, workers: usize) -> SeedRun {
    let mut split_info = None;
    let result = (|| -> Result<(SeedOutput, Option<String>), String> {
        let (train_r, val_r, test_r) = config.split.resolve().map_err(|e| e.to_string())?;
        let split =
            random_split(bundle.n(), train_r, val_r, test_r, seed).map_err(|e| e.to_string())?;
        split_info = Some(SplitInfo {
            seed,
            train_ratio: train_r,
            val_ratio: val_r,
            test_ratio: test_r,
            train_count: split.train_count(),
            val_count: split.val_count(),
            test_count: split.test_count(),
        });
        split.validate_classes(&bundle.labels).map_err(|e| e.to_string())?;

        let opts = TrainOptions {
            weight_decay: config.optimizer.weight_decay,
            max_epochs: config.training.max_epochs,
            patience: config.training.patience,
            dropout_stream: seed,
        };

        let build_model = |filter: FilterSpec| -> Result<ModelState, String> {
            ModelState::init(
                bundle.feature_dim(),
                config.model.hidden,
                bundle.num_classes(),
                config.model.dropout,
                filter,
                seed,
            )
            .map_err(|e| e.to_string())
        };

        match config.regime {
            RegimeKind::Joint => {
                let filter = config.model.filter_for_seed(seed).map_err(|e| e.to_string())?;
                let outcome =
                    train_joint(bundle, &split, build_model(filter)?, config.optimizer.lr, &opts)
                        .map_err(|e| e.to_string())?;
                if let Some(failure) = &outcome.report.failure {
                    return Err(failure.clone());
                }
                let ckpt = outcome.model.to_checkpoint_json();
                Ok((SeedOutput::Train(Box::new(outcome.report)), Some(ckpt)))
            }
            RegimeKind::Auto => {
                let filter = config.model.filter_for_seed(seed).map_err(|e| e.to_string())?;
                let meta = config.meta.to_meta_config(config.optimizer.lr);
                let outcome = train_auto(bundle, &split, build_model(filter)?, &meta, &opts)
                    .map_err(|e| e.to_string())?;
                if let Some(failure) = &outcome.report.failure {
                    return Err(failure.clone());
                }
                let ckpt = outcome.model.to_checkpoint_json();
                Ok((SeedOutput::Train(Box::new(outcome.report)), Some(ckpt)))
            }
            RegimeKind::MlpBaseline => {
                // monomial delta0 keeps the propagation an identity: pure MLP
                let mut theta = vec![0.0; config.model.order + 1];
                theta[0] = 1.0;
                let filter = FilterSpec::new(Basis::Monomial, theta).map_err(|e| e.to_string())?;
                let outcome =
                    train_frozen(bundle, &split, build_model(filter)?, config.optimizer.lr, &opts)
                        .map_err(|e| e.to_string())?;
                if let Some(failure) = &outcome.report.failure {
                    return Err(failure.clone());
                }
                let ckpt = outcome.model.to_checkpoint_json();
                Ok((SeedOutput::Train(Box::new(outcome.report)), Some(ckpt)))
            }
            RegimeKind::Grid => {
                let start = Instant::now();
                let basis = config.model.basis().map_err(|e| e.to_string())?;
                let lambda_max = config.model.lambda_max;
                let build = |theta: Vec<f64>| -> Result<ModelState, crate::model::ModelError> {
                    let mut spec = FilterSpec::new(basis, theta)
                        .map_err(crate::model::ModelError::Filter)?;
                    if let Some(lm) = lambda_max {
                        spec = spec.with_lambda_max(lm).map_err(crate::model::ModelError::Filter)?;
                    }
                    ModelState::init(
                        bundle.feature_dim(),
                        config.model.hidden,
                        bundle.num_classes(),
                        config.model.dropout,
                        spec,
                        seed,
                    )
                };
                let grid_opts = GridOptions {
                    lr: config.optimizer.lr,
                    weight_decay: config.optimizer.weight_decay,
                    max_epochs: config.grid.max_epochs,
                    patience: config.grid.patience,
                    dropout_stream: seed,
                    workers,
                    ..GridOptions::default()
                };
                let result = grid_search(
                    bundle,
                    &split,
                    build,
                    &config.grid.values,
                    config.grid.order,
                    &grid_opts,
                )
                .map_err(|e| e.to_string())?;
                Ok((
                    SeedOutput::Grid {
                        best: result.best,
                        best_index: result.best_index,
                        candidates: result.rows.len(),
                        wall_clock_sec: start.elapsed().as_secs_f64(),
                    },
                    None,
                ))
            }
        }
    })();

    match result {
        Ok((output, checkpoint)) => {
            SeedRun { seed, split: split_info, output: Ok(output), checkpoint }
        }
        Err(msg) => SeedRun { seed, split: split_info, output: Err(msg), checkpoint: None },
    }
}

fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn curves_csv(report: &TrainReport) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    let c = &report.curves;
    for i in 0..c.len() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            i + 1,
            c.train_loss[i],
            c.val_loss[i],
            c.train_acc[i],
            c.val_acc[i],
            c.test_acc[i]
        ));
    }
    out
}

/// Runs every seed of the configured experiment, writes the artifacts, and
/// returns the summary row. Seeds that fail numerically are excluded from
/// the statistics and listed in the row with a warning on stderr.
pub fn cmd_run(config: &ExperimentConfig) -> Result<SummaryRow, CliError> {
    config.validate()?;
    let bundle = load_data(config)?;
    let dataset = config.name.clone().unwrap_or_else(|| bundle.name.clone());
    let workers = config.workers();

    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.output_dir.display())))?;

    // grid regime parallelizes inside the search; seed-level jobs otherwise
    let (seed_workers, inner_workers) = match config.regime {
        RegimeKind::Grid => (1usize, workers),
        _ => (workers, 1usize),
    };

    let runs: Vec<SeedRun> = if seed_workers <= 1 {
        config.seeds.iter().map(|&s| run_one_seed(config, &bundle, s, inner_workers)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<SeedRun>>> =
            Mutex::new((0..config.seeds.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..seed_workers.min(config.seeds.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= config.seeds.len() {
                        break;
                    }
                    let run = run_one_seed(config, &bundle, config.seeds[i], inner_workers);
                    slots.lock().unwrap()[i] = Some(run);
                });
            }
        });
        slots.into_inner().unwrap().into_iter().map(|r| r.expect("all seeds visited")).collect()
    };

    let mut per_seed_acc = Vec::new();
    let mut mean_epoch_secs = Vec::new();
    let mut peak_mem = 0u64;
    let mut failed_seeds = Vec::new();
    let mut first_curves_written = false;

    for (i, run) in runs.iter().enumerate() {
        match &run.output {
            Ok(SeedOutput::Train(report)) => {
                per_seed_acc.push(report.test_acc_at_best);
                mean_epoch_secs.push(report.mean_epoch_sec());
                peak_mem = peak_mem.max(report.peak_mem_bytes);
                let split = run.split.as_ref().expect("successful runs carry their split");
                let wrapper =
                    TrainSeedReport { seed: run.seed, split, report: report.as_ref() };
                let json = serde_json::to_string_pretty(&wrapper).expect("serializable");
                write_text(&config.output_dir.join(format!("report-seed{}.json", run.seed)), &json)?;
                if let Some(ckpt) = &run.checkpoint {
                    write_text(
                        &config.output_dir.join(format!("checkpoint-seed{}.json", run.seed)),
                        ckpt,
                    )?;
                }
                if !first_curves_written
                    && matches!(config.regime, RegimeKind::Joint | RegimeKind::Auto)
                {
                    write_text(&config.output_dir.join("curves.csv"), &curves_csv(report))?;
                    first_curves_written = true;
                }
            }
            Ok(SeedOutput::Grid { best, best_index, candidates, wall_clock_sec }) => {
                per_seed_acc.push(best.test_acc);
                mean_epoch_secs.push(*wall_clock_sec);
                peak_mem = peak_mem.max(peak_memory_bytes());
                let split = run.split.as_ref().expect("successful runs carry their split");
                let report = GridSeedReport {
                    seed: run.seed,
                    split,
                    best,
                    best_index: *best_index,
                    candidates: *candidates,
                    wall_clock_sec: *wall_clock_sec,
                };
                let json = serde_json::to_string_pretty(&report).expect("serializable");
                write_text(&config.output_dir.join(format!("report-seed{}.json", run.seed)), &json)?;
            }
            Err(msg) => {
                eprintln!("warning: seed {} failed and is excluded from stats: {msg}", run.seed);
                failed_seeds.push(run.seed);
                let split = run
                    .split
                    .as_ref()
                    .map(|s| serde_json::to_value(s).expect("serializable"))
                    .unwrap_or(serde_json::Value::Null);
                write_text(
                    &config.output_dir.join(format!("report-seed{}.json", run.seed)),
                    &serde_json::to_string_pretty(&serde_json::json!({
                        "seed": run.seed,
                        "split": split,
                        "failure": msg,
                    }))
                    .expect("serializable"),
                )?;
            }
        }
        let _ = i;
    }

    if per_seed_acc.is_empty() {
        return Err(CliError::Numeric("every seed failed; no statistics to report".into()));
    }

    let mean_acc = per_seed_acc.iter().sum::<f64>() / per_seed_acc.len() as f64;
    let std_acc = sample_std(&per_seed_acc);
    let std_flagged = per_seed_acc.len() < 2;
    if std_flagged {
        eprintln!("warning: std reported as 0 (fewer than 2 successful seeds)");
    }
    let mean_epoch_sec = mean_epoch_secs.iter().sum::<f64>() / mean_epoch_secs.len() as f64;

    let (reported_epoch_sec, reported_peak) =
        if config.report.measure { (mean_epoch_sec, peak_mem) } else { (0.0, 0) };

    let row = SummaryRow {
        regime: config.regime.to_string(),
        dataset,
        seed_count: per_seed_acc.len(),
        mean_acc,
        std_acc,
        std_flagged,
        mean_epoch_sec: reported_epoch_sec,
        peak_mem_bytes: reported_peak,
        per_seed_acc,
        failed_seeds,
    };

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    summary.push_str(&row.csv_line());
    summary.push('\n');
    write_text(&config.output_dir.join("summary.csv"), &summary)?;
    Ok(row)
}

/// Homophily of a bundle directory, as printed by `autopoly homophily`.
#[derive(Clone, Debug, Serialize)]
pub struct HomophilyOutput {
    pub dataset: String,
    pub homophily: f64,
    pub excluded_isolated: usize,
}

pub fn cmd_homophily(dir: &Path) -> Result<HomophilyOutput, CliError> {
    let bundle = load_bundle(dir).map_err(|e| CliError::Config(e.to_string()))?;
    let h = node_homophily(&bundle.graph, &bundle.labels)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok(HomophilyOutput {
        dataset: bundle.name,
        homophily: h.ratio,
        excluded_isolated: h.excluded,
    })
}

/// Evaluates the checkpointed filter's spectral response on a uniform grid
/// and renders the `lambda,response` CSV.
pub fn cmd_spectrum(checkpoint: &Path, grid_size: usize) -> Result<String, CliError> {
    if grid_size < 2 {
        return Err(CliError::Config(format!("grid size must be at least 2, got {grid_size}")));
    }
    let state = ModelState::load_checkpoint(checkpoint).map_err(|e| match e {
        crate::model::ModelError::CheckpointVersion { .. } => CliError::Config(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let grid = SpectralResponse::uniform_grid(grid_size);
    let response = spectral_response(state.filter(), &grid)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok(spectrum_csv(&response))
}

pub fn spectrum_csv(response: &SpectralResponse) -> String {
    let mut out = String::from("lambda,response\n");
    for (l, v) in response.lambdas.iter().zip(&response.values) {
        out.push_str(&format!("{l},{v}\n"));
    }
    out
}

/// Single-split brute-force search (first seed of the config): writes the
/// full audit table and the best-Θ JSON, returns the best row.
pub fn cmd_grid(config: &ExperimentConfig) -> Result<GridRow, CliError> {
    config.validate()?;
    if config.regime != RegimeKind::Grid {
        return Err(CliError::Config(format!(
            "regime: the grid command needs regime = \"grid\", got '{}'",
            config.regime
        )));
    }
    let bundle = load_data(config)?;
    let seed = config.seeds[0];
    let (train_r, val_r, test_r) = config.split.resolve()?;
    let split = random_split(bundle.n(), train_r, val_r, test_r, seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    split.validate_classes(&bundle.labels).map_err(|e| CliError::Config(e.to_string()))?;

    let basis = config.model.basis()?;
    let lambda_max = config.model.lambda_max;
    let build = |theta: Vec<f64>| -> Result<ModelState, crate::model::ModelError> {
        let mut spec = FilterSpec::new(basis, theta).map_err(crate::model::ModelError::Filter)?;
        if let Some(lm) = lambda_max {
            spec = spec.with_lambda_max(lm).map_err(crate::model::ModelError::Filter)?;
        }
        ModelState::init(
            bundle.feature_dim(),
            config.model.hidden,
            bundle.num_classes(),
            config.model.dropout,
            spec,
            seed,
        )
    };
    let grid_opts = GridOptions {
        lr: config.optimizer.lr,
        weight_decay: config.optimizer.weight_decay,
        max_epochs: config.grid.max_epochs,
        patience: config.grid.patience,
        dropout_stream: seed,
        workers: config.workers(),
        ..GridOptions::default()
    };
    let result =
        grid_search(&bundle, &split, build, &config.grid.values, config.grid.order, &grid_opts)?;

    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", config.output_dir.display())))?;

    let mut table = String::new();
    let headers: Vec<String> = (0..=config.grid.order).map(|k| format!("theta_{k}")).collect();
    table.push_str(&headers.join(","));
    table.push_str(",val_acc,test_acc\n");
    for row in &result.rows {
        let coeffs: Vec<String> = row.theta.iter().map(|t| format!("{t}")).collect();
        table.push_str(&format!("{},{:.6},{:.6}\n", coeffs.join(","), row.val_acc, row.test_acc));
    }
    write_text(&config.output_dir.join("grid_table.csv"), &table)?;

    let best_json = serde_json::json!({
        "seed": seed,
        "best_index": result.best_index,
        "theta": result.best.theta,
        "val_acc": result.best.val_acc,
        "test_acc": result.best.test_acc,
        "candidates": result.rows.len(),
    });
    write_text(
        &config.output_dir.join("best_theta.json"),
        &serde_json::to_string_pretty(&best_json).expect("serializable"),
    )?;
    Ok(result.best)
}

/// Materializes a synthetic bundle directory from an SBM parameter file.
pub fn cmd_sbm(params_path: &Path, out_dir: &Path) -> Result<Bundle, CliError> {
    let text = fs::read_to_string(params_path).map_err(config_io(params_path))?;
    let params: SbmParams = toml::from_str(&text).map_err(config_io(params_path))?;
    let bundle = sbm_generate(&params).map_err(|e| CliError::Config(e.to_string()))?;
    write_bundle(out_dir, &bundle).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(bundle)
}
