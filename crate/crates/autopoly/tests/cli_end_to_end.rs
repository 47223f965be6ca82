//! End-to-end checks of the `autopoly` binary and the harness functions:
//! artifact layout, output formats, exit codes, determinism of the pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use autopoly::cli::{cmd_homophily, cmd_run, cmd_spectrum, load_config, CURVES_HEADER, SUMMARY_HEADER};
use autopoly::filter::{Basis, FilterSpec};
use autopoly::model::ModelState;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_autopoly"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

fn toy_joint_config(out_dir: &Path) -> String {
    format!(
        r#"
regime = "joint"
output_dir = "{}"
seeds = [0, 1]

[data]
bundle_dir = "{}"

[split]
train = 0.3333333333333333
val = 0.3333333333333333
test = 0.3333333333333333

[model]
hidden = 4
dropout = 0.0
order = 2

[training]
max_epochs = 8
patience = 8

[report]
measure = false
"#,
        out_dir.display(),
        fixture("toy3").display()
    )
}

#[test]
fn toy_fixture_loads_with_expected_shape() {
    let bundle = autopoly::load_bundle(&fixture("toy3")).unwrap();
    assert_eq!(bundle.n(), 3);
    assert_eq!(bundle.feature_dim(), 2);
    assert_eq!(bundle.num_classes(), 2);
    assert_eq!(bundle.name, "toy3");
    assert_eq!(bundle.graph.edges(), &[(0, 1), (1, 2)]);
}

#[test]
fn loader_reports_out_of_range_label_with_line() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["edges.tsv", "features.csv", "labels.csv", "meta.json"] {
        fs::copy(fixture("toy3").join(f), dir.path().join(f)).unwrap();
    }
    fs::write(dir.path().join("labels.csv"), "0\n9\n1\n").unwrap();
    fs::write(dir.path().join("meta.json"), r#"{"name": "bad", "num_classes": 5}"#).unwrap();
    let err = autopoly::load_bundle(dir.path()).unwrap_err().to_string();
    assert!(err.contains("labels.csv:2"), "{err}");
    assert!(err.contains('9'), "{err}");
}

#[test]
fn loader_reports_ragged_feature_rows() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["edges.tsv", "labels.csv", "meta.json"] {
        fs::copy(fixture("toy3").join(f), dir.path().join(f)).unwrap();
    }
    fs::write(dir.path().join("features.csv"), "1.0,2.0\n1.0\n0.0,1.0\n").unwrap();
    let err = autopoly::load_bundle(dir.path()).unwrap_err().to_string();
    assert!(err.contains("features.csv:2"), "{err}");
    assert!(err.contains("ragged"), "{err}");
}

#[test]
fn run_smoke_writes_all_artifacts() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let config_path = write_config(work.path(), &toy_joint_config(&out));
    let config = load_config(&config_path, &[]).unwrap();
    let row = cmd_run(&config).unwrap();
    assert_eq!(row.seed_count, 2);

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next().unwrap(), SUMMARY_HEADER);
    let data_line = lines.next().unwrap();
    assert!(data_line.starts_with("joint,toy3,2,"), "{data_line}");
    assert!(lines.next().is_none());

    for seed in [0, 1] {
        assert!(out.join(format!("report-seed{seed}.json")).exists());
        assert!(out.join(format!("checkpoint-seed{seed}.json")).exists());
    }
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), CURVES_HEADER);
    // header plus one row per executed epoch
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report-seed0.json")).unwrap()).unwrap();
    let epochs_run = report["report"]["epochs_run"].as_u64().unwrap() as usize;
    assert_eq!(curves.lines().count(), epochs_run + 1);
    // the split protocol is auditable from the artifact
    assert_eq!(report["split"]["train_count"], 1);
    assert_eq!(report["split"]["val_count"], 1);
    assert_eq!(report["split"]["test_count"], 1);
}

#[test]
fn identical_configs_give_byte_identical_summaries() {
    let work = tempfile::tempdir().unwrap();
    let out_a = work.path().join("a");
    let out_b = work.path().join("b");
    let config_a = write_config(work.path(), &toy_joint_config(&out_a));
    let row_a = cmd_run(&load_config(&config_a, &[]).unwrap()).unwrap();
    let config_b = write_config(work.path(), &toy_joint_config(&out_b));
    let row_b = cmd_run(&load_config(&config_b, &[]).unwrap()).unwrap();
    assert_eq!(row_a.mean_acc, row_b.mean_acc);
    let a = fs::read(out_a.join("summary.csv")).unwrap();
    let b = fs::read(out_b.join("summary.csv")).unwrap();
    assert_eq!(a, b);
    // per-seed reports and curves are deterministic too, apart from timing
    let ca = fs::read(out_a.join("curves.csv")).unwrap();
    let cb = fs::read(out_b.join("curves.csv")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn semi_supervised_protocol_ratios_are_visible_in_reports() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let body = format!(
        r#"
regime = "joint"
output_dir = "{}"
seeds = [0]

[data.sbm]
nodes = 40
classes = 2
p_in = 0.4
p_out = 0.05
feature_dim = 4
feature_noise = 1.0
seed = 3

[split]
protocol = "semi-supervised"

[model]
hidden = 4
dropout = 0.0
order = 2

[training]
max_epochs = 5
patience = 5
"#,
        out.display()
    );
    let config_path = write_config(work.path(), &body);
    let config = load_config(&config_path, &[]).unwrap();
    assert_eq!(config.split.resolve().unwrap(), (0.10, 0.10, 0.80));
    cmd_run(&config).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report-seed0.json")).unwrap()).unwrap();
    assert_eq!(report["split"]["train_ratio"], 0.10);
    assert_eq!(report["split"]["val_ratio"], 0.10);
    assert_eq!(report["split"]["test_ratio"], 0.80);
    assert_eq!(report["split"]["train_count"], 4);
}

#[test]
fn degenerate_protocol_split_fails_cleanly() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let body = toy_joint_config(&out)
        .replace("[split]\ntrain = 0.3333333333333333\nval = 0.3333333333333333\ntest = 0.3333333333333333", "[split]\nprotocol = \"semi-supervised\"");
    // 10/10/80 floors to 0 train nodes on a 3-node fixture: every seed fails
    let config_path = write_config(work.path(), &body);
    let config = load_config(&config_path, &[]).unwrap();
    assert!(cmd_run(&config).is_err());
}

#[test]
fn homophily_of_all_same_label_fixture_is_one() {
    let out = cmd_homophily(&fixture("allsame")).unwrap();
    assert_eq!(out.homophily, 1.0);
    assert_eq!(out.excluded_isolated, 0);
}

#[test]
fn homophily_binary_output_formats() {
    let text = bin().args(["homophily"]).arg(fixture("allsame")).output().unwrap();
    assert!(text.status.success());
    let stdout = String::from_utf8(text.stdout).unwrap();
    assert!(stdout.starts_with("1.0000\n"), "{stdout}");

    let json = bin().args(["homophily", "--json"]).arg(fixture("allsame")).output().unwrap();
    let parsed: serde_json::Value =
        serde_json::from_slice(&json.stdout).expect("valid JSON on stdout");
    assert_eq!(parsed["homophily"], 1.0);
    assert_eq!(parsed["excluded_isolated"], 0);
}

#[test]
fn spectrum_of_delta0_checkpoint_is_flat_one() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.json");
    let filter = FilterSpec::new(Basis::Monomial, vec![1.0, 0.0, 0.0]).unwrap();
    let state = ModelState::init(2, 4, 2, 0.0, filter, 0).unwrap();
    state.save_checkpoint(&ckpt).unwrap();

    let csv = cmd_spectrum(&ckpt, 201).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,response");
    assert_eq!(lines.len(), 202); // header + 201 grid rows
    for line in &lines[1..] {
        let response: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(response, 1.0);
    }
}

#[test]
fn spectrum_of_ppr_checkpoint_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.json");
    let theta = autopoly::ppr_coefficients(0.5, 10).unwrap();
    let filter = FilterSpec::new(Basis::Monomial, theta).unwrap();
    let state = ModelState::init(2, 4, 2, 0.0, filter, 0).unwrap();
    state.save_checkpoint(&ckpt).unwrap();

    let csv = cmd_spectrum(&ckpt, 201).unwrap();
    let values: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    for pair in values.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "response increased: {} -> {}", pair[0], pair[1]);
    }
}

#[test]
fn spectrum_rejects_wrong_checkpoint_version() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.json");
    let filter = FilterSpec::new(Basis::Monomial, vec![1.0]).unwrap();
    let state = ModelState::init(2, 4, 2, 0.0, filter, 0).unwrap();
    let json = state.to_checkpoint_json().replace("autopoly-ckpt-1", "autopoly-ckpt-9");
    fs::write(&ckpt, json).unwrap();
    let output = bin().arg("spectrum").arg(&ckpt).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("autopoly-ckpt-9"), "{stderr}");
}

#[test]
fn grid_command_writes_audit_table_consistent_with_best() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("grid-out");
    let body = format!(
        r#"
regime = "grid"
output_dir = "{}"
seeds = [3]

[data]
bundle_dir = "{}"

[split]
train = 0.3333333333333333
val = 0.3333333333333333
test = 0.3333333333333333

[model]
hidden = 4
dropout = 0.0

[grid]
values = [0.0, 1.0]
order = 1
max_epochs = 4
patience = 4
"#,
        out.display(),
        fixture("toy3").display()
    );
    let config_path = write_config(work.path(), &body);
    let status = bin().arg("grid").arg(&config_path).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));

    let table = fs::read_to_string(out.join("grid_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "theta_0,theta_1,val_acc,test_acc");
    assert_eq!(lines.len(), 5); // header + 2^2 candidates

    let best: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("best_theta.json")).unwrap()).unwrap();
    let best_val = best["val_acc"].as_f64().unwrap();
    let table_max = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best_val, table_max);
}

#[test]
fn sbm_command_materializes_a_loadable_bundle() {
    let work = tempfile::tempdir().unwrap();
    let params = work.path().join("params.toml");
    fs::write(
        &params,
        "nodes = 60\nclasses = 2\np_in = 0.3\np_out = 0.05\nfeature_dim = 4\nfeature_noise = 1.0\nseed = 5\n",
    )
    .unwrap();
    let out = work.path().join("bundle");
    let output = bin().arg("sbm").arg(&params).arg("-o").arg(&out).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let bundle = autopoly::load_bundle(&out).unwrap();
    assert_eq!(bundle.n(), 60);
    assert_eq!(bundle.num_classes(), 2);
}

#[test]
fn run_command_handles_grid_regime_per_seed() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let body = toy_joint_config(&out)
        .replace("regime = \"joint\"", "regime = \"grid\"")
        .replace("seeds = [0, 1]", "seeds = [3]")
        + "\n[grid]\nvalues = [0.0, 1.0]\norder = 1\nmax_epochs = 4\npatience = 4\n";
    let config_path = write_config(work.path(), &body);
    let config = load_config(&config_path, &[]).unwrap();
    let row = cmd_run(&config).unwrap();
    assert_eq!(row.regime, "grid");
    assert_eq!(row.seed_count, 1);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report-seed3.json")).unwrap()).unwrap();
    assert_eq!(report["candidates"], 4);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("grid,toy3,1,"), "{summary}");
}

#[test]
fn run_command_handles_mlp_baseline_regime() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let body = toy_joint_config(&out).replace("regime = \"joint\"", "regime = \"mlp-baseline\"");
    let config_path = write_config(work.path(), &body);
    let config = load_config(&config_path, &[]).unwrap();
    let row = cmd_run(&config).unwrap();
    assert_eq!(row.regime, "mlp-baseline");
    // delta0 coefficients never move: the checkpointed filter is an identity
    let ckpt = fs::read_to_string(out.join("checkpoint-seed0.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&ckpt).unwrap();
    let theta = parsed["filter"]["theta"].as_array().unwrap();
    assert_eq!(theta[0], 1.0);
    assert!(theta[1..].iter().all(|t| t == &serde_json::json!(0.0)));
}

#[test]
fn config_errors_exit_with_code_two() {
    let work = tempfile::tempdir().unwrap();
    let config_path = write_config(work.path(), "regime = \"joint\"\n"); // missing everything
    let output = bin().arg("run").arg(&config_path).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn grid_guard_exits_with_code_four() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let body = format!(
        r#"
regime = "grid"
output_dir = "{}"
seeds = [0]

[data]
bundle_dir = "{}"

[split]
train = 0.3333333333333333
val = 0.3333333333333333
test = 0.3333333333333333

[grid]
order = 5
"#,
        out.display(),
        fixture("toy3").display()
    );
    // default 11-value grid at order 5 is 11^6 = 1771561 > 1e6
    let config_path = write_config(work.path(), &body);
    let output = bin().arg("grid").arg(&config_path).output().unwrap();
    assert_eq!(output.status.code(), Some(4), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn set_override_changes_behavior_end_to_end() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let config_path = write_config(work.path(), &toy_joint_config(&out));
    let output = bin()
        .arg("run")
        .arg(&config_path)
        .args(["--set", "training.max_epochs=2", "--set", "name=\"renamed\""])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("joint,renamed,"), "{summary}");
}

#[test]
fn threads_env_overrides_worker_count() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("out");
    let config_path = write_config(work.path(), &toy_joint_config(&out));
    let output = bin()
        .arg("run")
        .arg(&config_path)
        .env("AUTOPOLY_THREADS", "2")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    // results must be identical to the single-threaded run
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let work2 = tempfile::tempdir().unwrap();
    let out2 = work2.path().join("out");
    let config2 = write_config(work2.path(), &toy_joint_config(&out2));
    let output2 = bin().arg("run").arg(&config2).output().unwrap();
    assert!(output2.status.success());
    let summary2 = fs::read_to_string(out2.join("summary.csv")).unwrap();
    assert_eq!(summary, summary2);
}
