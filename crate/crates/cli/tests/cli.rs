use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ccs_cli::commands::{model_file_name, scatter_file_name, DAY28_CSV, DAY7_CSV, SIDECAR};
use ccs_cli::{cmd_compare, cmd_generate, cmd_predict, cmd_train, CliError, ModelContainer, RunConfig};
use ccs_core::dataset::{split_80_20, Age};
use ccs_core::eval::{fit_seed, split_seed};
use ccs_core::model::{ModelKind, Regressor, TrainedModel};
use proptest::prelude::*;
use tempfile::TempDir;

const SMALL_MODELS: &str = r#"
[models.forest]
n_trees = 10

[models.transformer]
d_model = 8
heads = 2
layers = 1
epochs = 2
batch_size = 32

[models.embednet]
hidden = 8
epochs = 2
batch_size = 32
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

fn generator_config(dir: &Path, n: usize) -> PathBuf {
    write_config(
        dir,
        &format!("seed = 9\noutput_dir = \"out\"\n\n[data.generator]\nn = {n}\nseed = 21\n{SMALL_MODELS}"),
    )
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn generate_writes_matching_pair() {
    let dir = TempDir::new().unwrap();
    let cfg = generator_config(dir.path(), 150);
    cmd_generate(&cfg, None).unwrap();
    let out = dir.path().join("out");
    let (h7, r7) = read_rows(&out.join(DAY7_CSV));
    let (h28, r28) = read_rows(&out.join(DAY28_CSV));
    assert_eq!((r7.len(), r28.len()), (150, 150));
    assert_eq!(h7[..9], h28[..9]);
    assert_eq!(h7[9], "strength_7d_psi");
    assert_eq!(h28[9], "strength_28d_psi");
    for (a, b) in r7.iter().zip(&r28) {
        assert_eq!(a[..9], b[..9]);
    }
    assert!(r7.iter().zip(&r28).any(|(a, b)| a[9] != b[9]));

    let first = fs::read(out.join(DAY28_CSV)).unwrap();
    cmd_generate(&out.join(SIDECAR), None).unwrap();
    assert_eq!(fs::read(out.join(DAY28_CSV)).unwrap(), first);
}

#[test]
fn generate_zero_rows_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let cfg = generator_config(dir.path(), 0);
    assert!(matches!(cmd_generate(&cfg, None), Err(CliError::Data(_))));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn generate_needs_generator_source() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[data.csv]\nday7 = \"a.csv\"\nday28 = \"b.csv\"\n");
    assert!(matches!(cmd_generate(&cfg, None), Err(CliError::Config(_))));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[data.generator]\n[models.embednet]\nhiden = 3\n");
    let err = cmd_generate(&cfg, None).unwrap_err();
    assert!(err.to_string().contains("hiden"), "{err}");
}

#[test]
fn train_then_load_predicts_identically() {
    let dir = TempDir::new().unwrap();
    let cfg_path = generator_config(dir.path(), 300);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let data = cfg.load_datasets().unwrap();
    let probe: Vec<usize> = (0..100).map(|i| (i * 37 + 11) % 300).collect();
    for kind in ModelKind::ALL {
        let summary = cmd_train(&cfg_path, kind, Age::Day28, None).unwrap();
        assert_eq!(summary.model_file.file_name().unwrap().to_str().unwrap(), model_file_name(kind, Age::Day28));
        let loaded = ModelContainer::load(&summary.model_file).unwrap();
        assert_eq!(loaded.kind(), kind);

        let split = split_80_20(&data.day28, split_seed(cfg.seed, Age::Day28)).unwrap();
        let fresh = TrainedModel::fit(kind, &split.train, &cfg.models, fit_seed(cfg.seed, kind, Age::Day28)).unwrap();
        let rows = data.day28.features().subset(&probe);
        let a = fresh.predict(&rows).unwrap();
        let b = loaded.model.predict(&rows).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{kind}");
    }
}

fn trained_containers(n: usize) -> Vec<ModelContainer> {
    let dir = TempDir::new().unwrap();
    let cfg_path = generator_config(dir.path(), n);
    ModelKind::ALL
        .into_iter()
        .map(|kind| {
            let s = cmd_train(&cfg_path, kind, Age::Day7, None).unwrap();
            ModelContainer::load(&s.model_file).unwrap()
        })
        .collect()
}

#[test]
fn container_round_trip_is_byte_exact() {
    for c in trained_containers(200) {
        let bytes = c.to_bytes();
        let again = ModelContainer::from_bytes(&bytes).unwrap().to_bytes();
        assert_eq!(bytes, again, "{}", c.kind());
    }
}

#[test]
fn corrupted_containers_are_rejected() {
    let c = &trained_containers(200)[2];
    let bytes = c.to_bytes();
    let mut flipped = bytes.clone();
    flipped[0] ^= 0x01;
    let err = ModelContainer::from_bytes(&flipped).unwrap_err();
    assert!(matches!(err, CliError::Format(_)), "{err}");
    assert!(err.to_string().contains("magic"));

    assert!(ModelContainer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(ModelContainer::from_bytes(&longer).is_err());
    let mut bad_kind = bytes.clone();
    bad_kind[12] = 99;
    assert!(ModelContainer::from_bytes(&bad_kind).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn damaged_containers_never_panic(cut in 0usize..4096, at in 0usize..4096, xor in 1u8..=255) {
        thread_local! {
            static BYTES: Vec<Vec<u8>> = trained_containers(60).iter().map(|c| c.to_bytes()).collect();
        }
        BYTES.with(|all| {
            for bytes in all {
                let _ = ModelContainer::from_bytes(&bytes[..cut.min(bytes.len())]);
                let mut damaged = bytes.clone();
                let i = at % damaged.len();
                damaged[i] ^= xor;
                if let Ok(c) = ModelContainer::from_bytes(&damaged) {
                    // a flip inside a float payload still decodes; it must re-encode to the same bytes
                    assert_eq!(c.to_bytes(), damaged);
                }
            }
        });
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ccs"))
}

#[test]
fn unknown_model_kind_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = generator_config(dir.path(), 50);
    let out = bin()
        .args(["train", "--config", cfg.to_str().unwrap(), "--model", "svm", "--age", "28"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for kind in ModelKind::ALL {
        assert!(err.contains(kind.as_str()), "{err}");
    }
}

#[test]
fn output_dir_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = generator_config(dir.path(), 20);
    let env_dir = dir.path().join("from_env");
    let status = bin()
        .args(["generate", "--config", cfg.to_str().unwrap()])
        .env(ccs_cli::OUTPUT_DIR_ENV, &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(env_dir.join(DAY7_CSV).exists());

    let flag_dir = dir.path().join("from_flag");
    let status = bin()
        .args(["generate", "--config", cfg.to_str().unwrap(), "--output-dir", flag_dir.to_str().unwrap()])
        .env(ccs_cli::OUTPUT_DIR_ENV, &env_dir)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert!(flag_dir.join(DAY28_CSV).exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn compare_writes_every_output() {
    let dir = TempDir::new().unwrap();
    let cfg = generator_config(dir.path(), 250);
    let summary = cmd_compare(&cfg, None).unwrap();
    let out = dir.path().join("out");
    let report = &summary.report;
    assert_eq!(report.metric_cell_count(), 30);
    assert_eq!(report.importance.iter().filter(|e| e.importance.is_some()).count(), 5);
    for age in &report.ages {
        assert_eq!(age.n_train + age.n_test, 250);
        for kind in ModelKind::ALL {
            let (header, rows) = read_rows(&out.join(scatter_file_name(kind, age.age)));
            assert_eq!(header, ["actual_psi", "predicted_psi"]);
            assert_eq!(rows.len(), age.n_test);
        }
    }
    let (header, rows) = read_rows(&out.join("importance.csv"));
    assert_eq!(header, ["model", "method", "feature", "importance", "raw"]);
    // intrinsic and permutation for three models, permutation for two
    assert_eq!(rows.len(), 9 * 8);
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    let hash = RunConfig::load(&cfg).unwrap().hash();
    assert!(text.trim_end().ends_with(&format!("config sha256 {hash}")));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config_sha256"], hash.as_str());
    assert_eq!(json["ages"].as_array().unwrap().len(), 2);
}

#[test]
fn compare_reports_model_failures_after_writing_the_rest() {
    let dir = TempDir::new().unwrap();
    let body = "seed = 2\noutput_dir = \"out\"\n[data.generator]\nn = 120\n[models.forest]\nn_trees = 3\n\
         [models.transformer]\nd_model = 6\nheads = 4\n[models.embednet]\nhidden = 4\nepochs = 1\n".to_string();
    let cfg = write_config(dir.path(), &body);
    let err = cmd_compare(&cfg, None).unwrap_err();
    match &err {
        CliError::ModelFailures(f) => assert_eq!(f.len(), 2, "{f:?}"),
        other => panic!("{other}"),
    }
    let out = dir.path().join("out");
    assert!(out.join("report.txt").exists());
    assert!(out.join(scatter_file_name(ModelKind::Forest, Age::Day7)).exists());
    assert!(!out.join(scatter_file_name(ModelKind::Transformer, Age::Day7)).exists());
    let text = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(text.contains("failed"));

    let status = bin().args(["compare", "--config", cfg.to_str().unwrap()]).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}

/// Generates CSVs, then points a second config at them.
fn csv_setup(dir: &Path, n: usize, extra: &str) -> PathBuf {
    let gen = generator_config(dir, n);
    cmd_generate(&gen, None).unwrap();
    let body = format!(
        "seed = 4\noutput_dir = \"models\"\n[data.csv]\nday7 = \"out/{DAY7_CSV}\"\nday28 = \"out/{DAY28_CSV}\"\n{extra}"
    );
    let path = dir.join("csv.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn fully_grown_tree_reproduces_training_targets() {
    let dir = TempDir::new().unwrap();
    let cfg_path = csv_setup(
        dir.path(),
        200,
        "[models.tree]\nmax_depth = \"none\"\nmin_samples_leaf = 1\nmin_samples_split = 2\n",
    );
    let summary = cmd_train(&cfg_path, ModelKind::Tree, Age::Day28, None).unwrap();
    assert_eq!(summary.train.r2, 1.0);
    let input = dir.path().join("out").join(DAY28_CSV);
    let output = dir.path().join("pred.csv");
    assert_eq!(cmd_predict(&summary.model_file, &input, &output).unwrap(), 200);

    let cfg = RunConfig::load(&cfg_path).unwrap();
    let data = cfg.load_datasets().unwrap();
    let split = split_80_20(&data.day28, split_seed(cfg.seed, Age::Day28)).unwrap();
    let (header, rows) = read_rows(&output);
    assert_eq!(header.last().unwrap(), "predicted_psi");
    let mut seen: HashMap<Vec<String>, usize> = HashMap::new();
    for &i in &split.train_rows {
        *seen.entry(rows[i][..9].to_vec()).or_default() += 1;
    }
    let mut checked = 0;
    for &i in &split.train_rows {
        if seen[&rows[i][..9].to_vec()] == 1 {
            let target: f64 = rows[i][9].parse().unwrap();
            let pred: f64 = rows[i][10].parse().unwrap();
            assert_eq!(pred, target, "row {i}");
            checked += 1;
        }
    }
    assert!(checked > 150);
}

#[test]
fn predict_edge_cases() {
    let dir = TempDir::new().unwrap();
    let cfg_path = csv_setup(dir.path(), 120, "[models.embednet]\nhidden = 8\nepochs = 2\n");
    let model = cmd_train(&cfg_path, ModelKind::EmbedNet, Age::Day7, None).unwrap().model_file;
    let day7 = dir.path().join("out").join(DAY7_CSV);
    let text = fs::read_to_string(&day7).unwrap();
    let header = text.lines().next().unwrap();

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, format!("{header}\n")).unwrap();
    let out = dir.path().join("empty_out.csv");
    assert_eq!(cmd_predict(&model, &empty, &out).unwrap(), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), format!("{header},predicted_psi\n"));

    let missing = dir.path().join("missing.csv");
    let cut: Vec<String> = text.lines().map(|l| l.splitn(3, ',').nth(2).unwrap().to_string()).collect();
    fs::write(&missing, cut.join("\n")).unwrap();
    let err = cmd_predict(&model, &missing, &out).unwrap_err();
    assert!(err.to_string().contains("unit_cement_lb_cy"), "{err}");

    let oov = dir.path().join("oov.csv");
    let mut lines: Vec<String> = text.lines().take(3).map(str::to_string).collect();
    let mut fields: Vec<&str> = lines[2].split(',').collect();
    fields[7] = "MC-NEW";
    lines[2] = fields.join(",");
    fs::write(&oov, lines.join("\n")).unwrap();
    let err = cmd_predict(&model, &oov, &out).unwrap_err();
    assert!(err.to_string().contains("MC-NEW"), "{err}");

    let out = dir.path().join("pred.csv");
    cmd_predict(&model, &day7, &out).unwrap();
    let (_, rows) = read_rows(&out);
    assert_eq!(rows.len(), 120);
    assert!(rows.iter().all(|r| r[10].parse::<f64>().unwrap() >= 0.0));
}
