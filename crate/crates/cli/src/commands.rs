//! The four subcommands. Each takes explicit paths and returns a summary;
//! printing is left to the binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ccs_core::dataset::{encode_unlabeled, split_80_20, write_csv, Age, EncodedDataset};
use ccs_core::eval::{
    fit_seed, mae, mape, r2, run_comparison, split_seed, EvalReport, Importance, ImportanceMethod, MetricCell,
};
use ccs_core::model::{ModelKind, Regressor, TrainedModel};
use serde::Serialize;

use crate::config::RunConfig;
use crate::container::ModelContainer;
use crate::CliError;

pub const DAY7_CSV: &str = "day7.csv";
pub const DAY28_CSV: &str = "day28.csv";
pub const SIDECAR: &str = "generate.toml";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const IMPORTANCE_CSV: &str = "importance.csv";

pub fn model_file_name(kind: ModelKind, age: Age) -> String {
    format!("model_{kind}_{age}.ccsm")
}

pub fn scatter_file_name(kind: ModelKind, age: Age) -> String {
    format!("scatter_{kind}_{age}.csv")
}

/// Output directory: the explicit override, then the environment variable,
/// then the config file.
pub fn output_dir(cfg: &RunConfig, over: Option<&Path>) -> PathBuf {
    over.map_or_else(|| cfg.resolved_output_dir(), Path::to_path_buf)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `day7.csv`, `day28.csv` and a sidecar config that regenerates
/// them byte for byte. Returns the written paths.
pub fn cmd_generate(config: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let cfg = RunConfig::load(config)?;
    if cfg.data.generator.is_none() {
        return Err(CliError::Config("generate needs a [data.generator] section".into()));
    }
    let data = cfg.load_datasets()?;
    let dir = output_dir(&cfg, out);
    create_dir(&dir)?;
    let mut written = Vec::new();
    for (name, ds) in [(DAY7_CSV, &data.day7), (DAY28_CSV, &data.day28)] {
        let path = dir.join(name);
        let mut w = create(&path)?;
        write_csv(&mut w, ds)?;
        finish(w, &path)?;
        written.push(path);
    }
    let mut sidecar = cfg.clone();
    sidecar.output_dir = PathBuf::from(".");
    let path = dir.join(SIDECAR);
    write_text(&path, &sidecar.canonical())?;
    written.push(path);
    Ok(written)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub kind: ModelKind,
    pub age: Age,
    pub model_file: PathBuf,
    pub train: MetricCell,
    pub test: MetricCell,
    /// Epoch of the kept weights and its validation loss, for neural models.
    pub best_epoch: Option<(usize, f64)>,
}

fn metrics(model: &TrainedModel, ds: &EncodedDataset) -> Result<MetricCell, CliError> {
    let pred = model.predict(ds.features())?;
    let actual = ds.targets();
    Ok(MetricCell {
        r2: r2(actual, &pred)?,
        mae_psi: mae(actual, &pred)?,
        mape_percent: mape(actual, &pred)?,
        n_test: actual.len(),
    })
}

/// Fits one model on the same 80% split and seed `compare` uses and writes
/// `model_<kind>_<age>.ccsm`.
pub fn cmd_train(
    config: &Path,
    kind: ModelKind,
    age: Age,
    out: Option<&Path>,
) -> Result<TrainSummary, CliError> {
    let cfg = RunConfig::load(config)?;
    let data = cfg.load_datasets()?;
    let split = split_80_20(data.for_age(age), split_seed(cfg.seed, age))?;
    let seed = fit_seed(cfg.seed, kind, age);
    let model = TrainedModel::fit(kind, &split.train, &cfg.models, seed)?;
    let history = match &model {
        TrainedModel::Transformer(m) => Some(m.history()),
        TrainedModel::EmbedNet(m) => Some(m.history()),
        _ => None,
    };
    let best_epoch = history.and_then(|h| {
        let e = h.best_epoch?;
        h.validation_loss.get(e).map(|&loss| (e, loss))
    });
    let summary_train = metrics(&model, &split.train)?;
    let summary_test = metrics(&model, &split.test)?;
    let dir = output_dir(&cfg, out);
    create_dir(&dir)?;
    let path = dir.join(model_file_name(kind, age));
    ModelContainer::new(split.train.schema().clone(), seed, model)?.save(&path)?;
    Ok(TrainSummary {
        kind,
        age,
        model_file: path,
        train: summary_train,
        test: summary_test,
        best_epoch,
    })
}

#[derive(Clone, Debug)]
pub struct CompareSummary {
    pub report: EvalReport,
    pub text: String,
    pub written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    version: &'a str,
    config_sha256: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

/// Runs the five-model comparison and writes the text and JSON reports,
/// one scatter CSV per model and age, and the importance table. Model
/// failures still produce every other output, then return an error.
pub fn cmd_compare(config: &Path, out: Option<&Path>) -> Result<CompareSummary, CliError> {
    let cfg = RunConfig::load(config)?;
    let data = cfg.load_datasets()?;
    let report = run_comparison(&data.day7, &data.day28, &cfg.models, &cfg.compare, cfg.seed)?;
    let dir = output_dir(&cfg, out);
    create_dir(&dir)?;
    let hash = cfg.hash();
    let version = env!("CARGO_PKG_VERSION");
    let mut written = Vec::new();

    let mut text = report.to_table();
    if data.dropped > 0 {
        text.push_str(&format!("\n{} input rows dropped for missing values\n", data.dropped));
    }
    text.push_str(&format!("\nccs {version}, config sha256 {hash}\n"));
    let path = dir.join(REPORT_TXT);
    write_text(&path, &text)?;
    written.push(path);

    let json = JsonReport {
        version,
        config_sha256: &hash,
        report: &report,
    };
    let path = dir.join(REPORT_JSON);
    let mut body = serde_json::to_string_pretty(&json)
        .map_err(|e| CliError::Format(format!("report serialization: {e}")))?;
    body.push('\n');
    write_text(&path, &body)?;
    written.push(path);

    for age in &report.ages {
        for m in age.models.iter().filter(|m| m.metrics.is_some()) {
            let path = dir.join(scatter_file_name(m.kind, age.age));
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["actual_psi", "predicted_psi"])?;
            for (a, p) in m.actual.iter().zip(&m.predicted) {
                w.write_record([a.to_string(), p.to_string()])?;
            }
            let inner = w.into_inner().map_err(|e| CliError::io(&path, e.into_error()))?;
            finish(inner, &path)?;
            written.push(path);
        }
    }

    let path = dir.join(IMPORTANCE_CSV);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["model", "method", "feature", "importance", "raw"])?;
    if let Some(age) = report.ages.iter().find(|a| a.age == report.importance_age) {
        for m in &age.models {
            for imp in [&m.intrinsic, &m.permutation].into_iter().flatten() {
                write_importance(&mut w, m.kind, imp, &report.feature_names)?;
            }
        }
    }
    let inner = w.into_inner().map_err(|e| CliError::io(&path, e.into_error()))?;
    finish(inner, &path)?;
    written.push(path);

    let failures: Vec<String> = report
        .failures()
        .iter()
        .map(|(kind, age, err)| format!("{kind} ({age}-day): {err}"))
        .collect();
    if !failures.is_empty() {
        return Err(CliError::ModelFailures(failures));
    }
    Ok(CompareSummary {
        report,
        text,
        written,
    })
}

fn write_importance<W: Write>(
    w: &mut csv::Writer<W>,
    kind: ModelKind,
    imp: &Importance,
    names: &[String],
) -> Result<(), CliError> {
    let method = match imp.method {
        ImportanceMethod::Intrinsic => "intrinsic",
        ImportanceMethod::Permutation => "permutation",
    };
    for ((name, v), raw) in names.iter().zip(&imp.values).zip(&imp.raw) {
        w.write_record([kind.as_str(), method, name, &v.to_string(), &raw.to_string()])?;
    }
    Ok(())
}

/// Appends a `predicted_psi` column to every row of `input`. Returns the
/// number of rows predicted.
pub fn cmd_predict(model_file: &Path, input: &Path, output: &Path) -> Result<usize, CliError> {
    let container = ModelContainer::load(model_file)?;
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let records = rdr.records().collect::<Result<Vec<_>, _>>()?;
    let predictions = if records.is_empty() {
        ccs_core::dataset::ColumnMap::resolve(&headers, &container.schema, None)?;
        Vec::new()
    } else {
        let rows = encode_unlabeled(&headers, &records, &container.schema)?;
        container.model.predict(&rows)?
    };
    let mut w = csv::Writer::from_writer(create(output)?);
    let mut header = headers.clone();
    header.push_field("predicted_psi");
    w.write_record(&header)?;
    for (record, p) in records.iter().zip(&predictions) {
        let mut row = record.clone();
        row.push_field(&p.to_string());
        w.write_record(&row)?;
    }
    let inner = w.into_inner().map_err(|e| CliError::io(output, e.into_error()))?;
    finish(inner, output)?;
    Ok(records.len())
}
