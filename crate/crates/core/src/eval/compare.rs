//! Five-model comparison on an 80/20 split per curing age.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{split_80_20, Age, EncodedDataset};
use crate::model::{ModelConfigs, ModelKind, Regressor, TrainedModel};
use crate::seed::{derive_seed, label_stream};

use super::importance::{intrinsic_importance, permutation_importance, Importance, DEFAULT_REPEATS};
use super::{mae, mape, r2, EvalError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub models: Vec<ModelKind>,
    pub permutation_repeats: usize,
    /// Age whose fitted models supply the importance vectors.
    pub importance_age: Age,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            models: ModelKind::ALL.to_vec(),
            permutation_repeats: DEFAULT_REPEATS,
            importance_age: Age::Day28,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricCell {
    pub r2: f64,
    pub mae_psi: f64,
    pub mape_percent: f64,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelOutcome {
    pub kind: ModelKind,
    pub fit_seed: u64,
    pub metrics: Option<MetricCell>,
    pub error: Option<String>,
    pub intrinsic: Option<Importance>,
    pub permutation: Option<Importance>,
    /// Test targets and predictions, in test-split order.
    #[serde(skip)]
    pub actual: Vec<f64>,
    #[serde(skip)]
    pub predicted: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgeResults {
    pub age: Age,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(skip)]
    pub train_rows: Vec<usize>,
    #[serde(skip)]
    pub test_rows: Vec<usize>,
    pub models: Vec<ModelOutcome>,
}

/// The importance vector shown for one model: intrinsic where the model
/// defines one, permutation otherwise.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImportanceEntry {
    pub kind: ModelKind,
    pub importance: Option<Importance>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub importance_age: Age,
    pub ages: Vec<AgeResults>,
    pub importance: Vec<ImportanceEntry>,
}

/// Seed of the 80/20 split for one age.
pub fn split_seed(seed: u64, age: Age) -> u64 {
    derive_seed(seed, label_stream(&format!("split/{age}")))
}

/// Seed used to fit one model family at one age.
pub fn fit_seed(seed: u64, kind: ModelKind, age: Age) -> u64 {
    derive_seed(seed, label_stream(&format!("fit/{kind}/{age}")))
}

fn evaluate(
    kind: ModelKind,
    age: Age,
    train: &EncodedDataset,
    test: &EncodedDataset,
    models: &ModelConfigs,
    cfg: &ComparisonConfig,
    seed: u64,
) -> ModelOutcome {
    let fit_seed = fit_seed(seed, kind, age);
    let mut outcome = ModelOutcome {
        kind,
        fit_seed,
        metrics: None,
        error: None,
        intrinsic: None,
        permutation: None,
        actual: test.targets().to_vec(),
        predicted: Vec::new(),
    };
    let run = |outcome: &mut ModelOutcome| -> Result<(), EvalError> {
        let model = TrainedModel::fit(kind, train, models, fit_seed)?;
        let pred = model.predict(test.features())?;
        let actual = test.targets();
        outcome.metrics = Some(MetricCell {
            r2: r2(actual, &pred)?,
            mae_psi: mae(actual, &pred)?,
            mape_percent: mape(actual, &pred)?,
            n_test: actual.len(),
        });
        outcome.predicted = pred;
        if age == cfg.importance_age {
            outcome.intrinsic = intrinsic_importance(&model, train.schema());
            let perm_seed = derive_seed(seed, label_stream(&format!("permutation/{kind}/{age}")));
            outcome.permutation = Some(permutation_importance(
                &model,
                test,
                cfg.permutation_repeats,
                perm_seed,
            )?);
        }
        Ok(())
    };
    if let Err(e) = run(&mut outcome) {
        outcome.error = Some(e.to_string());
    }
    outcome
}

/// Splits each age 80/20, fits every configured model on the same training
/// rows and scores it on the same test rows. Model failures are recorded in
/// the report; only a failed split is an error.
pub fn run_comparison(
    day7: &EncodedDataset,
    day28: &EncodedDataset,
    models: &ModelConfigs,
    cfg: &ComparisonConfig,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let mut ages = Vec::with_capacity(2);
    for (age, ds) in [(Age::Day7, day7), (Age::Day28, day28)] {
        let split_seed = split_seed(seed, age);
        let split = split_80_20(ds, split_seed)?;
        let outcomes = cfg
            .models
            .iter()
            .map(|&kind| evaluate(kind, age, &split.train, &split.test, models, cfg, seed))
            .collect();
        ages.push(AgeResults {
            age,
            split_seed,
            n_train: split.train.n_rows(),
            n_test: split.test.n_rows(),
            train_rows: split.train_rows,
            test_rows: split.test_rows,
            models: outcomes,
        });
    }
    let shown = ages
        .iter()
        .find(|a| a.age == cfg.importance_age)
        .map(|a| {
            a.models
                .iter()
                .map(|m| ImportanceEntry {
                    kind: m.kind,
                    importance: m.intrinsic.clone().or_else(|| m.permutation.clone()),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(EvalReport {
        seed,
        feature_names: day28.schema().feature_names().iter().map(|s| s.to_string()).collect(),
        importance_age: cfg.importance_age,
        ages,
        importance: shown,
    })
}

impl EvalReport {
    pub fn outcome(&self, kind: ModelKind, age: Age) -> Option<&ModelOutcome> {
        self.ages
            .iter()
            .find(|a| a.age == age)?
            .models
            .iter()
            .find(|m| m.kind == kind)
    }

    pub fn cell(&self, kind: ModelKind, age: Age) -> Option<&MetricCell> {
        self.outcome(kind, age)?.metrics.as_ref()
    }

    pub fn kinds(&self) -> Vec<ModelKind> {
        self.ages.first().map(|a| a.models.iter().map(|m| m.kind).collect()).unwrap_or_default()
    }

    pub fn metric_cell_count(&self) -> usize {
        self.ages
            .iter()
            .flat_map(|a| &a.models)
            .filter(|m| m.metrics.is_some())
            .count()
            * 3
    }

    pub fn failures(&self) -> Vec<(ModelKind, Age, &str)> {
        self.ages
            .iter()
            .flat_map(|a| {
                a.models
                    .iter()
                    .filter_map(move |m| m.error.as_deref().map(|e| (m.kind, a.age, e)))
            })
            .collect()
    }

    /// Aligned text table of the metrics, followed by the importance table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = [
            "Method",
            "R² 7-Day",
            "R² 28-Day",
            "MAE 7-Day",
            "MAE 28-Day",
            "MAPE 7-Day",
            "MAPE 28-Day",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for kind in self.kinds() {
            let mut row = vec![kind.display_name().to_string()];
            let cells = [Age::Day7, Age::Day28].map(|age| self.cell(kind, age));
            let fmt = |f: &dyn Fn(&MetricCell) -> String, c: Option<&MetricCell>| {
                c.map_or_else(|| "failed".to_string(), f)
            };
            for c in cells {
                row.push(fmt(&|m| format!("{:.3}", m.r2), c));
            }
            for c in cells {
                row.push(fmt(&|m| format!("{:.2} psi", m.mae_psi), c));
            }
            for c in cells {
                row.push(fmt(&|m| format!("{:.2}%", m.mape_percent), c));
            }
            rows.push(row);
        }
        write_aligned(&mut out, &rows);

        let _ = writeln!(out, "\nRelative importance ({}-day models)", self.importance_age.days());
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut head = vec!["Feature".to_string()];
        for e in &self.importance {
            let method = e.importance.as_ref().map_or("n/a", |i| match i.method {
                super::ImportanceMethod::Intrinsic => "intrinsic",
                super::ImportanceMethod::Permutation => "permutation",
            });
            head.push(format!("{} ({method})", e.kind));
        }
        rows.push(head);
        for (f, name) in self.feature_names.iter().enumerate() {
            let mut row = vec![name.clone()];
            for e in &self.importance {
                row.push(
                    e.importance
                        .as_ref()
                        .map_or_else(|| "-".to_string(), |i| format!("{:.4}", i.values[f])),
                );
            }
            rows.push(row);
        }
        write_aligned(&mut out, &rows);
        for (kind, age, err) in self.failures() {
            let _ = writeln!(out, "\n{kind} ({age}-day) failed: {err}");
        }
        out
    }
}

fn write_aligned(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
}
