use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use csv::StringRecord;

use super::{Age, DataError, EncodedDataset, FeatureRows, FeatureSchema};

/// How categorical values outside the schema vocabulary are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabMode {
    /// Unseen values are appended to the vocabulary in first-appearance order.
    Fit,
    /// Unseen values are an error.
    Apply,
}

/// A labeled dataset read from CSV plus the number of rows discarded for
/// missing or unparseable fields.
#[derive(Clone, Debug)]
pub struct LoadedCsv {
    pub dataset: EncodedDataset,
    pub dropped: usize,
}

/// Positions of the schema columns inside a CSV header.
#[derive(Clone, Debug)]
pub struct ColumnMap {
    numeric: Vec<usize>,
    categorical: Vec<usize>,
    target: Option<usize>,
}

impl ColumnMap {
    pub fn resolve(
        headers: &StringRecord,
        schema: &FeatureSchema,
        target: Option<&str>,
    ) -> Result<Self, DataError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))
        };
        let numeric = schema
            .numerical
            .iter()
            .map(|s| find(&s.name))
            .collect::<Result<_, _>>()?;
        let categorical = schema
            .categorical
            .iter()
            .map(|s| find(&s.name))
            .collect::<Result<_, _>>()?;
        let target = target.map(find).transpose()?;
        Ok(Self {
            numeric,
            categorical,
            target,
        })
    }
}

/// One record split into typed fields; `None` when a required field is
/// blank or does not parse.
struct ParsedRecord<'r> {
    numeric: Vec<f64>,
    categorical: Vec<&'r str>,
    target: Option<f64>,
}

fn parse_record<'r>(record: &'r StringRecord, map: &ColumnMap) -> Option<ParsedRecord<'r>> {
    let number = |ix: usize| -> Option<f64> {
        let v: f64 = record.get(ix)?.trim().parse().ok()?;
        v.is_finite().then_some(v)
    };
    let numeric = map.numeric.iter().map(|&ix| number(ix)).collect::<Option<Vec<_>>>()?;
    let categorical = map
        .categorical
        .iter()
        .map(|&ix| record.get(ix).map(str::trim).filter(|s| !s.is_empty()))
        .collect::<Option<Vec<_>>>()?;
    let target = match map.target {
        Some(ix) => Some(number(ix).filter(|t| *t > 0.0)?),
        None => None,
    };
    Some(ParsedRecord {
        numeric,
        categorical,
        target,
    })
}

fn encode_categories(
    values: &[&str],
    schema: &mut FeatureSchema,
    mode: VocabMode,
    out: &mut Vec<u32>,
) -> Result<(), DataError> {
    for (spec, value) in schema.categorical.iter_mut().zip(values) {
        let ix = match (spec.index_of(value), mode) {
            (Some(ix), _) => ix,
            (None, VocabMode::Fit) => {
                spec.vocab.push(value.to_string());
                spec.vocab.len() - 1
            }
            (None, VocabMode::Apply) => {
                return Err(DataError::OutOfVocabulary {
                    column: spec.name.clone(),
                    value: value.to_string(),
                })
            }
        };
        out.push(ix as u32);
    }
    Ok(())
}

/// Reads labeled rows for one age. Rows with a missing, unparseable or
/// non-positive required field are dropped and counted.
pub fn read_labeled<R: Read>(
    reader: R,
    schema: &mut FeatureSchema,
    age: Age,
    mode: VocabMode,
) -> Result<LoadedCsv, DataError> {
    schema.validate_layout()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let target_name = schema.targets.for_age(age).to_string();
    let map = ColumnMap::resolve(&headers, schema, Some(&target_name))?;
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut targets = Vec::new();
    let mut dropped = 0;
    let mut record = StringRecord::new();
    while rdr.read_record(&mut record)? {
        let Some(parsed) = parse_record(&record, &map) else {
            dropped += 1;
            continue;
        };
        encode_categories(&parsed.categorical, schema, mode, &mut categorical)?;
        numeric.extend(parsed.numeric);
        targets.push(parsed.target.expect("target column requested"));
    }
    if targets.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    schema.validate()?;
    let rows = FeatureRows::new(Arc::new(schema.clone()), numeric, categorical)?;
    Ok(LoadedCsv {
        dataset: EncodedDataset::new(rows, targets, age)?,
        dropped,
    })
}

/// File variant of [`read_labeled`].
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &mut FeatureSchema,
    age: Age,
    mode: VocabMode,
) -> Result<LoadedCsv, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    read_labeled(file, schema, age, mode)
}

/// Encodes unlabeled records strictly: any unusable field is an error that
/// names the row (1-based, header excluded) and column.
pub fn encode_unlabeled(
    headers: &StringRecord,
    records: &[StringRecord],
    schema: &Arc<FeatureSchema>,
) -> Result<FeatureRows, DataError> {
    let map = ColumnMap::resolve(headers, schema, None)?;
    let mut numeric = Vec::with_capacity(records.len() * schema.p_num());
    let mut categorical = Vec::with_capacity(records.len() * schema.p_cat());
    let mut scratch = (**schema).clone();
    for (row, record) in records.iter().enumerate() {
        let Some(parsed) = parse_record(record, &map) else {
            let column = first_bad_column(record, &map, schema);
            return Err(DataError::BadField { row: row + 1, column });
        };
        encode_categories(&parsed.categorical, &mut scratch, VocabMode::Apply, &mut categorical)?;
        numeric.extend(parsed.numeric);
    }
    FeatureRows::new(Arc::clone(schema), numeric, categorical)
}

fn first_bad_column(record: &StringRecord, map: &ColumnMap, schema: &FeatureSchema) -> String {
    for (spec, &ix) in schema.numerical.iter().zip(&map.numeric) {
        let ok = record
            .get(ix)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .is_some_and(f64::is_finite);
        if !ok {
            return spec.name.clone();
        }
    }
    for (spec, &ix) in schema.categorical.iter().zip(&map.categorical) {
        if record.get(ix).is_none_or(|v| v.trim().is_empty()) {
            return spec.name.clone();
        }
    }
    String::from("?")
}

/// Writes the dataset in the same layout [`read_labeled`] accepts.
pub fn write_csv<W: Write>(writer: W, ds: &EncodedDataset) -> Result<(), DataError> {
    let schema = ds.schema();
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.feature_names();
    header.push(schema.targets.for_age(ds.age()));
    w.write_record(&header)?;
    let rows = ds.features();
    let mut fields = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        fields.clear();
        fields.extend(rows.numeric_row(i).iter().map(f64::to_string));
        for (spec, &ix) in schema.categorical.iter().zip(rows.categorical_row(i)) {
            fields.push(spec.vocab[ix as usize].clone());
        }
        fields.push(ds.targets()[i].to_string());
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "unit_cement_lb_cy,wc_ratio,concrete_temp_f,air_temp_f,elapsed_time_min,placement_air_pct,slump_in,material_code,fracture_type,strength_28d_psi";

    fn csv(rows: &[&str]) -> String {
        let mut s = String::from(HEADER);
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s
    }

    #[test]
    fn reads_well_formed_rows() {
        let text = csv(&[
            "570,0.38,76,71,40,4.3,5.5,MC-A,cone,5800",
            "600,0.35,70,65,30,4.0,6.0,MC-B,diagonal_shear,6100",
            "540,0.41,80,90,55,5.1,4.5,MC-A,cone,5300",
        ]);
        let mut schema = FeatureSchema::concrete();
        let out = read_labeled(text.as_bytes(), &mut schema, Age::Day28, VocabMode::Fit).unwrap();
        assert_eq!(out.dataset.n_rows(), 3);
        assert_eq!(out.dropped, 0);
        assert_eq!(schema.categorical[0].vocab, vec!["MC-A", "MC-B"]);
        assert_eq!(schema.categorical[1].vocab, vec!["cone", "diagonal_shear"]);
        assert_eq!(out.dataset.features().categorical_row(2), &[0, 0]);
    }

    #[test]
    fn blank_field_drops_row() {
        let text = csv(&[
            "570,0.38,76,71,40,4.3,5.5,MC-A,cone,5800",
            "600,,70,65,30,4.0,6.0,MC-B,cone,6100",
            "540,0.41,80,90,55,5.1,4.5,MC-A,cone,5300",
        ]);
        let mut schema = FeatureSchema::concrete();
        let out = read_labeled(text.as_bytes(), &mut schema, Age::Day28, VocabMode::Fit).unwrap();
        assert_eq!(out.dataset.n_rows(), 2);
        assert_eq!(out.dropped, 1);
        // dropped rows do not contribute vocabulary
        assert_eq!(schema.categorical[0].vocab, vec!["MC-A"]);
    }

    #[test]
    fn unknown_code_in_apply_mode_is_named() {
        let mut schema = FeatureSchema::concrete();
        let fit = csv(&["570,0.38,76,71,40,4.3,5.5,MC-A,cone,5800"]);
        read_labeled(fit.as_bytes(), &mut schema, Age::Day28, VocabMode::Fit).unwrap();
        let apply = csv(&["570,0.38,76,71,40,4.3,5.5,MC-Z,cone,5800"]);
        let err = read_labeled(apply.as_bytes(), &mut schema, Age::Day28, VocabMode::Apply).unwrap_err();
        assert!(err.to_string().contains("MC-Z"), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let text = "unit_cement_lb_cy,strength_28d_psi\n570,5800\n";
        let mut schema = FeatureSchema::concrete();
        let err = read_labeled(text.as_bytes(), &mut schema, Age::Day28, VocabMode::Fit).unwrap_err();
        assert_eq!(err, DataError::MissingColumn("wc_ratio".into()));
        // the 7-day target is required when loading that age
        let text = csv(&["570,0.38,76,71,40,4.3,5.5,MC-A,cone,5800"]);
        let err = read_labeled(text.as_bytes(), &mut schema, Age::Day7, VocabMode::Fit).unwrap_err();
        assert_eq!(err, DataError::MissingColumn("strength_7d_psi".into()));
    }

    #[test]
    fn zero_usable_rows_is_an_error() {
        let text = csv(&["570,0.38,76,71,40,4.3,5.5,MC-A,cone,"]);
        let mut schema = FeatureSchema::concrete();
        let err = read_labeled(text.as_bytes(), &mut schema, Age::Day28, VocabMode::Fit).unwrap_err();
        assert_eq!(err, DataError::EmptyDataset);
    }

    #[test]
    fn write_then_read_round_trips() {
        let text = csv(&[
            "570.5,0.381,76.2,71,40,4.3,5.25,MC-A,cone,5800",
            "600,0.35,70,65,30,4,6,MC-B,diagonal_shear,6100.5",
        ]);
        let mut schema = FeatureSchema::concrete();
        let first = read_labeled(text.as_bytes(), &mut schema, Age::Day28, VocabMode::Fit).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &first.dataset).unwrap();
        let second = read_labeled(buf.as_slice(), &mut schema, Age::Day28, VocabMode::Apply).unwrap();
        assert_eq!(first.dataset, second.dataset);
    }
}
