//! Dataset CSV files: one header row, numeric feature columns, an optional
//! label column and an optional class-tag column.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use aad_core::data::{Dataset, FeatureMatrix, Label};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}, column `{column}`: {value:?} is not a number")]
    NotANumber { line: u64, column: String, value: String },
    #[error("line {line}, column `{column}`: value is not finite")]
    NonFinite { line: u64, column: String },
    #[error("line {line}: unrecognized label {value:?}")]
    UnknownLabel { line: u64, value: String },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("no feature columns")]
    NoFeatures,
    #[error(transparent)]
    Data(#[from] aad_core::Error),
}

/// Column naming and label spellings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    /// A file without this column loads with every label hidden.
    pub label_column: String,
    /// Must be present when set.
    pub class_column: Option<String>,
    pub anomaly_values: Vec<String>,
    pub nominal_values: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: "label".into(),
            class_column: None,
            anomaly_values: vec!["1".into(), "anomaly".into()],
            nominal_values: vec!["-1".into(), "nominal".into()],
        }
    }
}

impl CsvOptions {
    fn parse_label(&self, raw: &str, line: u64) -> Result<Option<Label>, CsvError> {
        let v = raw.trim();
        if v.is_empty() {
            Ok(None)
        } else if self.anomaly_values.iter().any(|a| a.eq_ignore_ascii_case(v)) {
            Ok(Some(Label::Anomaly))
        } else if self.nominal_values.iter().any(|a| a.eq_ignore_ascii_case(v)) {
            Ok(Some(Label::Nominal))
        } else {
            Err(CsvError::UnknownLabel { line, value: v.to_string() })
        }
    }
}

/// A dataset together with its feature column names.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub feature_names: Vec<String>,
}

pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<LoadedCsv, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let label_idx = find(&options.label_column);
    let class_idx = match &options.class_column {
        Some(c) => Some(find(c).ok_or_else(|| CsvError::MissingColumn(c.clone()))?),
        None => None,
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != label_idx && Some(i) != class_idx).collect();
    if feature_cols.is_empty() {
        return Err(CsvError::NoFeatures);
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut features = FeatureMatrix::new(feature_cols.len());
    let mut labels = Vec::new();
    let mut tags = Vec::new();
    let mut row = Vec::with_capacity(feature_cols.len());
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        row.clear();
        for (&c, name) in feature_cols.iter().zip(&feature_names) {
            let raw = &record[c];
            let v: f64 = raw.parse().map_err(|_| CsvError::NotANumber { line, column: name.clone(), value: raw.to_string() })?;
            if !v.is_finite() {
                return Err(CsvError::NonFinite { line, column: name.clone() });
            }
            row.push(v);
        }
        features.push_row(&row)?;
        labels.push(match label_idx {
            Some(i) => options.parse_label(&record[i], line)?,
            None => None,
        });
        tags.push(class_idx.map(|i| record[i].to_string()).filter(|t| !t.is_empty()));
    }
    Ok(LoadedCsv { dataset: Dataset::new(features, labels, tags)?, feature_names })
}

pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<LoadedCsv, CsvError> {
    let file = File::open(path).map_err(|source| CsvError::Open { path: path.display().to_string(), source })?;
    read_csv(file, options)
}

/// Writes features (shortest round-trip float text), labels as `1`/`-1` and,
/// if `options.class_column` is set, the class tags. Unknown labels are
/// written as empty cells.
pub fn write_csv<W: Write>(writer: W, data: &LoadedCsv, options: &CsvOptions) -> Result<(), CsvError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names.iter().map(String::as_str).collect();
    header.push(&options.label_column);
    if let Some(c) = &options.class_column {
        header.push(c);
    }
    wtr.write_record(&header)?;
    let ds = &data.dataset;
    let truth = ds.ground_truth();
    for (i, x) in ds.features().rows().enumerate() {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(match truth.label(i) {
            Some(Label::Anomaly) => "1".into(),
            Some(Label::Nominal) => "-1".into(),
            None => String::new(),
        });
        if options.class_column.is_some() {
            rec.push(ds.class_tags()[i].clone().unwrap_or_default());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Default feature names `x0, x1, ...` for datasets built in memory.
pub fn with_default_names(dataset: Dataset) -> LoadedCsv {
    let feature_names = (0..dataset.d()).map(|i| format!("x{i}")).collect();
    LoadedCsv { dataset, feature_names }
}
