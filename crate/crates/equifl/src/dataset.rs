//! CSV ingestion with a declarative schema, one-hot encoding and z-scoring.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use equifl_core::Record;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cells treated as missing.
const MISSING: [&str; 2] = ["", "?"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    pub sensitive: String,
    /// Declared values of the sensitive column; the position is the group index.
    pub sensitive_values: Vec<String>,
    pub label: String,
    /// Label value that counts as the positive class.
    pub positive: String,
    /// Also feed the sensitive attribute to the model (one-hot).
    #[serde(default)]
    pub include_sensitive: bool,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if self.numeric.is_empty() && self.categorical.is_empty() && !self.include_sensitive {
            return Err(Error::Schema("no feature columns declared".into()));
        }
        if self.sensitive_values.is_empty() {
            return Err(Error::Schema("sensitive_values is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for name in self.numeric.iter().chain(&self.categorical) {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("column `{name}` is declared twice")));
            }
            if *name == self.sensitive {
                return Err(Error::Schema(format!(
                    "sensitive column `{name}` is listed as a feature; use include_sensitive instead"
                )));
            }
            if *name == self.label {
                return Err(Error::Schema(format!(
                    "label column `{name}` is listed as a feature"
                )));
            }
        }
        let distinct: BTreeSet<&String> = self.sensitive_values.iter().collect();
        if distinct.len() != self.sensitive_values.len() {
            return Err(Error::Schema("sensitive_values has duplicates".into()));
        }
        Ok(())
    }

    fn declared_columns(&self) -> impl Iterator<Item = &String> {
        self.numeric
            .iter()
            .chain(&self.categorical)
            .chain([&self.sensitive, &self.label])
    }
}

/// One parsed row, before encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    /// 0-based data row in the file (the header is not counted).
    pub source_row: usize,
    pub numeric: Vec<f64>,
    pub categorical: Vec<String>,
    pub sensitive: usize,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub path: PathBuf,
    pub rows: Vec<RawRow>,
    pub dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    MISSING.contains(&cell.trim())
}

/// Reads `path`, keeping rows whose declared columns are all present and
/// parseable. Other rows are dropped and counted.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, &e))?;
    let header = reader.headers().map_err(|e| csv_error(path, &e))?.clone();
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let column = |name: &String| -> Result<usize> {
        position
            .get(name.as_str())
            .copied()
            .ok_or_else(|| Error::Schema(format!("{}: header has no column `{name}`", path.display())))
    };
    for name in schema.declared_columns() {
        column(name)?;
    }
    let numeric_cols = schema.numeric.iter().map(column).collect::<Result<Vec<_>>>()?;
    let categorical_cols = schema
        .categorical
        .iter()
        .map(column)
        .collect::<Result<Vec<_>>>()?;
    let sensitive_col = column(&schema.sensitive)?;
    let label_col = column(&schema.label)?;

    let mut rows = Vec::new();
    let mut dropped = 0;
    for (source_row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let all_present = numeric_cols
            .iter()
            .chain(&categorical_cols)
            .chain([&sensitive_col, &label_col])
            .all(|&i| !is_missing(cell(i)));
        if !all_present {
            dropped += 1;
            continue;
        }
        let numeric: Option<Vec<f64>> = numeric_cols
            .iter()
            .map(|&i| cell(i).parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let Some(numeric) = numeric else {
            dropped += 1;
            continue;
        };
        let Some(sensitive) = schema
            .sensitive_values
            .iter()
            .position(|v| v == cell(sensitive_col))
        else {
            dropped += 1;
            continue;
        };
        rows.push(RawRow {
            source_row,
            numeric,
            categorical: categorical_cols.iter().map(|&i| cell(i).to_string()).collect(),
            sensitive,
            label: cell(label_col) == schema.positive,
        });
    }
    if dropped > 0 {
        warn!(
            "{}: dropped {dropped} rows with missing or invalid values",
            path.display()
        );
    }
    Ok(RawTable {
        path: path.to_path_buf(),
        rows,
        dropped,
    })
}

fn csv_error(path: &Path, e: &csv::Error) -> Error {
    if let csv::ErrorKind::Io(io) = e.kind() {
        return Error::io(path, std::io::Error::new(io.kind(), io.to_string()));
    }
    Error::Csv {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericMoments {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation; zero means the column encodes to 0.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySet {
    pub name: String,
    pub categories: Vec<String>,
}

/// Everything needed to encode rows identically later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub numeric: Vec<NumericMoments>,
    pub categorical: Vec<CategorySet>,
    pub sensitive_values: Vec<String>,
    pub include_sensitive: bool,
}

impl Encoder {
    /// Moments and category sets taken from the whole table.
    pub fn fit(table: &RawTable, schema: &DatasetSchema) -> Result<Encoder> {
        if table.rows.is_empty() {
            return Err(Error::Schema(format!("{}: no usable rows", table.path.display())));
        }
        let n = table.rows.len() as f64;
        let numeric = schema
            .numeric
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mean = table.rows.iter().map(|r| r.numeric[j]).sum::<f64>() / n;
                let var = table
                    .rows
                    .iter()
                    .map(|r| (r.numeric[j] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                let std = var.sqrt();
                if std == 0.0 {
                    warn!("numeric column `{name}` has zero variance; encoding it as 0");
                }
                NumericMoments {
                    name: name.clone(),
                    mean,
                    std,
                }
            })
            .collect();
        let categorical = schema
            .categorical
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let cats: BTreeSet<&str> = table.rows.iter().map(|r| r.categorical[j].as_str()).collect();
                CategorySet {
                    name: name.clone(),
                    categories: cats.into_iter().map(str::to_string).collect(),
                }
            })
            .collect();
        Ok(Encoder {
            numeric,
            categorical,
            sensitive_values: schema.sensitive_values.clone(),
            include_sensitive: schema.include_sensitive,
        })
    }

    pub fn dim(&self) -> usize {
        self.numeric.len()
            + self.categorical.iter().map(|c| c.categories.len()).sum::<usize>()
            + if self.include_sensitive {
                self.sensitive_values.len()
            } else {
                0
            }
    }

    /// Names of the encoded feature columns, in order.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.numeric.iter().map(|m| m.name.clone()).collect();
        for c in &self.categorical {
            names.extend(c.categories.iter().map(|v| format!("{}={v}", c.name)));
        }
        if self.include_sensitive {
            names.extend(self.sensitive_values.iter().map(|v| format!("sensitive={v}")));
        }
        names
    }

    /// Unknown categories encode as all zeros.
    pub fn transform_row(&self, row: &RawRow) -> Record {
        let mut features = Vec::with_capacity(self.dim());
        for (m, &v) in self.numeric.iter().zip(&row.numeric) {
            features.push(if m.std > 0.0 { (v - m.mean) / m.std } else { 0.0 });
        }
        for (c, v) in self.categorical.iter().zip(&row.categorical) {
            features.extend(c.categories.iter().map(|cat| if cat == v { 1.0 } else { 0.0 }));
        }
        if self.include_sensitive {
            features
                .extend((0..self.sensitive_values.len()).map(|g| if g == row.sensitive { 1.0 } else { 0.0 }));
        }
        Record {
            features,
            sensitive: row.sensitive,
            label: row.label,
        }
    }

    pub fn transform(&self, table: &RawTable) -> Vec<Record> {
        table.rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

/// Fits an encoder on `table` and encodes it.
pub fn preprocess(table: &RawTable, schema: &DatasetSchema) -> Result<(Vec<Record>, Encoder)> {
    let encoder = Encoder::fit(table, schema)?;
    Ok((encoder.transform(table), encoder))
}
