//! CSV ingestion, schema inference and the fixed preprocessing pipeline:
//! drop incomplete rows, ordinal-encode categoricals, shuffle/split, z-score
//! continuous columns against the training split.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clause delimiter used by the textual codec; forbidden inside column names.
pub const CLAUSE_DELIMITER: &str = ", ";
/// Subject/object separator used by the textual codec; forbidden inside column names.
pub const IS_DELIMITER: &str = " is ";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("task {task:?} requires a {expected:?} target but `{column}` is {found:?}")]
    TaskMismatch {
        column: String,
        task: Task,
        expected: ColumnKind,
        found: ColumnKind,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column name `{0}` contains a reserved delimiter or is empty")]
    ReservedName(String),
    #[error("value `{value}` in column `{column}` contains a reserved delimiter")]
    ReservedValue { column: String, value: String },
    #[error("value `{value}` is not in the categories of column `{column}`")]
    UnknownCategory { column: String, value: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("table contains missing cells")]
    HasMissing,
    #[error("test fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("cannot split an empty table")]
    EmptyTable,
    #[error("tables do not share a schema: {0}")]
    SchemaMismatch(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn target_kind(self) -> ColumnKind {
        match self {
            Task::Classification => ColumnKind::Categorical,
            Task::Regression => ColumnKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Distinct values in first-occurrence order (categorical only).
    #[serde(default)]
    pub categories: Vec<String>,
    /// Population mean over the statistics source (continuous only).
    #[serde(default)]
    pub mean: f64,
    /// Population standard deviation (continuous only).
    #[serde(default = "one")]
    pub std_dev: f64,
    /// Set when the column had zero variance at normalization time.
    #[serde(default)]
    pub zero_variance: bool,
}

fn one() -> f64 {
    1.0
}

impl ColumnSpec {
    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories,
            mean: 0.0,
            std_dev: 1.0,
            zero_variance: false,
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Continuous,
            categories: Vec::new(),
            mean: 0.0,
            std_dev: 1.0,
            zero_variance: false,
        }
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == value)
    }

    /// Maps a normalized value back to original units.
    pub fn denormalize(&self, z: f64) -> f64 {
        if self.zero_variance {
            self.mean
        } else {
            z * self.std_dev + self.mean
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        if self.zero_variance || self.std_dev == 0.0 {
            0.0
        } else {
            (v - self.mean) / self.std_dev
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
    pub target_column: String,
    pub task: Task,
}

impl TableSchema {
    /// Validates column naming, category lists and the target/task pairing.
    pub fn new(columns: Vec<ColumnSpec>, target_column: impl Into<String>, task: Task) -> Result<Self> {
        let schema = TableSchema {
            columns,
            target_column: target_column.into(),
            task,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for col in &self.columns {
            if col.name.is_empty()
                || col.name.contains(CLAUSE_DELIMITER)
                || col.name.contains(IS_DELIMITER)
                || col.name.trim() != col.name
            {
                return Err(DatasetError::ReservedName(col.name.clone()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(DatasetError::DuplicateColumn(col.name.clone()));
            }
            match col.kind {
                ColumnKind::Categorical => {
                    let mut uniq = std::collections::HashSet::new();
                    for c in &col.categories {
                        if !uniq.insert(c.as_str()) {
                            return Err(DatasetError::InvalidSchema(format!(
                                "column `{}` lists category `{c}` twice",
                                col.name
                            )));
                        }
                    }
                }
                ColumnKind::Continuous => {
                    if !(col.std_dev >= 0.0) || !col.mean.is_finite() {
                        return Err(DatasetError::InvalidSchema(format!(
                            "column `{}` has invalid statistics",
                            col.name
                        )));
                    }
                }
            }
        }
        let target = self
            .column(&self.target_column)
            .ok_or_else(|| DatasetError::MissingTarget(self.target_column.clone()))?;
        if target.kind != self.task.target_kind() {
            return Err(DatasetError::TaskMismatch {
                column: target.name.clone(),
                task: self.task,
                expected: self.task.target_kind(),
                found: target.kind,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target_index(&self) -> usize {
        self.index_of(&self.target_column)
            .expect("validated schema contains its target")
    }

    /// Same column names and kinds, in the same order.
    pub fn is_compatible(&self, other: &TableSchema) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind)
            && self.target_column == other.target_column
            && self.task == other.task
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: TableSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    /// Writes `<dir>/<name>.schema.json`.
    pub fn write_sidecar(&self, dir: &Path, name: &str) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("{name}.schema.json"));
        fs::write(&path, self.to_json()?).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    /// Raw categorical text, before encoding.
    Text(String),
    /// Index into the column's `categories`.
    Category(usize),
    Number(f64),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    /// Numeric view of an encoded cell (category index or number).
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Category(i) => Some(*i as f64),
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }
}

pub type Row = Vec<Cell>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub schema: TableSchema,
    pub rows: Vec<Row>,
}

impl DataTable {
    /// Builds a table after checking arity, category ranges and cell kinds.
    pub fn new(schema: TableSchema, rows: Vec<Row>) -> Result<Self> {
        schema.validate()?;
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(DatasetError::InvalidRow {
                    row: r,
                    reason: format!("expected {} cells, found {}", schema.len(), row.len()),
                });
            }
            for (cell, col) in row.iter().zip(&schema.columns) {
                let ok = match (cell, col.kind) {
                    (Cell::Missing, _) => true,
                    (Cell::Text(_), ColumnKind::Categorical) => true,
                    (Cell::Category(i), ColumnKind::Categorical) => *i < col.categories.len(),
                    (Cell::Number(_), ColumnKind::Continuous) => true,
                    _ => false,
                };
                if !ok {
                    return Err(DatasetError::InvalidRow {
                        row: r,
                        reason: format!("cell {cell:?} does not fit column `{}`", col.name),
                    });
                }
            }
        }
        Ok(DataTable { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_missing(&self) -> bool {
        self.rows.iter().flatten().any(Cell::is_missing)
    }

    /// Renders a cell in original units as CSV text.
    pub fn cell_text(&self, column: usize, cell: &Cell) -> String {
        match cell {
            Cell::Text(s) => s.clone(),
            Cell::Category(i) => self.schema.columns[column].categories[*i].clone(),
            Cell::Number(v) => format!("{v}"),
            Cell::Missing => String::new(),
        }
    }

    /// Writes the table as CSV with the schema's column names as header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv_to(file).map_err(|e| match e {
            DatasetError::Io { source, .. } => DatasetError::Io {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    /// Header plus one record per row, written to any sink.
    pub fn write_csv_to<W: std::io::Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        for row in &self.rows {
            writer.write_record(row.iter().enumerate().map(|(j, c)| self.cell_text(j, c)))?;
        }
        writer.flush().map_err(|source| DatasetError::Io {
            path: "<writer>".into(),
            source,
        })?;
        Ok(())
    }

    /// Copies a subset of rows (by index) keeping the schema.
    pub fn select(&self, indices: &[usize]) -> DataTable {
        DataTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Column values of an encoded table as `f64` (category index or number).
    pub fn column_values(&self, column: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r[column].as_f64())
            .collect()
    }
}

fn is_number(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a CSV file: header row, comma delimiter, RFC-4180 quoting.
pub fn load_csv(path: impl AsRef<Path>, target: &str, task: Task) -> Result<DataTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, target, task)
}

/// In-memory variant of [`load_csv`].
pub fn parse_csv(text: &str, target: &str, task: Task) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let width = header.len();
    let mut raw: Vec<Vec<Option<String>>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != width {
            return Err(DatasetError::Arity {
                line: record.position().map(|p| p.line()).unwrap_or(0),
                expected: width,
                found: record.len(),
            });
        }
        raw.push(
            record
                .iter()
                .map(|f| {
                    let t = f.trim();
                    (!t.is_empty()).then(|| t.to_string())
                })
                .collect(),
        );
    }

    let mut columns = Vec::with_capacity(width);
    for (j, name) in header.iter().enumerate() {
        let continuous = raw
            .iter()
            .filter_map(|r| r[j].as_deref())
            .all(|v| is_number(v).is_some());
        if continuous {
            columns.push(ColumnSpec::continuous(name.clone()));
        } else {
            let mut categories: Vec<String> = Vec::new();
            let mut seen = HashMap::new();
            for v in raw.iter().filter_map(|r| r[j].as_deref()) {
                if v.contains(CLAUSE_DELIMITER) || v.ends_with(',') {
                    return Err(DatasetError::ReservedValue {
                        column: name.clone(),
                        value: v.to_string(),
                    });
                }
                if !seen.contains_key(v) {
                    seen.insert(v.to_string(), categories.len());
                    categories.push(v.to_string());
                }
            }
            columns.push(ColumnSpec::categorical(name.clone(), categories));
        }
    }
    if !header.iter().any(|h| h == target) {
        return Err(DatasetError::MissingTarget(target.to_string()));
    }
    let schema = TableSchema::new(columns, target, task)?;
    let rows = raw
        .into_iter()
        .map(|r| {
            r.into_iter()
                .zip(&schema.columns)
                .map(|(v, col)| match v {
                    None => Cell::Missing,
                    Some(v) => match col.kind {
                        ColumnKind::Continuous => Cell::Number(is_number(&v).expect("checked")),
                        ColumnKind::Categorical => Cell::Text(v),
                    },
                })
                .collect()
        })
        .collect();
    Ok(DataTable { schema, rows })
}

/// Gives two raw tables with the same columns one shared category list per
/// categorical column: the first table's order, then values only the second
/// has. Needed before encoding tables that were parsed separately.
pub fn unify_categories(a: &DataTable, b: &DataTable) -> Result<(DataTable, DataTable)> {
    if !a.schema.is_compatible(&b.schema) {
        return Err(DatasetError::SchemaMismatch(
            "tables differ in column names, kinds or target".into(),
        ));
    }
    let mut schema = a.schema.clone();
    for (col, other) in schema.columns.iter_mut().zip(&b.schema.columns) {
        for c in &other.categories {
            if col.category_index(c).is_none() {
                col.categories.push(c.clone());
            }
        }
    }
    let with = |t: &DataTable| DataTable {
        schema: schema.clone(),
        rows: t.rows.clone(),
    };
    Ok((with(a), with(b)))
}

/// Keeps exactly the rows without missing cells, in order.
pub fn drop_incomplete(table: &DataTable) -> DataTable {
    DataTable {
        schema: table.schema.clone(),
        rows: table
            .rows
            .iter()
            .filter(|r| !r.iter().any(Cell::is_missing))
            .cloned()
            .collect(),
    }
}

/// Replaces categorical text by its index in the schema's category list.
/// A column with an empty category list gets one built in first-occurrence order.
pub fn encode_categoricals(table: &DataTable) -> Result<DataTable> {
    if table.has_missing() {
        return Err(DatasetError::HasMissing);
    }
    let mut schema = table.schema.clone();
    for (j, col) in schema.columns.iter_mut().enumerate() {
        if col.kind == ColumnKind::Categorical && col.categories.is_empty() {
            for row in &table.rows {
                if let Cell::Text(v) = &row[j] {
                    if col.category_index(v).is_none() {
                        col.categories.push(v.clone());
                    }
                }
            }
        }
    }
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let mut out = Vec::with_capacity(row.len());
        for (cell, col) in row.iter().zip(&schema.columns) {
            out.push(match cell {
                Cell::Text(v) => Cell::Category(col.category_index(v).ok_or_else(|| {
                    DatasetError::UnknownCategory {
                        column: col.name.clone(),
                        value: v.clone(),
                    }
                })?),
                other => other.clone(),
            });
        }
        rows.push(out);
    }
    Ok(DataTable { schema, rows })
}

/// Population mean and standard deviation of each continuous column.
fn column_stats(table: &DataTable, column: usize) -> (f64, f64) {
    let values = table.column_values(column);
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores every continuous column with statistics taken from `stats_source`.
pub fn normalize_continuous(table: &DataTable, stats_source: &DataTable) -> Result<DataTable> {
    normalize_continuous_excluding(table, stats_source, &[])
}

/// As [`normalize_continuous`], leaving the named columns (e.g. keys) untouched.
pub fn normalize_continuous_excluding(
    table: &DataTable,
    stats_source: &DataTable,
    excluded: &[&str],
) -> Result<DataTable> {
    if !table.schema.is_compatible(&stats_source.schema) {
        return Err(DatasetError::SchemaMismatch(
            "normalization source has different columns".into(),
        ));
    }
    if table.has_missing() || stats_source.has_missing() {
        return Err(DatasetError::HasMissing);
    }
    let mut schema = table.schema.clone();
    for (j, col) in schema.columns.iter_mut().enumerate() {
        if col.kind != ColumnKind::Continuous || excluded.contains(&col.name.as_str()) {
            continue;
        }
        let (mean, std_dev) = column_stats(stats_source, j);
        col.mean = mean;
        col.std_dev = std_dev;
        col.zero_variance = std_dev == 0.0;
    }
    let rows = table
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&schema.columns)
                .map(|(cell, col)| match cell {
                    Cell::Number(v)
                        if col.kind == ColumnKind::Continuous
                            && !excluded.contains(&col.name.as_str()) =>
                    {
                        Cell::Number(col.normalize(*v))
                    }
                    other => other.clone(),
                })
                .collect()
        })
        .collect();
    Ok(DataTable { schema, rows })
}

/// Maps normalized continuous cells back to original units via the schema's statistics.
pub fn denormalize_continuous(table: &DataTable) -> DataTable {
    let rows = table
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&table.schema.columns)
                .map(|(cell, col)| match cell {
                    Cell::Number(v) => Cell::Number(col.denormalize(*v)),
                    other => other.clone(),
                })
                .collect()
        })
        .collect();
    DataTable {
        schema: table.schema.clone(),
        rows,
    }
}

/// Seeded permutation of row indices followed by a head/tail split.
/// The test part has `round(test_fraction * n)` rows.
pub fn shuffle_split(table: &DataTable, test_fraction: f64, seed: u64) -> Result<(DataTable, DataTable)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DatasetError::BadFraction(test_fraction));
    }
    if table.is_empty() {
        return Err(DatasetError::EmptyTable);
    }
    let n = table.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_test = (test_fraction * n as f64).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test);
    Ok((table.select(train_idx), table.select(test_idx)))
}

/// Result of the full preprocessing chain.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: DataTable,
    pub test: DataTable,
}

/// drop_incomplete → encode_categoricals → shuffle_split → normalize_continuous,
/// with normalization statistics taken from the training split only.
pub fn preprocess(table: &DataTable, test_fraction: f64, seed: u64) -> Result<Prepared> {
    let complete = drop_incomplete(table);
    let encoded = encode_categoricals(&complete)?;
    let (train, test) = shuffle_split(&encoded, test_fraction, seed)?;
    let train_n = normalize_continuous(&train, &train)?;
    let test_n = normalize_continuous(&test, &train)?;
    Ok(Prepared {
        train: train_n,
        test: test_n,
    })
}
