//! Row ⇄ sentence codec. A row becomes comma-joined `"<column> is <value>"`
//! clauses in a (usually shuffled) column order; parsing accepts any clause
//! order and reports why malformed model output was rejected.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cell, ColumnKind, Row, TableSchema, CLAUSE_DELIMITER, IS_DELIMITER};

/// Fractional digits used when rendering continuous values.
pub const NUMBER_PRECISION: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("cell for column `{0}` is missing")]
    MissingCell(String),
    #[error("row has {found} cells, schema has {expected}")]
    Arity { expected: usize, found: usize },
    #[error("cell {cell:?} does not fit column `{column}`")]
    BadCell { column: String, cell: Cell },
    #[error("invalid column order {0:?}")]
    BadOrder(Vec<usize>),
}

/// A permutation of column indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnOrder(Vec<usize>);

impl ColumnOrder {
    pub fn new(permutation: Vec<usize>) -> Result<Self, CodecError> {
        let mut seen = vec![false; permutation.len()];
        for &i in &permutation {
            if i >= seen.len() || seen[i] {
                return Err(CodecError::BadOrder(permutation));
            }
            seen[i] = true;
        }
        Ok(ColumnOrder(permutation))
    }

    pub fn identity(k: usize) -> Self {
        ColumnOrder((0..k).collect())
    }

    /// Fisher–Yates shuffle drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        let mut p: Vec<usize> = (0..k).collect();
        p.shuffle(rng);
        ColumnOrder(p)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Uniform random column order, deterministic per seed.
pub fn permute_order(schema: &TableSchema, rng_seed: u64) -> ColumnOrder {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    ColumnOrder::random(schema.len(), &mut rng)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowSentence(pub String);

impl RowSentence {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RowSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RowSentence {
    fn from(s: &str) -> Self {
        RowSentence(s.to_string())
    }
}

pub fn format_number(v: f64) -> String {
    format!("{v:.prec$}", prec = NUMBER_PRECISION)
}

/// Renders one cell as clause text. Categorical cells may be encoded or raw.
pub fn render_value(schema: &TableSchema, column: usize, cell: &Cell) -> Result<String, CodecError> {
    let col = &schema.columns[column];
    match (cell, col.kind) {
        (Cell::Missing, _) => Err(CodecError::MissingCell(col.name.clone())),
        (Cell::Number(v), ColumnKind::Continuous) => Ok(format_number(*v)),
        (Cell::Category(i), ColumnKind::Categorical) if *i < col.categories.len() => {
            Ok(col.categories[*i].clone())
        }
        (Cell::Text(s), ColumnKind::Categorical) => Ok(s.clone()),
        _ => Err(CodecError::BadCell {
            column: col.name.clone(),
            cell: cell.clone(),
        }),
    }
}

pub fn clause(name: &str, value: &str) -> String {
    format!("{name}{IS_DELIMITER}{value}")
}

/// Renders `row` as clauses in `order`.
pub fn row_to_text(row: &Row, schema: &TableSchema, order: &ColumnOrder) -> Result<RowSentence, CodecError> {
    if row.len() != schema.len() {
        return Err(CodecError::Arity {
            expected: schema.len(),
            found: row.len(),
        });
    }
    if order.len() != schema.len() {
        return Err(CodecError::BadOrder(order.0.clone()));
    }
    let clauses = order
        .as_slice()
        .iter()
        .map(|&j| Ok(clause(&schema.columns[j].name, &render_value(schema, j, &row[j])?)))
        .collect::<Result<Vec<_>, CodecError>>()?;
    Ok(RowSentence(clauses.join(CLAUSE_DELIMITER)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailureReason {
    MissingColumn,
    DuplicateColumn,
    UnknownColumn,
    BadCategory,
    BadNumber,
}

impl ParseFailureReason {
    pub const ALL: [ParseFailureReason; 5] = [
        ParseFailureReason::MissingColumn,
        ParseFailureReason::DuplicateColumn,
        ParseFailureReason::UnknownColumn,
        ParseFailureReason::BadCategory,
        ParseFailureReason::BadNumber,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParseFailureReason::MissingColumn => "missing_column",
            ParseFailureReason::DuplicateColumn => "duplicate_column",
            ParseFailureReason::UnknownColumn => "unknown_column",
            ParseFailureReason::BadCategory => "bad_category",
            ParseFailureReason::BadNumber => "bad_number",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}: {detail}", reason.as_str())]
pub struct ParseFailure {
    pub reason: ParseFailureReason,
    pub detail: String,
}

impl ParseFailure {
    fn new(reason: ParseFailureReason, detail: impl Into<String>) -> Self {
        ParseFailure {
            reason,
            detail: detail.into(),
        }
    }
}

/// Parses a sentence back into an encoded row. Never panics on arbitrary input.
pub fn text_to_row(sentence: &RowSentence, schema: &TableSchema) -> Result<Row, ParseFailure> {
    use ParseFailureReason::*;

    let mut cells: Vec<Option<Cell>> = vec![None; schema.len()];
    let text = sentence.as_str();
    if !text.is_empty() {
        for part in text.split(CLAUSE_DELIMITER) {
            let Some((name, value)) = part.split_once(IS_DELIMITER) else {
                return Err(ParseFailure::new(UnknownColumn, format!("clause `{part}` has no subject")));
            };
            let Some(j) = schema.index_of(name) else {
                return Err(ParseFailure::new(UnknownColumn, name));
            };
            if cells[j].is_some() {
                return Err(ParseFailure::new(DuplicateColumn, name));
            }
            let col = &schema.columns[j];
            let cell = match col.kind {
                ColumnKind::Categorical => match col.category_index(value) {
                    Some(i) => Cell::Category(i),
                    None => return Err(ParseFailure::new(BadCategory, format!("{name}={value}"))),
                },
                ColumnKind::Continuous => match value.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Number(v),
                    _ => return Err(ParseFailure::new(BadNumber, format!("{name}={value}"))),
                },
            };
            cells[j] = Some(cell);
        }
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(j, c)| c.ok_or_else(|| ParseFailure::new(MissingColumn, schema.columns[j].name.clone())))
        .collect()
}

/// True iff arity matches, cells match column kinds, category indices are in
/// range and numbers are finite.
pub fn validate_row(row: &Row, schema: &TableSchema) -> bool {
    row.len() == schema.len()
        && row.iter().zip(&schema.columns).all(|(cell, col)| match (cell, col.kind) {
            (Cell::Category(i), ColumnKind::Categorical) => *i < col.categories.len(),
            (Cell::Number(v), ColumnKind::Continuous) => v.is_finite(),
            _ => false,
        })
}
