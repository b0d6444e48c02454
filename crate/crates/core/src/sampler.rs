//! Autoregressive sampling of row sentences with rejection of samples that
//! do not parse into schema-valid rows, plus prompt-conditioned generation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{clause, format_number, text_to_row, validate_row, ParseFailureReason, RowSentence};
use crate::dataset::{Cell, ColumnKind, DataTable, Row, TableSchema, CLAUSE_DELIMITER};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, TokenSequence, Vocab, BOS, EOS};
use crate::transformer::{ModelError, TransformerModel};

/// Temperatures below this are treated as greedy decoding.
pub const GREEDY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("logits contain a non-finite value")]
    NonFiniteLogits,
    #[error("prompt must start with BOS")]
    PromptWithoutBos,
    #[error("prompt of {len} tokens exceeds context length {context}")]
    PromptTooLong { len: usize, context: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is given more than once")]
    DuplicateGiven(String),
    #[error("value `{value}` is not valid for column `{column}`")]
    BadGivenValue { column: String, value: String },
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("attempt budget exhausted at row {row}")]
    BudgetExhausted { row: usize, stats: GenerationStats },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    /// Upper bound on newly generated tokens per sentence.
    #[serde(default = "defaults::max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "defaults::max_attempts")]
    pub max_attempts_per_row: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn temperature() -> f64 {
        0.7
    }
    pub fn max_tokens() -> usize {
        256
    }
    pub fn max_attempts() -> usize {
        20
    }
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: defaults::temperature(),
            max_tokens: defaults::max_tokens(),
            max_attempts_per_row: defaults::max_attempts(),
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(SampleError::InvalidConfig("temperature must be finite and positive".into()));
        }
        if self.max_attempts_per_row == 0 {
            return Err(SampleError::InvalidConfig("max_attempts_per_row must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub rows_requested: usize,
    pub rows_emitted: usize,
    pub attempts: usize,
    pub rejections: BTreeMap<ParseFailureReason, usize>,
}

impl GenerationStats {
    pub fn total_rejections(&self) -> usize {
        self.rejections.values().sum()
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.total_rejections() as f64 / self.attempts as f64
        }
    }

    pub fn merge(&mut self, other: &GenerationStats) {
        self.rows_requested += other.rows_requested;
        self.rows_emitted += other.rows_emitted;
        self.attempts += other.attempts;
        for (k, v) in &other.rejections {
            *self.rejections.entry(*k).or_default() += v;
        }
    }
}

/// Draws from `softmax(logits / temperature)`; argmax below [`GREEDY_THRESHOLD`].
pub fn sample_token<S: Scalar, R: Rng + ?Sized>(
    logits: &[S],
    temperature: f64,
    rng: &mut R,
) -> Result<TokenId, SampleError> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(SampleError::NonFiniteLogits);
    }
    if temperature < GREEDY_THRESHOLD {
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        return Ok(best);
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy() / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
}

/// Extends `prompt` until EOS, `max_tokens` new tokens, or the context is full.
pub fn generate_sentence_with<S: Scalar, R: Rng + ?Sized>(
    model: &TransformerModel<S>,
    prompt: &[TokenId],
    config: &SampleConfig,
    rng: &mut R,
) -> Result<TokenSequence, SampleError> {
    if prompt.first() != Some(&BOS) {
        return Err(SampleError::PromptWithoutBos);
    }
    let context = model.config.context_len;
    if prompt.len() > context {
        return Err(SampleError::PromptTooLong {
            len: prompt.len(),
            context,
        });
    }
    let mut ids = prompt.to_vec();
    for _ in 0..config.max_tokens {
        if ids.len() >= context {
            break;
        }
        let logits = model.next_token_logits(&ids)?;
        let next = sample_token(&logits, config.temperature, rng)?;
        ids.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(TokenSequence(ids))
}

/// [`generate_sentence_with`] using a generator seeded from `config.seed`.
pub fn generate_sentence<S: Scalar>(
    model: &TransformerModel<S>,
    prompt: &TokenSequence,
    config: &SampleConfig,
) -> Result<TokenSequence, SampleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    generate_sentence_with(model, prompt.ids(), config, &mut rng)
}

/// Generator for row `index`: one independent stream per row.
pub fn row_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Maps normalized continuous cells of a parsed row back to original units.
pub fn denormalize_row(row: &mut Row, schema: &TableSchema) {
    for (cell, col) in row.iter_mut().zip(&schema.columns) {
        if let Cell::Number(v) = cell {
            *v = col.denormalize(*v);
        }
    }
}

/// A column fixed to a value (original units) for conditional generation.
#[derive(Debug, Clone, PartialEq)]
struct Given {
    column: usize,
    clause: String,
    cell: Cell,
}

fn resolve_givens(schema: &TableSchema, givens: &[(String, String)]) -> Result<Vec<Given>, SampleError> {
    let mut out: Vec<Given> = Vec::with_capacity(givens.len());
    for (name, value) in givens {
        let column = schema
            .index_of(name)
            .ok_or_else(|| SampleError::UnknownColumn(name.clone()))?;
        if out.iter().any(|g| g.column == column) {
            return Err(SampleError::DuplicateGiven(name.clone()));
        }
        let col = &schema.columns[column];
        let bad = || SampleError::BadGivenValue {
            column: name.clone(),
            value: value.clone(),
        };
        let (rendered, cell) = match col.kind {
            ColumnKind::Categorical => {
                let idx = col.category_index(value).ok_or_else(bad)?;
                (value.clone(), Cell::Category(idx))
            }
            ColumnKind::Continuous => {
                let v: f64 = value.trim().parse().map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                (format_number(col.normalize(v)), Cell::Number(v))
            }
        };
        out.push(Given {
            column,
            clause: clause(name, &rendered),
            cell,
        });
    }
    Ok(out)
}

/// Rejection loop for one row. `prompt` is the token prefix and
/// `text_prefix` the clause text it encodes, which is prepended to the decoded
/// continuation before parsing. Tokens before the first generated token that
/// are special (e.g. a separator) need not appear in `text_prefix`. Returns the
/// denormalized row, or `None` once `max_attempts_per_row` samples failed.
#[allow(clippy::too_many_arguments)]
pub fn sample_row<S: Scalar, R: Rng + ?Sized>(
    model: &TransformerModel<S>,
    vocab: &Vocab,
    schema: &TableSchema,
    prompt: &[TokenId],
    text_prefix: &str,
    config: &SampleConfig,
    rng: &mut R,
    stats: &mut GenerationStats,
) -> Result<Option<Row>, SampleError> {
    for _ in 0..config.max_attempts_per_row {
        stats.attempts += 1;
        let seq = generate_sentence_with(model, prompt, config, rng)?;
        let tail = vocab
            .decode(&seq.0[prompt.len()..])
            .expect("sampled ids are within the vocabulary");
        let text = match (text_prefix.is_empty(), tail.is_empty()) {
            (true, _) => tail,
            (false, true) => text_prefix.to_string(),
            (false, false) => format!("{text_prefix} {tail}"),
        };
        match text_to_row(&RowSentence(text), schema) {
            Ok(mut row) => {
                debug_assert!(validate_row(&row, schema));
                denormalize_row(&mut row, schema);
                stats.rows_emitted += 1;
                return Ok(Some(row));
            }
            Err(failure) => {
                *stats.rejections.entry(failure.reason).or_default() += 1;
            }
        }
    }
    Ok(None)
}

/// Samples `n_rows` schema-valid rows from a BOS-only prompt.
pub fn generate_table<S: Scalar>(
    model: &TransformerModel<S>,
    vocab: &Vocab,
    schema: &TableSchema,
    n_rows: usize,
    config: &SampleConfig,
) -> Result<(DataTable, GenerationStats), SampleError> {
    generate_conditional(model, vocab, schema, &[], n_rows, config)
}

/// Samples rows whose prompt fixes the given columns. Emitted rows carry the
/// given values exactly; the other columns are sampled. Continuous cells are
/// returned in original units.
pub fn generate_conditional<S: Scalar>(
    model: &TransformerModel<S>,
    vocab: &Vocab,
    schema: &TableSchema,
    givens: &[(String, String)],
    n_rows: usize,
    config: &SampleConfig,
) -> Result<(DataTable, GenerationStats), SampleError> {
    config.validate()?;
    let givens = resolve_givens(schema, givens)?;
    let mut stats = GenerationStats {
        rows_requested: n_rows,
        ..GenerationStats::default()
    };
    let mut rows = Vec::with_capacity(n_rows);

    if !givens.is_empty() && givens.len() == schema.len() {
        let mut row = vec![Cell::Missing; schema.len()];
        for g in &givens {
            row[g.column] = g.cell.clone();
        }
        rows.extend(std::iter::repeat_n(row, n_rows));
        stats.rows_emitted = n_rows;
        stats.attempts = n_rows;
        return Ok((
            DataTable {
                schema: schema.clone(),
                rows,
            },
            stats,
        ));
    }

    let prompt_text = if givens.is_empty() {
        String::new()
    } else {
        let joined: Vec<&str> = givens.iter().map(|g| g.clause.as_str()).collect();
        format!("{}{}", joined.join(CLAUSE_DELIMITER), CLAUSE_DELIMITER.trim_end())
    };
    let mut prompt = vec![BOS];
    prompt.extend(vocab.encode(&prompt_text, false).0);

    for r in 0..n_rows {
        let mut rng = row_rng(config.seed, r);
        match sample_row(model, vocab, schema, &prompt, &prompt_text, config, &mut rng, &mut stats)? {
            Some(mut row) => {
                for g in &givens {
                    row[g.column] = g.cell.clone();
                }
                rows.push(row);
            }
            None => return Err(SampleError::BudgetExhausted { row: r, stats }),
        }
    }
    Ok((
        DataTable {
            schema: schema.clone(),
            rows,
        },
        stats,
    ))
}
