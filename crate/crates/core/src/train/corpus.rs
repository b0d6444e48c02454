use rand_chacha::ChaCha8Rng;

use crate::codec::{row_to_text, ColumnOrder};
use crate::dataset::{Row, TableSchema};
use crate::tokenizer::{TokenId, TokenSequence, Vocab, PAD};

use super::TrainError;

/// One training sequence split into model inputs and shifted targets.
/// Targets equal to PAD are excluded from the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub inputs: Vec<TokenId>,
    pub targets: Vec<TokenId>,
}

impl Example {
    pub fn from_sequence(seq: &[TokenId]) -> Self {
        Self::with_loss_from(seq, 1)
    }

    /// Only tokens at index ≥ `start` are predicted; earlier targets are masked.
    pub fn with_loss_from(seq: &[TokenId], start: usize) -> Self {
        let n = seq.len().saturating_sub(1);
        let inputs = seq[..n].to_vec();
        let targets = (1..=n)
            .map(|i| if i >= start { seq[i] } else { PAD })
            .collect();
        Example { inputs, targets }
    }

    pub fn target_count(&self) -> usize {
        self.targets.iter().filter(|&&t| t != PAD).count()
    }

    /// Length of the full sequence (inputs plus the final target).
    pub fn sequence_len(&self) -> usize {
        self.inputs.len() + 1
    }
}

/// Source of training examples. `example` may draw from `rng`, e.g. to
/// resample a column order for every visit.
pub trait Corpus {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Longest full sequence the corpus can produce.
    fn max_len(&self) -> usize;

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example, TrainError>;
}

impl Corpus for [TokenSequence] {
    fn len(&self) -> usize {
        <[TokenSequence]>::len(self)
    }

    fn max_len(&self) -> usize {
        self.iter().map(TokenSequence::len).max().unwrap_or(0)
    }

    fn example(&self, index: usize, _rng: &mut ChaCha8Rng) -> Result<Example, TrainError> {
        Ok(Example::from_sequence(self[index].ids()))
    }
}

/// Encoded table rows rendered with a fresh random column order on every visit.
pub struct RowCorpus<'a> {
    rows: &'a [Row],
    schema: &'a TableSchema,
    vocab: &'a Vocab,
    max_len: usize,
}

impl<'a> RowCorpus<'a> {
    pub fn new(rows: &'a [Row], schema: &'a TableSchema, vocab: &'a Vocab) -> Result<Self, TrainError> {
        let identity = ColumnOrder::identity(schema.len());
        let mut max_len = 0;
        for row in rows {
            let text = row_to_text(row, schema, &identity)?;
            max_len = max_len.max(vocab.encode(text.as_str(), true).len());
        }
        Ok(RowCorpus {
            rows,
            schema,
            vocab,
            max_len,
        })
    }
}

impl Corpus for RowCorpus<'_> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example, TrainError> {
        let order = ColumnOrder::random(self.schema.len(), rng);
        let text = row_to_text(&self.rows[index], self.schema, &order)?;
        Ok(Example::from_sequence(self.vocab.encode(text.as_str(), true).ids()))
    }
}
