//! Single-table synthesizer: schema, vocabulary and model kept together so a
//! fitted pipeline can be saved, reloaded and sampled.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{row_to_text, CodecError, ColumnOrder, RowSentence};
use crate::dataset::{DataTable, DatasetError, Row, TableSchema};
use crate::sampler::{generate_conditional, GenerationStats, SampleConfig, SampleError};
use crate::tokenizer::{TokenizerError, Vocab};
use crate::train::{train_corpus, Corpus, RowCorpus, TrainConfig, TrainError, TrainTrace};
use crate::transformer::{read_checkpoint, write_checkpoint, ModelConfig, ModelError};
use crate::Model;

/// Slack added to the longest training sequence when sizing the context.
pub const CONTEXT_MARGIN: usize = 4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("saved model does not match its vocabulary ({model} vs {vocab} tokens)")]
    VocabMismatch { model: usize, vocab: usize },
}

/// Depth, width and head count of a model; the vocabulary and context are
/// derived from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
}

impl ModelShape {
    pub fn new(layers: usize, hidden_dim: usize, heads: usize) -> Self {
        ModelShape {
            layers,
            hidden_dim,
            heads,
        }
    }

    pub fn config(&self, vocab_size: usize, context_len: usize) -> ModelConfig {
        ModelConfig::new(self.layers, self.hidden_dim, self.heads, vocab_size, context_len)
    }
}

/// Vocabulary over the identity-order sentences of `rows`. Column order does
/// not change the word multiset, so this covers every permutation.
pub fn table_vocab(rows: &[Row], schema: &TableSchema) -> Result<Vocab, SynthError> {
    let order = ColumnOrder::identity(schema.len());
    let sentences = rows
        .iter()
        .map(|r| row_to_text(r, schema, &order))
        .collect::<Result<Vec<RowSentence>, _>>()?;
    Ok(Vocab::build(sentences.iter())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesizer {
    /// Schema of the training table, carrying its normalization statistics.
    pub schema: TableSchema,
    pub vocab: Vocab,
    pub model: Model,
}

impl Synthesizer {
    /// Fits on an encoded, normalized table. Column orders are resampled
    /// for every example visit.
    pub fn fit(train: &DataTable, shape: ModelShape, config: &TrainConfig) -> Result<(Self, TrainTrace), SynthError> {
        let vocab = table_vocab(&train.rows, &train.schema)?;
        let corpus = RowCorpus::new(&train.rows, &train.schema, &vocab)?;
        let model_config = shape.config(vocab.len(), corpus.max_len() + CONTEXT_MARGIN);
        let model = Model::init(model_config, config.seed)?;
        let (model, trace) = train_corpus(model, &corpus, config)?;
        Ok((
            Synthesizer {
                schema: train.schema.clone(),
                vocab,
                model,
            },
            trace,
        ))
    }

    /// Rows in original units.
    pub fn sample(&self, n_rows: usize, config: &SampleConfig) -> Result<(DataTable, GenerationStats), SampleError> {
        generate_conditional(&self.model, &self.vocab, &self.schema, &[], n_rows, config)
    }

    pub fn sample_conditional(
        &self,
        givens: &[(String, String)],
        n_rows: usize,
        config: &SampleConfig,
    ) -> Result<(DataTable, GenerationStats), SampleError> {
        generate_conditional(&self.model, &self.vocab, &self.schema, givens, n_rows, config)
    }

    /// Writes the checkpoint, vocabulary and schema into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        write_checkpoint(&self.model, &dir.join(CHECKPOINT_FILE))?;
        let vocab_path = dir.join(VOCAB_FILE);
        fs::write(&vocab_path, self.vocab.to_json()).map_err(io(&vocab_path))?;
        let schema_path = dir.join(SCHEMA_FILE);
        fs::write(&schema_path, self.schema.to_json()?).map_err(io(&schema_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SynthError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| SynthError::Io { path, source })
        };
        let vocab = Vocab::from_json(&read(VOCAB_FILE)?)?;
        let schema = TableSchema::from_json(&read(SCHEMA_FILE)?)?;
        let model = read_checkpoint(&dir.join(CHECKPOINT_FILE))?;
        if model.config.vocab_size != vocab.len() {
            return Err(SynthError::VocabMismatch {
                model: model.config.vocab_size,
                vocab: vocab.len(),
            });
        }
        Ok(Synthesizer { schema, vocab, model })
    }
}
