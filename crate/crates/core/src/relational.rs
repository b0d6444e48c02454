//! Parent/child generation: a parent-row model plus a child decoder that
//! reads the parent's sentence as a prefix. Keys are never modeled; generated
//! parents get sequential keys and children inherit them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{row_to_text, CodecError, ColumnOrder, RowSentence};
use crate::dataset::{
    drop_incomplete, encode_categoricals, normalize_continuous_excluding, Cell, ColumnKind, DataTable, DatasetError,
    Row, TableSchema,
};
use crate::sampler::{row_rng, sample_row, GenerationStats, SampleConfig, SampleError};
use crate::synth::{ModelShape, CONTEXT_MARGIN};
use crate::tokenizer::{TokenId, TokenizerError, Vocab, BOS, EOS};
use crate::train::{train_corpus, Corpus, Example, RowCorpus, TrainConfig, TrainError, TrainTrace};
use crate::transformer::{decode_checkpoint, encode_checkpoint, ModelError};
use crate::Model;

#[derive(Debug, Error)]
pub enum RelationalError {
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("key column `{0}` must be continuous")]
    KeyNotContinuous(String),
    #[error("key column `{0}` cannot be the target")]
    KeyIsTarget(String),
    #[error("key {0} is not an integer")]
    NonIntegerKey(f64),
    #[error("duplicate parent key {0}")]
    DuplicateKey(i64),
    #[error("child row {row} references missing parent key {key}")]
    DanglingKey { row: usize, key: i64 },
    #[error("parent {key} has {count} children, limit is {max}")]
    TooManyChildren { key: i64, count: usize, max: usize },
    #[error("children histogram is empty")]
    EmptyHistogram,
    #[error("parent generation: {0}")]
    Parent(SampleError),
    #[error("child generation for parent {parent}: {source}")]
    Child { parent: usize, source: SampleError },
    #[error("child budget exhausted for parent {parent}")]
    ChildBudget { parent: usize, stats: GenerationStats },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalSchema {
    pub parent: TableSchema,
    pub child: TableSchema,
    pub parent_key: String,
    pub child_foreign_key: String,
    pub max_children_per_parent: usize,
}

impl RelationalSchema {
    pub fn new(
        parent: TableSchema,
        child: TableSchema,
        parent_key: impl Into<String>,
        child_foreign_key: impl Into<String>,
        max_children_per_parent: usize,
    ) -> Result<Self, RelationalError> {
        let s = RelationalSchema {
            parent,
            child,
            parent_key: parent_key.into(),
            child_foreign_key: child_foreign_key.into(),
            max_children_per_parent,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), RelationalError> {
        for (schema, name) in [(&self.parent, &self.parent_key), (&self.child, &self.child_foreign_key)] {
            let col = schema
                .column(name)
                .ok_or_else(|| RelationalError::MissingColumn(name.clone()))?;
            if col.kind != ColumnKind::Continuous {
                return Err(RelationalError::KeyNotContinuous(name.clone()));
            }
            if schema.target_column == *name {
                return Err(RelationalError::KeyIsTarget(name.clone()));
            }
        }
        Ok(())
    }

    pub fn key_index(&self) -> usize {
        self.parent.index_of(&self.parent_key).expect("validated")
    }

    pub fn foreign_key_index(&self) -> usize {
        self.child.index_of(&self.child_foreign_key).expect("validated")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RelationalError> {
        let s: RelationalSchema = serde_json::from_str(text).map_err(|e| RelationalError::Io {
            path: PathBuf::from("<relational schema>"),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }
}

fn key_of(cell: &Cell) -> Result<i64, RelationalError> {
    let v = cell.as_f64().unwrap_or(f64::NAN);
    if v.is_finite() && v.fract() == 0.0 {
        Ok(v as i64)
    } else {
        Err(RelationalError::NonIntegerKey(v))
    }
}

/// For each child row, the index of its parent row. Checks key uniqueness,
/// dangling references and the per-parent child limit.
pub fn link_children(parent: &DataTable, child: &DataTable, schema: &RelationalSchema) -> Result<Vec<usize>, RelationalError> {
    let (k, fk) = (schema.key_index(), schema.foreign_key_index());
    let mut by_key = HashMap::with_capacity(parent.len());
    for (i, row) in parent.rows.iter().enumerate() {
        let key = key_of(&row[k])?;
        if by_key.insert(key, i).is_some() {
            return Err(RelationalError::DuplicateKey(key));
        }
    }
    let mut counts = vec![0usize; parent.len()];
    let mut links = Vec::with_capacity(child.len());
    for (r, row) in child.rows.iter().enumerate() {
        let key = key_of(&row[fk])?;
        let p = *by_key.get(&key).ok_or(RelationalError::DanglingKey { row: r, key })?;
        counts[p] += 1;
        if counts[p] > schema.max_children_per_parent {
            return Err(RelationalError::TooManyChildren {
                key,
                count: counts[p],
                max: schema.max_children_per_parent,
            });
        }
        links.push(p);
    }
    Ok(links)
}

/// Removes one column, keeping the target.
pub fn drop_column(table: &DataTable, column: usize) -> DataTable {
    let mut schema = table.schema.clone();
    schema.columns.remove(column);
    let rows = table
        .rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.remove(column);
            r
        })
        .collect();
    DataTable { schema, rows }
}

/// Drops incomplete rows, encodes categoricals and normalizes each table
/// with its own statistics. Key columns stay in original units.
pub fn preprocess_relational(
    parent: &DataTable,
    child: &DataTable,
    schema: &RelationalSchema,
) -> Result<(DataTable, DataTable), RelationalError> {
    let parent = encode_categoricals(&drop_incomplete(parent))?;
    let child = encode_categoricals(&drop_incomplete(child))?;
    let parent = normalize_continuous_excluding(&parent, &parent, &[&schema.parent_key])?;
    let child = normalize_continuous_excluding(&child, &child, &[&schema.child_foreign_key])?;
    link_children(&parent, &child, schema)?;
    Ok((parent, child))
}

/// Empirical distribution of children per parent: `counts[k]` parents had
/// `k` children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildCountHistogram {
    pub counts: Vec<usize>,
}

impl ChildCountHistogram {
    pub fn from_links(n_parents: usize, links: &[usize]) -> Self {
        let mut per_parent = vec![0usize; n_parents];
        for &p in links {
            per_parent[p] += 1;
        }
        Self::from_child_counts(&per_parent)
    }

    pub fn from_child_counts(per_parent: &[usize]) -> Self {
        let max = per_parent.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0usize; max + 1];
        for &c in per_parent {
            counts[c] += 1;
        }
        ChildCountHistogram { counts }
    }

    pub fn point_mass(k: usize) -> Self {
        let mut counts = vec![0; k + 1];
        counts[k] = 1;
        ChildCountHistogram { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize, RelationalError> {
        let total = self.total();
        if total == 0 {
            return Err(RelationalError::EmptyHistogram);
        }
        let mut draw = rng.random_range(0..total);
        for (k, &c) in self.counts.iter().enumerate() {
            if draw < c {
                return Ok(k);
            }
            draw -= c;
        }
        unreachable!("draw below total")
    }

    /// Half the L1 distance between the two normalized histograms.
    pub fn total_variation(&self, other: &ChildCountHistogram) -> f64 {
        let (p, q) = (self.probabilities(), other.probabilities());
        let n = p.len().max(q.len());
        let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        0.5 * (0..n).map(|i| (at(&p, i) - at(&q, i)).abs()).sum::<f64>()
    }
}

/// Child training sequences `[BOS, parent, SEP, child, EOS]` with fresh
/// column orders for both segments on every visit. Only tokens after SEP
/// contribute to the loss.
pub struct ChildCorpus<'a> {
    parent: &'a DataTable,
    child: &'a DataTable,
    links: &'a [usize],
    vocab: &'a Vocab,
    sep: TokenId,
    max_len: usize,
}

impl<'a> ChildCorpus<'a> {
    /// `parent` and `child` are the modeled tables (keys removed).
    pub fn new(parent: &'a DataTable, child: &'a DataTable, links: &'a [usize], vocab: &'a Vocab) -> Result<Self, RelationalError> {
        let sep = vocab.separator().ok_or(TokenizerError::Malformed("vocabulary lacks a separator".into()))?;
        let mut corpus = ChildCorpus {
            parent,
            child,
            links,
            vocab,
            sep,
            max_len: 0,
        };
        let ip = ColumnOrder::identity(parent.schema.len());
        let ic = ColumnOrder::identity(child.schema.len());
        for i in 0..child.len() {
            let (seq, _) = corpus.sequence(i, &ip, &ic)?;
            corpus.max_len = corpus.max_len.max(seq.len());
        }
        Ok(corpus)
    }

    fn sequence(&self, i: usize, po: &ColumnOrder, co: &ColumnOrder) -> Result<(Vec<TokenId>, usize), CodecError> {
        let p = row_to_text(&self.parent.rows[self.links[i]], &self.parent.schema, po)?;
        let c = row_to_text(&self.child.rows[i], &self.child.schema, co)?;
        Ok(child_sequence(self.vocab, self.sep, &p, Some(&c)))
    }
}

/// `[BOS, parent tokens, SEP]` followed, when given, by `[child tokens, EOS]`.
/// Also returns the index of SEP.
fn child_sequence(vocab: &Vocab, sep: TokenId, parent: &RowSentence, child: Option<&RowSentence>) -> (Vec<TokenId>, usize) {
    let mut seq = vec![BOS];
    seq.extend(vocab.encode(parent.as_str(), false).0);
    let at = seq.len();
    seq.push(sep);
    if let Some(c) = child {
        seq.extend(vocab.encode(c.as_str(), false).0);
        seq.push(EOS);
    }
    (seq, at)
}

impl Corpus for ChildCorpus<'_> {
    fn len(&self) -> usize {
        self.child.len()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }

    fn example(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Example, TrainError> {
        let po = ColumnOrder::random(self.parent.schema.len(), rng);
        let co = ColumnOrder::random(self.child.schema.len(), rng);
        let (seq, sep) = self.sequence(index, &po, &co)?;
        Ok(Example::with_loss_from(&seq, sep + 1))
    }
}

/// Vocabulary over both modeled tables plus the separator.
pub fn shared_vocab(parent: &DataTable, child: &DataTable) -> Result<Vocab, RelationalError> {
    let mut sentences = Vec::with_capacity(parent.len() + child.len());
    for t in [parent, child] {
        let order = ColumnOrder::identity(t.schema.len());
        for row in &t.rows {
            sentences.push(row_to_text(row, &t.schema, &order)?);
        }
    }
    let mut vocab = Vocab::build(sentences.iter())?;
    vocab.add_separator();
    Ok(vocab)
}

/// Trains the parent model on the parent table with its key removed.
pub fn fit_parent(
    parent: &DataTable,
    schema: &RelationalSchema,
    vocab: &Vocab,
    shape: ModelShape,
    config: &TrainConfig,
) -> Result<(Model, TrainTrace), RelationalError> {
    let modeled = drop_column(parent, schema.key_index());
    let corpus = RowCorpus::new(&modeled.rows, &modeled.schema, vocab)?;
    let model = Model::init(shape.config(vocab.len(), corpus.max_len() + CONTEXT_MARGIN), config.seed)?;
    Ok(train_corpus(model, &corpus, config)?)
}

/// Trains the child decoder on parent-prefixed child sentences.
pub fn fit_child(
    child: &DataTable,
    parent: &DataTable,
    schema: &RelationalSchema,
    vocab: &Vocab,
    shape: ModelShape,
    config: &TrainConfig,
) -> Result<(Model, TrainTrace), RelationalError> {
    let links = link_children(parent, child, schema)?;
    let p = drop_column(parent, schema.key_index());
    let c = drop_column(child, schema.foreign_key_index());
    let corpus = ChildCorpus::new(&p, &c, &links, vocab)?;
    // room for the longest parent prefix plus a full child sentence
    let model = Model::init(shape.config(vocab.len(), corpus.max_len() + CONTEXT_MARGIN), config.seed)?;
    Ok(train_corpus(model, &corpus, config)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationalModel {
    pub schema: RelationalSchema,
    /// Modeled parent schema (key removed) with normalization statistics.
    pub parent_schema: TableSchema,
    /// Modeled child schema (foreign key removed) with normalization statistics.
    pub child_schema: TableSchema,
    pub vocab: Vocab,
    pub parent_model: Model,
    pub child_decoder: Model,
    pub children: ChildCountHistogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationalTraces {
    pub parent: TrainTrace,
    pub child: TrainTrace,
}

impl RelationalModel {
    /// Fits both models on preprocessed tables (see [`preprocess_relational`]).
    pub fn fit(
        parent: &DataTable,
        child: &DataTable,
        schema: &RelationalSchema,
        shape: ModelShape,
        config: &TrainConfig,
    ) -> Result<(Self, RelationalTraces), RelationalError> {
        let links = link_children(parent, child, schema)?;
        let p = drop_column(parent, schema.key_index());
        let c = drop_column(child, schema.foreign_key_index());
        let vocab = shared_vocab(&p, &c)?;
        let (parent_model, pt) = fit_parent(parent, schema, &vocab, shape, config)?;
        let (child_decoder, ct) = fit_child(child, parent, schema, &vocab, shape, config)?;
        Ok((
            RelationalModel {
                schema: schema.clone(),
                parent_schema: p.schema,
                child_schema: c.schema,
                vocab,
                parent_model,
                child_decoder,
                children: ChildCountHistogram::from_links(parent.len(), &links),
            },
            RelationalTraces { parent: pt, child: ct },
        ))
    }

    pub fn save(&self, dir: &Path) -> Result<(), RelationalError> {
        let io = |path: PathBuf| move |e: std::io::Error| RelationalError::Io {
            path,
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let meta = serde_json::json!({
            "schema": self.schema,
            "parent_schema": self.parent_schema,
            "child_schema": self.child_schema,
            "children": self.children,
        });
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(io(path))
        };
        write("relational.json", serde_json::to_string_pretty(&meta).expect("serializes").as_bytes())?;
        write("vocab.json", self.vocab.to_json().as_bytes())?;
        write("parent.ckpt", &encode_checkpoint(&self.parent_model))?;
        write("child.ckpt", &encode_checkpoint(&self.child_decoder))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RelationalError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|e| RelationalError::Io {
                path,
                message: e.to_string(),
            })
        };
        let bad = |m: String| RelationalError::Io {
            path: dir.join("relational.json"),
            message: m,
        };
        let meta: serde_json::Value = serde_json::from_slice(&read("relational.json")?).map_err(|e| bad(e.to_string()))?;
        let field = |name: &str| meta.get(name).cloned().ok_or_else(|| bad(format!("missing `{name}`")));
        let vocab = Vocab::from_json(&String::from_utf8_lossy(&read("vocab.json")?))?;
        Ok(RelationalModel {
            schema: serde_json::from_value(field("schema")?).map_err(|e| bad(e.to_string()))?,
            parent_schema: serde_json::from_value(field("parent_schema")?).map_err(|e| bad(e.to_string()))?,
            child_schema: serde_json::from_value(field("child_schema")?).map_err(|e| bad(e.to_string()))?,
            children: serde_json::from_value(field("children")?).map_err(|e| bad(e.to_string()))?,
            vocab,
            parent_model: decode_checkpoint(&read("parent.ckpt")?)?,
            child_decoder: decode_checkpoint(&read("child.ckpt")?)?,
        })
    }
}

/// Output of [`generate_relational`]: both tables in original units with
/// keys `1..=n_parents`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalSample {
    pub parent: DataTable,
    pub child: DataTable,
    pub parent_stats: GenerationStats,
    pub child_stats: GenerationStats,
}

impl RelationalSample {
    /// Writes `parent.csv`, `child.csv` and `relational_schema.json`.
    pub fn write(&self, dir: &Path, schema: &RelationalSchema) -> Result<(), RelationalError> {
        fs::create_dir_all(dir).map_err(|e| RelationalError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        self.parent.write_csv(&dir.join("parent.csv"))?;
        self.child.write_csv(&dir.join("child.csv"))?;
        let path = dir.join("relational_schema.json");
        fs::write(&path, schema.to_json()).map_err(|e| RelationalError::Io {
            path,
            message: e.to_string(),
        })
    }
}

const CHILD_COUNT_SALT: u64 = 0xc3a5_c85c_97cb_3127;
const CHILD_ROW_SALT: u64 = 0xb492_b66f_be98_f273;

fn insert_key(mut row: Row, at: usize, key: usize) -> Row {
    row.insert(at, Cell::Number(key as f64));
    row
}

/// Generates parents, assigns keys `1..=n_parents`, draws each parent's child
/// count from `children` and decodes every child from its parent's sentence.
pub fn generate_relational(
    model: &RelationalModel,
    n_parents: usize,
    children: &ChildCountHistogram,
    config: &SampleConfig,
) -> Result<RelationalSample, RelationalError> {
    let (parents, parent_stats) = crate::sampler::generate_table(
        &model.parent_model,
        &model.vocab,
        &model.parent_schema,
        n_parents,
        config,
    )
    .map_err(RelationalError::Parent)?;
    let sep = model
        .vocab
        .separator()
        .ok_or(TokenizerError::Malformed("vocabulary lacks a separator".into()))?;
    let identity = ColumnOrder::identity(model.parent_schema.len());
    let mut child_stats = GenerationStats::default();
    let mut child_rows = Vec::new();
    let mut parent_rows = Vec::with_capacity(parents.len());
    for (i, prow) in parents.rows.into_iter().enumerate() {
        let key = i + 1;
        let mut count_rng = row_rng(config.seed ^ CHILD_COUNT_SALT, i);
        let count = children.sample(&mut count_rng)?;
        child_stats.rows_requested += count;
        let mut normalized = prow.clone();
        for (cell, col) in normalized.iter_mut().zip(&model.parent_schema.columns) {
            if let Cell::Number(v) = cell {
                *v = col.normalize(*v);
            }
        }
        let sentence = row_to_text(&normalized, &model.parent_schema, &identity)?;
        let (prompt, _) = child_sequence(&model.vocab, sep, &sentence, None);
        let mut rng = row_rng(config.seed ^ CHILD_ROW_SALT, i);
        for _ in 0..count {
            let row = sample_row(
                &model.child_decoder,
                &model.vocab,
                &model.child_schema,
                &prompt,
                "",
                config,
                &mut rng,
                &mut child_stats,
            )
            .map_err(|source| RelationalError::Child { parent: key, source })?;
            match row {
                Some(row) => child_rows.push(insert_key(row, model.schema.foreign_key_index(), key)),
                None => {
                    return Err(RelationalError::ChildBudget {
                        parent: key,
                        stats: child_stats,
                    })
                }
            }
        }
        parent_rows.push(insert_key(prow, model.schema.key_index(), key));
    }
    let with_categories = |full: &TableSchema, modeled: &TableSchema, skip: usize| {
        let mut s = full.clone();
        let mut m = modeled.columns.iter();
        for (j, col) in s.columns.iter_mut().enumerate() {
            if j != skip {
                *col = m.next().expect("modeled schema is a projection").clone();
            }
        }
        s
    };
    Ok(RelationalSample {
        parent: DataTable {
            schema: with_categories(&model.schema.parent, &model.parent_schema, model.schema.key_index()),
            rows: parent_rows,
        },
        child: DataTable {
            schema: with_categories(&model.schema.child, &model.child_schema, model.schema.foreign_key_index()),
            rows: child_rows,
        },
        parent_stats,
        child_stats,
    })
}
