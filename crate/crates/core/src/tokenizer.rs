//! Word-level tokenizer over row sentences. Words are whitespace-delimited;
//! a trailing comma is split off into its own token so clause boundaries
//! survive encoding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::RowSentence;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const COMMA: &str = ",";
/// Separator between a parent-row prefix and a child row.
pub const SEP_TOKEN: &str = "<sep>";

const SPECIAL_NAMES: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: TokenId, size: usize },
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<TokenId>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }
}

/// Splits sentence text into word tokens, detaching trailing commas.
pub fn words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        match w.strip_suffix(',') {
            Some(stem) if !stem.is_empty() => {
                out.push(stem);
                out.push(COMMA);
            }
            _ => out.push(w),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    sep: Option<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl Vocab {
    /// Ids are assigned by descending frequency, ties broken lexicographically.
    pub fn build<'a, I>(corpus: I) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = &'a RowSentence>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut n = 0;
        let corpus: Vec<&RowSentence> = corpus.into_iter().collect();
        for s in &corpus {
            n += 1;
            for w in words(s.as_str()) {
                if !SPECIAL_NAMES.contains(&w) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        if n == 0 {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIAL_NAMES
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect::<HashMap<_, _>>();
        let sep = token_to_id.get(SEP_TOKEN).copied();
        Vocab {
            id_to_token,
            token_to_id,
            sep,
        }
    }

    /// Appends the reserved separator token if absent and returns its id.
    pub fn add_separator(&mut self) -> TokenId {
        if let Some(id) = self.sep {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(SEP_TOKEN.to_string());
        self.token_to_id.insert(SEP_TOKEN.to_string(), id);
        self.sep = Some(id);
        id
    }

    pub fn separator(&self) -> Option<TokenId> {
        self.sep
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id <= UNK || Some(id) == self.sep
    }

    /// Unknown words map to UNK; `add_specials` wraps the ids in BOS/EOS.
    pub fn encode(&self, text: &str, add_specials: bool) -> TokenSequence {
        let mut ids = Vec::new();
        if add_specials {
            ids.push(BOS);
        }
        ids.extend(words(text).into_iter().map(|w| self.id(w).unwrap_or(UNK)));
        if add_specials {
            ids.push(EOS);
        }
        TokenSequence(ids)
    }

    /// Strips specials and joins words with single spaces, attaching commas
    /// to the preceding word.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let token = self.token(id).ok_or(TokenizerError::OutOfRange { id, size: self.len() })?;
            if self.is_special(id) {
                continue;
            }
            if token == COMMA {
                out.push_str(COMMA);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabFile {
            tokens: self.id_to_token.clone(),
        })
        .expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| TokenizerError::Malformed(e.to_string()))?;
        if file.tokens.len() < SPECIAL_NAMES.len()
            || file.tokens[..SPECIAL_NAMES.len()] != SPECIAL_NAMES.map(String::from)
        {
            return Err(TokenizerError::Malformed("missing reserved tokens".into()));
        }
        let vocab = Self::from_tokens(file.tokens);
        if vocab.token_to_id.len() != vocab.id_to_token.len() {
            return Err(TokenizerError::Malformed("duplicate tokens".into()));
        }
        Ok(vocab)
    }
}

/// Free-function form of [`Vocab::build`].
pub fn build_vocab(corpus: &[RowSentence]) -> Result<Vocab, TokenizerError> {
    Vocab::build(corpus)
}

pub fn encode(text: &RowSentence, vocab: &Vocab, add_specials: bool) -> TokenSequence {
    vocab.encode(text.as_str(), add_specials)
}

pub fn decode(ids: &TokenSequence, vocab: &Vocab) -> Result<String, TokenizerError> {
    vocab.decode(ids.ids())
}
