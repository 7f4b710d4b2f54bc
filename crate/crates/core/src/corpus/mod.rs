//! Tokenized corpus: documents of vocabulary ids, ingestion, prompt quotes
//! and the on-disk file set.

mod store;

use std::fmt;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::{load_corpus, load_stream, read_vocab_tsv, save_corpus, CorpusMeta, TokenStream, FORMAT_VERSION};

/// Reserved word separating documents in the token stream.
pub const SENTINEL: u32 = 0xFFFF_FFFF;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("token {token} out of range (vocab size {vocab_size}) in document {doc} at offset {offset}")]
    TokenOutOfRange {
        doc: usize,
        offset: usize,
        token: u32,
        vocab_size: u32,
    },
    #[error("document {0} is empty")]
    EmptyDocument(usize),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("corpus has no decode table")]
    NoDecodeTable,
    #[error("document of {len} tokens is shorter than the minimum quote length {min_len}")]
    DocTooShort { len: usize, min_len: usize },
    #[error("invalid quote bounds [{min_len}, {max_len}]")]
    InvalidQuoteBounds { min_len: usize, max_len: usize },
    #[error("corpus format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("checksum mismatch: meta.json records {expected}, files hash to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("corrupt corpus: {0}")]
    Corrupt(String),
    #[error("malformed ingestion record on line {line}: {source}")]
    MalformedRecord {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CorpusError::Io {
            context: context.into(),
            source,
        }
    }
}

/// A vocabulary index produced by some tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn get(self) -> u32 {
        self.0
    }
}

impl From<u32> for TokenId {
    fn from(value: u32) -> Self {
        TokenId(value)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Converts a slice of raw ids into [`TokenId`]s.
pub fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().copied().map(TokenId).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    vocab_size: u32,
    tokenizer_id: String,
    decode_table: Option<Vec<String>>,
}

impl Vocabulary {
    pub fn new(vocab_size: u32, tokenizer_id: impl Into<String>) -> Result<Self, CorpusError> {
        if vocab_size < 2 || vocab_size == SENTINEL {
            return Err(CorpusError::InvalidVocabulary(format!(
                "vocab_size must be in [2, {SENTINEL}), got {vocab_size}"
            )));
        }
        Ok(Vocabulary {
            vocab_size,
            tokenizer_id: tokenizer_id.into(),
            decode_table: None,
        })
    }

    /// Attaches a decode table; it must hold exactly one piece per id.
    pub fn with_decode_table(mut self, pieces: Vec<String>) -> Result<Self, CorpusError> {
        if pieces.len() != self.vocab_size as usize {
            return Err(CorpusError::InvalidVocabulary(format!(
                "decode table has {} entries, vocab_size is {}",
                pieces.len(),
                self.vocab_size
            )));
        }
        self.decode_table = Some(pieces);
        Ok(self)
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    pub fn decode_table(&self) -> Option<&[String]> {
        self.decode_table.as_deref()
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token.0 < self.vocab_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: u64,
    pub tokens: Vec<TokenId>,
    pub source_label: String,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Immutable collection of documents over one vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    vocabulary: Vocabulary,
    documents: Vec<Document>,
    total_tokens: u64,
}

impl Corpus {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, doc_id: u64) -> Option<&Document> {
        self.documents.get(usize::try_from(doc_id).ok()?)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Renders tokens through the vocabulary's decode table.
    pub fn decode(&self, tokens: &[TokenId]) -> Result<String, CorpusError> {
        decode(&self.vocabulary, tokens)
    }
}

/// Builds a corpus from `(source_label, tokens)` records, keeping input order
/// and assigning sequential document ids.
pub fn ingest_documents<I>(records: I, vocabulary: Vocabulary) -> Result<Corpus, CorpusError>
where
    I: IntoIterator<Item = (String, Vec<TokenId>)>,
{
    let mut documents = Vec::new();
    let mut total_tokens = 0u64;
    for (idx, (source_label, tokens)) in records.into_iter().enumerate() {
        if tokens.is_empty() {
            return Err(CorpusError::EmptyDocument(idx));
        }
        if let Some((offset, bad)) = tokens
            .iter()
            .enumerate()
            .find(|(_, t)| !vocabulary.contains(**t))
        {
            return Err(CorpusError::TokenOutOfRange {
                doc: idx,
                offset,
                token: bad.0,
                vocab_size: vocabulary.vocab_size,
            });
        }
        total_tokens += tokens.len() as u64;
        documents.push(Document {
            doc_id: idx as u64,
            tokens,
            source_label,
        });
    }
    Ok(Corpus {
        vocabulary,
        documents,
        total_tokens,
    })
}

#[derive(Debug, Deserialize)]
struct IngestRecord {
    source_label: String,
    tokens: Vec<u32>,
}

/// Reads JSON-lines of `{"source_label": str, "tokens": [int, ...]}`.
/// Blank lines are skipped.
pub fn ingest_jsonl<R: BufRead>(reader: R, vocabulary: Vocabulary) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io("reading ingestion input", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IngestRecord = serde_json::from_str(&line).map_err(|source| {
            CorpusError::MalformedRecord {
                line: lineno + 1,
                source,
            }
        })?;
        records.push((rec.source_label, tokens(&rec.tokens)));
    }
    ingest_documents(records, vocabulary)
}

pub fn decode(vocabulary: &Vocabulary, tokens: &[TokenId]) -> Result<String, CorpusError> {
    let table = vocabulary.decode_table().ok_or(CorpusError::NoDecodeTable)?;
    let mut out = String::new();
    for (offset, &t) in tokens.iter().enumerate() {
        let piece = table
            .get(t.0 as usize)
            .ok_or(CorpusError::TokenOutOfRange {
                doc: 0,
                offset,
                token: t.0,
                vocab_size: vocabulary.vocab_size,
            })?;
        out.push_str(piece);
    }
    Ok(out)
}

/// Draws a contiguous quote whose length is uniform in
/// `[min_len, min(max_len, doc.len())]`, at a uniform valid offset.
pub fn random_quote<'d, R: Rng + ?Sized>(
    doc: &'d Document,
    min_len: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<(usize, &'d [TokenId]), CorpusError> {
    if min_len == 0 || min_len > max_len {
        return Err(CorpusError::InvalidQuoteBounds { min_len, max_len });
    }
    if doc.len() < min_len {
        return Err(CorpusError::DocTooShort {
            len: doc.len(),
            min_len,
        });
    }
    let upper = max_len.min(doc.len());
    let len = rng.random_range(min_len..=upper);
    let offset = rng.random_range(0..=doc.len() - len);
    Ok((offset, &doc.tokens[offset..offset + len]))
}
