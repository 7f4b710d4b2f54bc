//! Exact n-gram search over the corpus token stream.
//!
//! [`SuffixIndex`] keeps the sentinel-separated stream in memory alongside
//! a suffix array of all non-sentinel positions (`sa.bin`, little-endian
//! u64). A query occurs at every suffix it prefixes, and those suffixes form
//! one contiguous range of the array, found with two binary searches.
//! Queries never contain the sentinel, so no match can cross a document
//! boundary.

mod build;

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_stream, Corpus, CorpusError, TokenId, TokenStream, SENTINEL};
use build::{order_key, suffix_order};

/// Longest query accepted by [`SuffixIndex::count`] and friends.
pub const MAX_QUERY_LEN: usize = 64;

const SA_FILE: &str = "sa.bin";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("query of {len} tokens exceeds the maximum of {max}")]
    QueryTooLong { len: usize, max: usize },
    #[error("query token {token} is outside the vocabulary (size {vocab_size})")]
    TokenOutOfRange { token: u32, vocab_size: u32 },
    #[error("occurrence {0:?} does not belong to this index")]
    InvalidOccurrence(Occurrence),
    #[error("corrupt corpus or index: {0}")]
    CorpusCorrupt(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// One place where a query occurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Occurrence {
    pub doc_id: u64,
    /// Token offset within the document.
    pub offset: u64,
    /// Word offset within the token stream.
    pub global_pos: u64,
}

/// Tokens surrounding an occurrence, clipped to its document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Context {
    pub before: Vec<TokenId>,
    pub matched: Vec<TokenId>,
    pub after: Vec<TokenId>,
}

#[derive(Debug, Clone)]
pub struct SuffixIndex {
    words: Vec<u32>,
    suffix_array: Vec<u64>,
    doc_offsets: Vec<u64>,
    vocab_size: u32,
}

fn sa_path(corpus_dir: &Path) -> PathBuf {
    corpus_dir.join(SA_FILE)
}

fn encode_sa(sa: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(sa.len() * 8);
    for p in sa {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

impl SuffixIndex {
    /// Builds the index in memory from a validated token stream.
    pub fn from_stream(stream: TokenStream) -> Result<Self, IndexError> {
        if stream.doc_offsets.is_empty() || stream.meta.total_tokens == 0 {
            return Err(IndexError::CorpusCorrupt("corpus is empty".into()));
        }
        let words = stream.words;
        let suffix_array: Vec<u64> = suffix_order(&words)
            .into_iter()
            .filter(|&p| words[p as usize] != SENTINEL)
            .collect();
        Ok(SuffixIndex {
            words,
            suffix_array,
            doc_offsets: stream.doc_offsets,
            vocab_size: stream.meta.vocab_size,
        })
    }

    /// Builds the index for the corpus stored in `corpus_dir` and writes
    /// `sa.bin` next to it. Rebuilding yields identical bytes.
    pub fn build(corpus_dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let dir = corpus_dir.as_ref();
        let index = Self::from_stream(load_stream(dir)?)?;
        let path = sa_path(dir);
        fs::write(&path, encode_sa(&index.suffix_array)).map_err(|source| IndexError::Io {
            context: format!("writing {}", path.display()),
            source,
        })?;
        Ok(index)
    }

    /// Loads a corpus and its previously built `sa.bin`.
    pub fn open(corpus_dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let dir = corpus_dir.as_ref();
        let stream = load_stream(dir)?;
        let path = sa_path(dir);
        let raw = fs::read(&path).map_err(|source| IndexError::Io {
            context: format!("reading {}", path.display()),
            source,
        })?;
        if raw.len() as u64 != stream.meta.total_tokens * 8 {
            return Err(IndexError::CorpusCorrupt(format!(
                "sa.bin holds {} bytes, expected {}",
                raw.len(),
                stream.meta.total_tokens * 8
            )));
        }
        let suffix_array: Vec<u64> = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let n = stream.words.len() as u64;
        if let Some(&bad) = suffix_array
            .iter()
            .find(|&&p| p >= n || stream.words[p as usize] == SENTINEL)
        {
            return Err(IndexError::CorpusCorrupt(format!(
                "sa.bin entry {bad} is not a token position"
            )));
        }
        Ok(SuffixIndex {
            words: stream.words,
            suffix_array,
            doc_offsets: stream.doc_offsets,
            vocab_size: stream.meta.vocab_size,
        })
    }

    /// Opens `sa.bin` if present, building it otherwise.
    pub fn open_or_build(corpus_dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let dir = corpus_dir.as_ref();
        if sa_path(dir).exists() {
            Self::open(dir)
        } else {
            Self::build(dir)
        }
    }

    pub fn suffix_array(&self) -> &[u64] {
        &self.suffix_array
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn total_tokens(&self) -> u64 {
        self.suffix_array.len() as u64
    }

    pub fn doc_count(&self) -> usize {
        self.doc_offsets.len()
    }

    /// Stream range `[start, end)` of a document, excluding its sentinel.
    fn doc_range(&self, doc_id: usize) -> (usize, usize) {
        let start = self.doc_offsets[doc_id] as usize;
        let end = self
            .doc_offsets
            .get(doc_id + 1)
            .map_or(self.words.len(), |&next| next as usize)
            - 1;
        (start, end)
    }

    pub fn document_tokens(&self, doc_id: u64) -> Option<Vec<TokenId>> {
        let doc = usize::try_from(doc_id).ok().filter(|&d| d < self.doc_count())?;
        let (start, end) = self.doc_range(doc);
        Some(self.words[start..end].iter().copied().map(TokenId).collect())
    }

    fn validate_query(&self, query: &[TokenId]) -> Result<(), IndexError> {
        validate_query(query, self.vocab_size)
    }

    fn compare_suffix(&self, pos: u64, query: &[TokenId]) -> Ordering {
        let suffix = &self.words[pos as usize..];
        for (j, q) in query.iter().enumerate() {
            // The stream ends with a sentinel, which compares below any
            // query token, so the suffix cannot run out first.
            let word = suffix[j];
            match order_key(word).cmp(&order_key(q.0)) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        Ordering::Equal
    }

    fn match_range(&self, query: &[TokenId]) -> (usize, usize) {
        let lo = self
            .suffix_array
            .partition_point(|&p| self.compare_suffix(p, query) == Ordering::Less);
        let hi = lo
            + self.suffix_array[lo..]
                .partition_point(|&p| self.compare_suffix(p, query) != Ordering::Greater);
        (lo, hi)
    }

    /// Number of positions where `query` occurs inside a single document.
    /// Overlapping occurrences each count.
    pub fn count(&self, query: &[TokenId]) -> Result<u64, IndexError> {
        self.validate_query(query)?;
        let (lo, hi) = self.match_range(query);
        Ok((hi - lo) as u64)
    }

    /// Up to `limit` occurrences in ascending stream order.
    pub fn locate(&self, query: &[TokenId], limit: usize) -> Result<Vec<Occurrence>, IndexError> {
        self.validate_query(query)?;
        let (lo, hi) = self.match_range(query);
        let mut positions = self.suffix_array[lo..hi].to_vec();
        positions.sort_unstable();
        positions.truncate(limit);
        Ok(positions.into_iter().map(|p| self.occurrence_at(p)).collect())
    }

    fn occurrence_at(&self, global_pos: u64) -> Occurrence {
        let doc = self.doc_offsets.partition_point(|&start| start <= global_pos) - 1;
        Occurrence {
            doc_id: doc as u64,
            offset: global_pos - self.doc_offsets[doc],
            global_pos,
        }
    }

    /// Returns up to `radius` tokens on each side of a `match_len`-token
    /// occurrence, never leaving its document.
    pub fn context(
        &self,
        occ: &Occurrence,
        match_len: usize,
        radius: usize,
    ) -> Result<Context, IndexError> {
        let invalid = || IndexError::InvalidOccurrence(*occ);
        let doc = usize::try_from(occ.doc_id)
            .ok()
            .filter(|&d| d < self.doc_count())
            .ok_or_else(invalid)?;
        let (start, end) = self.doc_range(doc);
        let pos = usize::try_from(occ.global_pos).map_err(|_| invalid())?;
        if self.doc_offsets[doc] + occ.offset != occ.global_pos || pos < start || pos + match_len > end {
            return Err(invalid());
        }
        let to_tokens = |s: &[u32]| s.iter().copied().map(TokenId).collect::<Vec<_>>();
        let before_start = pos.saturating_sub(radius).max(start);
        let after_end = (pos + match_len + radius).min(end);
        Ok(Context {
            before: to_tokens(&self.words[before_start..pos]),
            matched: to_tokens(&self.words[pos..pos + match_len]),
            after: to_tokens(&self.words[pos + match_len..after_end]),
        })
    }
}

fn validate_query(query: &[TokenId], vocab_size: u32) -> Result<(), IndexError> {
    if query.is_empty() {
        return Err(IndexError::EmptyQuery);
    }
    if query.len() > MAX_QUERY_LEN {
        return Err(IndexError::QueryTooLong {
            len: query.len(),
            max: MAX_QUERY_LEN,
        });
    }
    if let Some(bad) = query.iter().find(|t| t.0 >= vocab_size) {
        return Err(IndexError::TokenOutOfRange {
            token: bad.0,
            vocab_size,
        });
    }
    Ok(())
}

/// Reference count by scanning every document. Ground truth for
/// [`SuffixIndex::count`].
pub fn brute_force_count(corpus: &Corpus, query: &[TokenId]) -> Result<u64, IndexError> {
    validate_query(query, corpus.vocabulary().vocab_size())?;
    let mut total = 0u64;
    for doc in corpus.documents() {
        if doc.tokens.len() < query.len() {
            continue;
        }
        total += doc
            .tokens
            .windows(query.len())
            .filter(|w| *w == query)
            .count() as u64;
    }
    Ok(total)
}
