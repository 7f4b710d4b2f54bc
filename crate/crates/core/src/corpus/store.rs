//! Corpus file set.
//!
//! ```text
//! meta.json    {"format_version":1,"vocab_size":N,"tokenizer_id":..,"doc_count":D,
//!               "total_tokens":T,"checksum":"<crc32c hex>"}
//! tokens.bin   little-endian u32 ids; every document followed by one SENTINEL word
//! docs.bin     little-endian u64 word offset of each document inside tokens.bin
//! labels.json  JSON array with the source_label of each document
//! vocab.tsv    optional; "<id>\t<piece>" per line, piece escaped (\\ \t \n \r)
//! ```
//!
//! The checksum is CRC-32C over the bytes of tokens.bin, docs.bin,
//! labels.json and (when present) vocab.tsv, in that order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, TokenId, Vocabulary, SENTINEL};

pub const FORMAT_VERSION: u32 = 1;

const META: &str = "meta.json";
const TOKENS: &str = "tokens.bin";
const DOCS: &str = "docs.bin";
const LABELS: &str = "labels.json";
const VOCAB: &str = "vocab.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub format_version: u32,
    pub vocab_size: u32,
    pub tokenizer_id: String,
    pub doc_count: u64,
    pub total_tokens: u64,
    pub checksum: String,
}

/// Raw, validated contents of a corpus directory: the sentinel-separated
/// stream the suffix index is built over.
#[derive(Debug, Clone)]
pub struct TokenStream {
    pub meta: CorpusMeta,
    pub vocabulary: Vocabulary,
    pub words: Vec<u32>,
    pub doc_offsets: Vec<u64>,
    pub labels: Vec<String>,
}

fn encode_files(corpus: &Corpus) -> (Vec<u8>, Vec<u8>, Vec<u8>, Option<Vec<u8>>) {
    let words = corpus.total_tokens as usize + corpus.documents.len();
    let mut tokens = Vec::with_capacity(words * 4);
    let mut docs = Vec::with_capacity(corpus.documents.len() * 8);
    let mut pos = 0u64;
    for doc in &corpus.documents {
        docs.extend_from_slice(&pos.to_le_bytes());
        for t in &doc.tokens {
            tokens.extend_from_slice(&t.0.to_le_bytes());
        }
        tokens.extend_from_slice(&SENTINEL.to_le_bytes());
        pos += doc.tokens.len() as u64 + 1;
    }
    let labels: Vec<&str> = corpus.documents.iter().map(|d| d.source_label.as_str()).collect();
    let labels = serde_json::to_vec(&labels).expect("string array serializes");
    let vocab = corpus.vocabulary.decode_table().map(|table| {
        let mut out = String::new();
        for (id, piece) in table.iter().enumerate() {
            out.push_str(&id.to_string());
            out.push('\t');
            out.push_str(&escape_piece(piece));
            out.push('\n');
        }
        out.into_bytes()
    });
    (tokens, docs, labels, vocab)
}

fn checksum(parts: &[&[u8]]) -> String {
    let crc = parts
        .iter()
        .fold(0u32, |crc, part| crc32c::crc32c_append(crc, part));
    format!("{crc:08x}")
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CorpusError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CorpusError::io(format!("writing {}", path.display()), e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>, CorpusError> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| CorpusError::io(format!("reading {}", path.display()), e))
}

fn read_optional(dir: &Path, name: &str) -> Result<Option<Vec<u8>>, CorpusError> {
    let path = dir.join(name);
    match fs::read(&path) {
        Ok(bytes) => Ok(Some(bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CorpusError::io(format!("reading {}", path.display()), e)),
    }
}

/// Writes the corpus file set into `dir`, creating it if needed. Output
/// bytes depend only on the corpus contents.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<CorpusMeta, CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(format!("creating {}", dir.display()), e))?;
    let (tokens, docs, labels, vocab) = encode_files(corpus);
    let mut parts: Vec<&[u8]> = vec![&tokens, &docs, &labels];
    if let Some(v) = &vocab {
        parts.push(v);
    }
    let meta = CorpusMeta {
        format_version: FORMAT_VERSION,
        vocab_size: corpus.vocabulary.vocab_size(),
        tokenizer_id: corpus.vocabulary.tokenizer_id().to_string(),
        doc_count: corpus.documents.len() as u64,
        total_tokens: corpus.total_tokens,
        checksum: checksum(&parts),
    };
    write(dir, TOKENS, &tokens)?;
    write(dir, DOCS, &docs)?;
    write(dir, LABELS, &labels)?;
    match &vocab {
        Some(v) => write(dir, VOCAB, v)?,
        None => match fs::remove_file(dir.join(VOCAB)) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(CorpusError::io("removing stale vocab.tsv", e)),
        },
    }
    let mut meta_bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    meta_bytes.push(b'\n');
    write(dir, META, &meta_bytes)?;
    Ok(meta)
}

/// Reads and validates the raw token stream of a corpus directory.
pub fn load_stream(dir: impl AsRef<Path>) -> Result<TokenStream, CorpusError> {
    let dir = dir.as_ref();
    let meta_bytes = read(dir, META)?;
    let meta: CorpusMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| CorpusError::Corrupt(format!("meta.json: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CorpusError::FormatVersionMismatch {
            found: meta.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let tokens = read(dir, TOKENS)?;
    let docs = read(dir, DOCS)?;
    let labels = read(dir, LABELS)?;
    let vocab = read_optional(dir, VOCAB)?;
    let mut parts: Vec<&[u8]> = vec![&tokens, &docs, &labels];
    if let Some(v) = &vocab {
        parts.push(v);
    }
    let actual = checksum(&parts);
    if actual != meta.checksum {
        return Err(CorpusError::ChecksumMismatch {
            expected: meta.checksum.clone(),
            actual,
        });
    }

    let mut vocabulary = Vocabulary::new(meta.vocab_size, meta.tokenizer_id.clone())?;
    if let Some(v) = vocab {
        vocabulary = vocabulary.with_decode_table(parse_vocab(&v, meta.vocab_size)?)?;
    }
    if tokens.len() % 4 != 0 || docs.len() % 8 != 0 {
        return Err(CorpusError::Corrupt("binary file length is not word aligned".into()));
    }
    let words: Vec<u32> = tokens
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let doc_offsets: Vec<u64> = docs
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels: Vec<String> = serde_json::from_slice(&labels)
        .map_err(|e| CorpusError::Corrupt(format!("labels.json: {e}")))?;

    validate_stream(&meta, &words, &doc_offsets, &labels)?;
    Ok(TokenStream {
        meta,
        vocabulary,
        words,
        doc_offsets,
        labels,
    })
}

fn validate_stream(
    meta: &CorpusMeta,
    words: &[u32],
    doc_offsets: &[u64],
    labels: &[String],
) -> Result<(), CorpusError> {
    let corrupt = |msg: String| Err(CorpusError::Corrupt(msg));
    if doc_offsets.len() as u64 != meta.doc_count || labels.len() != doc_offsets.len() {
        return corrupt(format!(
            "doc_count {} disagrees with docs.bin ({}) or labels.json ({})",
            meta.doc_count,
            doc_offsets.len(),
            labels.len()
        ));
    }
    if words.len() as u64 != meta.total_tokens + meta.doc_count {
        return corrupt(format!(
            "tokens.bin holds {} words, expected {}",
            words.len(),
            meta.total_tokens + meta.doc_count
        ));
    }
    if words.last().is_some_and(|&w| w != SENTINEL) {
        return corrupt("tokens.bin lacks the trailing sentinel".into());
    }
    let mut expected_start = 0u64;
    for (doc, &start) in doc_offsets.iter().enumerate() {
        if start != expected_start {
            return corrupt(format!("document {doc} starts at {start}, expected {expected_start}"));
        }
        let body = &words[start as usize..];
        let len = body.iter().position(|&w| w == SENTINEL).unwrap_or(body.len());
        if len == 0 {
            return corrupt(format!("document {doc} is empty"));
        }
        if let Some(off) = body[..len].iter().position(|&w| w >= meta.vocab_size) {
            return Err(CorpusError::TokenOutOfRange {
                doc,
                offset: off,
                token: body[off],
                vocab_size: meta.vocab_size,
            });
        }
        expected_start = start + len as u64 + 1;
    }
    if expected_start != words.len() as u64 {
        return corrupt("tokens.bin has words beyond the last document".into());
    }
    Ok(())
}

/// Loads a corpus saved by [`save_corpus`].
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let stream = load_stream(dir)?;
    let mut documents = Vec::with_capacity(stream.doc_offsets.len());
    for (i, (&start, label)) in stream.doc_offsets.iter().zip(stream.labels).enumerate() {
        let body = &stream.words[start as usize..];
        let len = body.iter().position(|&w| w == SENTINEL).unwrap_or(body.len());
        documents.push(Document {
            doc_id: i as u64,
            tokens: body[..len].iter().copied().map(TokenId).collect(),
            source_label: label,
        });
    }
    Ok(Corpus {
        vocabulary: stream.vocabulary,
        documents,
        total_tokens: stream.meta.total_tokens,
    })
}

fn escape_piece(piece: &str) -> String {
    let mut out = String::with_capacity(piece.len());
    for ch in piece.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_piece(raw: &str) -> Result<String, CorpusError> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => {
                return Err(CorpusError::Corrupt(format!(
                    "vocab.tsv: bad escape sequence \\{}",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

/// Reads a `vocab.tsv` decode table from any path.
pub fn read_vocab_tsv(path: impl AsRef<Path>, vocab_size: u32) -> Result<Vec<String>, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CorpusError::io(format!("reading {}", path.display()), e))?;
    parse_vocab(&bytes, vocab_size)
}

fn parse_vocab(bytes: &[u8], vocab_size: u32) -> Result<Vec<String>, CorpusError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| CorpusError::Corrupt(format!("vocab.tsv is not UTF-8: {e}")))?;
    let mut pieces = Vec::with_capacity(vocab_size as usize);
    for (expected, line) in text.lines().enumerate() {
        let (id, piece) = line
            .split_once('\t')
            .ok_or_else(|| CorpusError::Corrupt(format!("vocab.tsv line {}: missing tab", expected + 1)))?;
        if id.parse::<usize>().ok() != Some(expected) {
            return Err(CorpusError::Corrupt(format!(
                "vocab.tsv line {}: expected id {expected}, found {id:?}",
                expected + 1
            )));
        }
        pieces.push(unescape_piece(piece)?);
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_documents, tokens};

    fn toy() -> Corpus {
        let v = Vocabulary::new(4, "ws")
            .unwrap()
            .with_decode_table(vec!["a".into(), "\tb\\".into(), "c\n".into(), "d".into()])
            .unwrap();
        ingest_documents(
            vec![
                ("x".to_string(), tokens(&[0, 1, 0, 1])),
                ("y z".to_string(), tokens(&[1, 0, 1, 2])),
            ],
            v,
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = toy();
        save_corpus(&c, dir.path()).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), c);
    }

    #[test]
    fn token_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&toy(), dir.path()).unwrap();
        let s = load_stream(dir.path()).unwrap();
        assert_eq!(s.words, vec![0, 1, 0, 1, SENTINEL, 1, 0, 1, 2, SENTINEL]);
        assert_eq!(s.doc_offsets, vec![0, 5]);
        let raw = fs::read(dir.path().join(TOKENS)).unwrap();
        assert_eq!(&raw[16..20], &[0xFF; 4]);
    }

    #[test]
    fn truncated_tokens_fail_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&toy(), dir.path()).unwrap();
        let path = dir.path().join(TOKENS);
        let raw = fs::read(&path).unwrap();
        fs::write(&path, &raw[..raw.len() - 4]).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(CorpusError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&toy(), dir.path()).unwrap();
        let path = dir.path().join(META);
        let mut meta: CorpusMeta = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        meta.format_version = 2;
        fs::write(&path, serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(
            load_corpus(dir.path()),
            Err(CorpusError::FormatVersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn missing_directory_is_io() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_corpus(dir.path().join("nope")),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn piece_escaping() {
        for p in ["", "a", "\t", "\\t", "x\ny\r", "\\"] {
            assert_eq!(unescape_piece(&escape_piece(p)).unwrap(), p);
        }
    }
}
