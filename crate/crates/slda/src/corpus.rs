//! Labeled bag-of-words corpora and vocabularies.
//!
//! Data files are UTF-8 text with one document per line:
//!
//! ```text
//! <label> <termid>:<count> [<termid>:<count> ...]
//! ```
//!
//! Term ids are 0-based indices into the vocabulary file (one term per line,
//! line number = id) and counts are positive integers. Counts are expanded
//! into per-token sequences because topic assignments are per token; entries
//! expand left-to-right in file order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed entry `{entry}` (expected `termid:count`)")]
    MalformedEntry { line: usize, entry: String },
    #[error("line {line}: malformed label `{label}`")]
    MalformedLabel { line: usize, label: String },
    #[error("line {line}: term id {term} out of range (vocabulary size {vocab_size})")]
    TermOutOfRange {
        line: usize,
        term: usize,
        vocab_size: usize,
    },
    #[error("line {line}: count {count} is not positive")]
    NonPositiveCount { line: usize, count: i64 },
    #[error("line {line}: empty document")]
    EmptyDocument { line: usize },
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("duplicate vocabulary term `{term}` at line {line}")]
    DuplicateTerm { term: String, line: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("document/label count mismatch: {docs} docs, {labels} labels")]
    LengthMismatch { docs: usize, labels: usize },
    #[error("target class {target} out of range (found {classes} classes)")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("empty token sequence")]
    EmptyTokens,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Bijection between term strings and ids in `[0, V)`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_terms(terms: Vec<String>) -> Result<Self, CorpusError> {
        if terms.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (id, term) in terms.iter().enumerate() {
            if index.insert(term.clone(), id).is_some() {
                return Err(CorpusError::DuplicateTerm {
                    term: term.clone(),
                    line: id + 1,
                });
            }
        }
        Ok(Self { terms, index })
    }

    /// Loads one term per line; the line number (0-based) is the term id.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut terms = Vec::new();
        for line in BufReader::new(file).lines() {
            terms.push(line.map_err(|e| io_err(path, e))?);
        }
        Self::from_terms(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(|s| s.as_str())
    }
}

/// One document as a sequence of term ids, one entry per token occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    tokens: Vec<usize>,
}

impl Document {
    pub fn new(tokens: Vec<usize>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptyTokens);
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Immutable labeled corpus. Documents are behind an `Arc` so one-vs-rest
/// relabeling shares token data instead of copying it, and corpora can be
/// handed to concurrent trainers cheaply.
#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    docs: Arc<[Document]>,
    labels: Vec<usize>,
    vocab_size: usize,
}

impl LabeledCorpus {
    pub fn new(
        docs: Vec<Document>,
        labels: Vec<usize>,
        vocab_size: usize,
    ) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        if docs.len() != labels.len() {
            return Err(CorpusError::LengthMismatch {
                docs: docs.len(),
                labels: labels.len(),
            });
        }
        if vocab_size == 0 {
            return Err(CorpusError::EmptyVocabulary);
        }
        for doc in &docs {
            if let Some(&t) = doc.tokens().iter().find(|&&t| t >= vocab_size) {
                return Err(CorpusError::TermOutOfRange {
                    line: 0,
                    term: t,
                    vocab_size,
                });
            }
        }
        Ok(Self {
            docs: docs.into(),
            labels,
            vocab_size,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc(&self, d: usize) -> &Document {
        &self.docs[d]
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn label(&self, d: usize) -> usize {
        self.labels[d]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.len()).sum()
    }

    /// Number of label classes, inferred as `max label + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Binary view for a one-vs-rest task: label becomes 1 iff the original
    /// categorical label equals `target`. Token data is shared, not copied.
    pub fn relabel_one_vs_rest(&self, target: usize) -> Result<Self, CorpusError> {
        let classes = self.num_classes();
        if target >= classes {
            return Err(CorpusError::TargetOutOfRange { target, classes });
        }
        let labels = self
            .labels
            .iter()
            .map(|&y| usize::from(y == target))
            .collect();
        Ok(Self {
            docs: Arc::clone(&self.docs),
            labels,
            vocab_size: self.vocab_size,
        })
    }

    /// Writes the corpus back in the sparse line format. Token sequences are
    /// run-length encoded in order, so reloading reproduces them exactly.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut out = BufWriter::new(file);
        for (doc, &label) in self.docs.iter().zip(&self.labels) {
            write!(out, "{label}").map_err(|e| io_err(path, e))?;
            let tokens = doc.tokens();
            let mut i = 0;
            while i < tokens.len() {
                let term = tokens[i];
                let mut run = 1;
                while i + run < tokens.len() && tokens[i + run] == term {
                    run += 1;
                }
                write!(out, " {term}:{run}").map_err(|e| io_err(path, e))?;
                i += run;
            }
            writeln!(out).map_err(|e| io_err(path, e))?;
        }
        out.flush().map_err(|e| io_err(path, e))
    }
}

/// Loads a labeled corpus from a data file and its vocabulary file. Counts
/// are expanded to per-token sequences in entry order.
pub fn load_corpus<P: AsRef<Path>, Q: AsRef<Path>>(
    data_path: P,
    vocab_path: Q,
) -> Result<LabeledCorpus, CorpusError> {
    let vocab = Vocabulary::load(vocab_path)?;
    load_corpus_with_vocab_size(data_path, vocab.len())
}

/// Same as [`load_corpus`] but with the vocabulary size given directly, for
/// callers that already hold a [`Vocabulary`] or a trained model's `V`.
pub fn load_corpus_with_vocab_size<P: AsRef<Path>>(
    data_path: P,
    vocab_size: usize,
) -> Result<LabeledCorpus, CorpusError> {
    if vocab_size == 0 {
        return Err(CorpusError::EmptyVocabulary);
    }
    load_corpus_impl(data_path.as_ref(), Some(vocab_size))
}

/// Loads a data file without an upper bound on term ids; the corpus reports
/// `max id + 1` as its vocabulary size. Used for prediction inputs, where
/// ids beyond the model's vocabulary are treated as unseen terms downstream.
pub fn load_corpus_unbounded<P: AsRef<Path>>(data_path: P) -> Result<LabeledCorpus, CorpusError> {
    load_corpus_impl(data_path.as_ref(), None)
}

fn load_corpus_impl(path: &Path, vocab_size: Option<usize>) -> Result<LabeledCorpus, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let bound = vocab_size.unwrap_or(usize::MAX);
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    let mut max_term = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (label, tokens) = parse_line(&line, line_no, bound)?;
        max_term = tokens.iter().copied().max().map_or(max_term, |m| max_term.max(m));
        docs.push(Document { tokens });
        labels.push(label);
    }
    if docs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(LabeledCorpus {
        docs: docs.into(),
        labels,
        vocab_size: vocab_size.unwrap_or(max_term + 1),
    })
}

fn parse_line(
    line: &str,
    line_no: usize,
    vocab_size: usize,
) -> Result<(usize, Vec<usize>), CorpusError> {
    let mut fields = line.split_whitespace();
    let label_str = fields.next().ok_or(CorpusError::EmptyDocument { line: line_no })?;
    let label: usize = label_str
        .parse()
        .map_err(|_| CorpusError::MalformedLabel {
            line: line_no,
            label: label_str.to_string(),
        })?;
    let mut tokens = Vec::new();
    for entry in fields {
        let (term_str, count_str) =
            entry.split_once(':').ok_or_else(|| CorpusError::MalformedEntry {
                line: line_no,
                entry: entry.to_string(),
            })?;
        let term: usize = term_str.parse().map_err(|_| CorpusError::MalformedEntry {
            line: line_no,
            entry: entry.to_string(),
        })?;
        let count: i64 = count_str.parse().map_err(|_| CorpusError::MalformedEntry {
            line: line_no,
            entry: entry.to_string(),
        })?;
        if term >= vocab_size {
            return Err(CorpusError::TermOutOfRange {
                line: line_no,
                term,
                vocab_size,
            });
        }
        if count <= 0 {
            return Err(CorpusError::NonPositiveCount {
                line: line_no,
                count,
            });
        }
        tokens.extend(std::iter::repeat_n(term, count as usize));
    }
    if tokens.is_empty() {
        return Err(CorpusError::EmptyDocument { line: line_no });
    }
    Ok((label, tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn expands_counts_into_token_sequences() {
        let data = write_temp("1 0:2 3:1\n0 1:1\n");
        let corpus = load_corpus_with_vocab_size(data.path(), 4).unwrap();
        assert_eq!(corpus.num_docs(), 2);
        assert_eq!(corpus.doc(0).tokens(), &[0, 0, 3]);
        assert_eq!(corpus.label(0), 1);
        assert_eq!(corpus.doc(1).tokens(), &[1]);
        assert_eq!(corpus.label(1), 0);
        assert_eq!(corpus.total_tokens(), 4);
    }

    #[test]
    fn term_id_out_of_range_is_rejected() {
        let data = write_temp("1 7:1\n");
        match load_corpus_with_vocab_size(data.path(), 4) {
            Err(CorpusError::TermOutOfRange { line: 1, term: 7, vocab_size: 4 }) => {}
            other => panic!("expected TermOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn negative_count_reports_line_number() {
        let data = write_temp("0 1:1\n1 2:-3\n");
        match load_corpus_with_vocab_size(data.path(), 4) {
            Err(CorpusError::NonPositiveCount { line: 2, count: -3 }) => {}
            other => panic!("expected NonPositiveCount, got {other:?}"),
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        let data = write_temp("0 1:0\n");
        assert!(matches!(
            load_corpus_with_vocab_size(data.path(), 4),
            Err(CorpusError::NonPositiveCount { line: 1, count: 0 })
        ));
    }

    #[test]
    fn empty_document_is_rejected() {
        let data = write_temp("1\n");
        assert!(matches!(
            load_corpus_with_vocab_size(data.path(), 4),
            Err(CorpusError::EmptyDocument { line: 1 })
        ));
    }

    #[test]
    fn malformed_entry_reports_line_number() {
        let data = write_temp("0 1:1\n0 oops\n");
        match load_corpus_with_vocab_size(data.path(), 4) {
            Err(CorpusError::MalformedEntry { line: 2, entry }) => assert_eq!(entry, "oops"),
            other => panic!("expected MalformedEntry, got {other:?}"),
        }
    }

    #[test]
    fn vocabulary_is_a_bijection() {
        let vocab_file = write_temp("apple\nbanana\ncherry\n");
        let vocab = Vocabulary::load(vocab_file.path()).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.id("banana"), Some(1));
        assert_eq!(vocab.term(2), Some("cherry"));
        assert_eq!(vocab.id("durian"), None);
    }

    #[test]
    fn duplicate_vocab_terms_are_rejected() {
        let vocab_file = write_temp("apple\napple\n");
        assert!(matches!(
            Vocabulary::load(vocab_file.path()),
            Err(CorpusError::DuplicateTerm { .. })
        ));
    }

    #[test]
    fn relabel_one_vs_rest_binarizes() {
        let docs = vec![
            Document::new(vec![0]).unwrap(),
            Document::new(vec![1]).unwrap(),
            Document::new(vec![2]).unwrap(),
            Document::new(vec![0]).unwrap(),
        ];
        let corpus = LabeledCorpus::new(docs, vec![0, 1, 2, 1], 3).unwrap();
        let binary = corpus.relabel_one_vs_rest(1).unwrap();
        assert_eq!(binary.labels(), &[0, 1, 0, 1]);
        // Token data shared, not copied.
        assert!(std::ptr::eq(corpus.docs().as_ptr(), binary.docs().as_ptr()));
    }

    #[test]
    fn relabel_all_matching_target() {
        let docs = vec![
            Document::new(vec![0]).unwrap(),
            Document::new(vec![1]).unwrap(),
        ];
        let corpus = LabeledCorpus::new(docs, vec![0, 0], 2).unwrap();
        let binary = corpus.relabel_one_vs_rest(0).unwrap();
        assert_eq!(binary.labels(), &[1, 1]);
    }

    #[test]
    fn relabel_target_out_of_range() {
        let docs = vec![Document::new(vec![0]).unwrap()];
        let corpus = LabeledCorpus::new(docs, vec![2], 3).unwrap();
        assert!(matches!(
            corpus.relabel_one_vs_rest(5),
            Err(CorpusError::TargetOutOfRange { target: 5, classes: 3 })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let data = write_temp("1 0:2 3:1 0:1\n0 1:1 2:4\n");
        let corpus = load_corpus_with_vocab_size(data.path(), 4).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        corpus.save(out.path()).unwrap();
        let reloaded = load_corpus_with_vocab_size(out.path(), 4).unwrap();
        assert_eq!(reloaded.num_docs(), corpus.num_docs());
        assert_eq!(reloaded.labels(), corpus.labels());
        for d in 0..corpus.num_docs() {
            assert_eq!(reloaded.doc(d).tokens(), corpus.doc(d).tokens());
        }
    }

    #[test]
    fn loader_reports_total_token_count() {
        let data = write_temp("1 0:2 3:1\n0 1:5\n1 2:1 0:1 1:1\n");
        let corpus = load_corpus_with_vocab_size(data.path(), 4).unwrap();
        let by_doc: usize = (0..corpus.num_docs()).map(|d| corpus.doc(d).len()).sum();
        assert_eq!(by_doc, corpus.total_tokens());
        assert_eq!(corpus.total_tokens(), 11);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_preserves_any_corpus(
            docs in proptest::collection::vec(
                proptest::collection::vec(0usize..7, 1..20),
                1..12,
            ),
            label_bits in proptest::collection::vec(0usize..3, 12),
        ) {
            let labels: Vec<usize> = docs.iter().enumerate().map(|(i, _)| label_bits[i]).collect();
            let documents: Vec<Document> =
                docs.iter().map(|t| Document::new(t.clone()).unwrap()).collect();
            let corpus = LabeledCorpus::new(documents, labels, 7).unwrap();
            let file = tempfile::NamedTempFile::new().unwrap();
            corpus.save(file.path()).unwrap();
            let reloaded = load_corpus_with_vocab_size(file.path(), 7).unwrap();
            proptest::prop_assert_eq!(reloaded.labels(), corpus.labels());
            for d in 0..corpus.num_docs() {
                proptest::prop_assert_eq!(reloaded.doc(d).tokens(), corpus.doc(d).tokens());
            }
        }
    }
}
