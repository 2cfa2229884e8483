//! Document ingestion and a boolean inverted index.
//!
//! Retrieval follows the plain containment model: a document matches a
//! term if the term occurs in its tokenized text, and a multi-term query
//! matches documents containing every term. There is no ranking.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DocId = u32;

const INDEX_MAGIC: &str = "ANONIDX";
const INDEX_VERSION: u32 = 1;
const SECTION_SEPARATOR: &str = "---";

/// Lowercases `text` and splits it on every run of non-alphanumeric
/// characters. No stemming, no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Normalizes user input to a single query token.
///
/// Multi-token input is rejected rather than silently turned into a
/// conjunction.
pub fn query_token(raw: &str) -> Result<String> {
    let mut tokens = tokenize(raw);
    match tokens.len() {
        1 => Ok(tokens.pop().unwrap()),
        0 => Err(Error::InvalidArgument(format!("`{raw}` contains no query token"))),
        n => Err(Error::InvalidArgument(format!(
            "`{raw}` tokenizes to {n} terms; queries must be a single token"
        ))),
    }
}

/// One line of a JSON Lines corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
}

impl RawDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        RawDocument {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// An ingested document; `internal_id` is its position in ingestion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub internal_id: DocId,
    pub external_id: String,
    pub text: String,
}

/// Reads a JSON Lines corpus (`{"id": ..., "text": ...}` per line).
pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawDocument>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus_jsonl(path: impl AsRef<Path>, docs: &[RawDocument]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// A sorted, duplicate-free set of document ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DocSet(Vec<DocId>);

impl DocSet {
    pub fn empty() -> Self {
        DocSet(Vec::new())
    }

    /// Wraps an already sorted, duplicate-free list.
    pub fn from_sorted(ids: Vec<DocId>) -> Result<Self> {
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "document ids must be strictly ascending".into(),
            ));
        }
        Ok(DocSet(ids))
    }

    pub fn ids(&self) -> &[DocId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn intersection(&self, other: &DocSet) -> DocSet {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.0[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        DocSet(out)
    }

    pub fn union(&self, other: &DocSet) -> DocSet {
        let mut out: Vec<DocId> = self.0.iter().chain(&other.0).copied().collect();
        out.sort_unstable();
        out.dedup();
        DocSet(out)
    }

    pub fn is_subset(&self, other: &DocSet) -> bool {
        self.0.iter().all(|id| other.contains(*id))
    }
}

impl FromIterator<DocId> for DocSet {
    fn from_iter<I: IntoIterator<Item = DocId>>(iter: I) -> Self {
        let mut ids: Vec<DocId> = iter.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        DocSet(ids)
    }
}

/// Token to posting-list index over an ingested corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<DocId>>,
    documents: Vec<RawDocument>,
}

impl InvertedIndex {
    /// Ingests `docs` in order; internal ids are assigned 0..N-1.
    pub fn build<I>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = RawDocument>,
    {
        let mut postings: BTreeMap<String, Vec<DocId>> = BTreeMap::new();
        let mut documents = Vec::new();
        let mut seen = HashSet::new();

        for doc in docs {
            if !seen.insert(doc.id.clone()) {
                return Err(Error::DuplicateDocument(doc.id));
            }
            let internal_id = DocId::try_from(documents.len())
                .map_err(|_| Error::InvalidArgument("corpus exceeds u32::MAX documents".into()))?;
            for token in tokenize(&doc.text) {
                let list = postings.entry(token).or_default();
                // Ids arrive in ascending order, so checking the tail dedups.
                if list.last() != Some(&internal_id) {
                    list.push(internal_id);
                }
            }
            documents.push(doc);
        }
        Ok(InvertedIndex {
            postings,
            documents,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.documents.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn document(&self, id: DocId) -> Option<Document> {
        self.documents.get(id as usize).map(|d| Document {
            internal_id: id,
            external_id: d.id.clone(),
            text: d.text.clone(),
        })
    }

    pub fn postings(&self, token: &str) -> &[DocId] {
        self.postings.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.postings.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// Documents containing `term`; empty for unindexed tokens.
    pub fn retrieve(&self, term: &str) -> DocSet {
        DocSet(self.postings(term).to_vec())
    }

    /// Documents containing every term in `terms`.
    pub fn retrieve_conjunctive<S: AsRef<str>>(&self, terms: &[S]) -> Result<DocSet> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("conjunctive query needs at least one term".into()));
        }
        let mut lists: Vec<&[DocId]> = terms.iter().map(|t| self.postings(t.as_ref())).collect();
        lists.sort_by_key(|l| l.len());
        let mut acc = DocSet(lists[0].to_vec());
        for list in &lists[1..] {
            if acc.is_empty() {
                break;
            }
            acc.0.retain(|id| list.binary_search(id).is_ok());
        }
        Ok(acc)
    }

    /// Serializes the index: a header line, one `token<TAB>ids` line per
    /// token in byte order, a `---` separator and the document table as
    /// JSON Lines.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<index writer>", e);
        writeln!(out, "{INDEX_MAGIC} {INDEX_VERSION} {}", self.doc_count()).map_err(io)?;
        for (token, ids) in &self.postings {
            write!(out, "{token}\t").map_err(io)?;
            for (i, id) in ids.iter().enumerate() {
                if i > 0 {
                    out.write_all(b",").map_err(io)?;
                }
                write!(out, "{id}").map_err(io)?;
            }
            out.write_all(b"\n").map_err(io)?;
        }
        writeln!(out, "{SECTION_SEPARATOR}").map_err(io)?;
        for doc in &self.documents {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse { line, message };

        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing index header".into()))?;
        let header = header.map_err(|e| Error::io("<index reader>", e))?;
        let fields: Vec<&str> = header.trim_end_matches('\r').split(' ').collect();
        if fields.len() != 3 || fields[0] != INDEX_MAGIC {
            return Err(parse_err(1, format!("bad index header `{header}`")));
        }
        if fields[1] != INDEX_VERSION.to_string() {
            return Err(parse_err(1, format!("unsupported index version {}", fields[1])));
        }
        let doc_count: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(1, format!("bad document count `{}`", fields[2])))?;

        let mut postings = BTreeMap::new();
        let mut documents = Vec::with_capacity(doc_count);
        let mut in_docs = false;
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<index reader>", e))?;
            let line = line.trim_end_matches('\r');
            if in_docs {
                if line.is_empty() {
                    continue;
                }
                let doc: RawDocument = serde_json::from_str(line)
                    .map_err(|e| parse_err(line_no, e.to_string()))?;
                documents.push(doc);
                continue;
            }
            if line == SECTION_SEPARATOR {
                in_docs = true;
                continue;
            }
            let (token, ids) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(line_no, "posting line lacks a tab".into()))?;
            let ids = ids
                .split(',')
                .map(|s| s.parse::<DocId>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(line_no, e.to_string()))?;
            if ids.windows(2).any(|w| w[0] >= w[1]) || ids.iter().any(|&id| id as usize >= doc_count) {
                return Err(parse_err(line_no, format!("invalid posting list for `{token}`")));
            }
            if postings.insert(token.to_string(), ids).is_some() {
                return Err(parse_err(line_no, format!("duplicate token `{token}`")));
            }
        }
        if !in_docs {
            return Err(parse_err(0, "missing document table".into()));
        }
        if documents.len() != doc_count {
            return Err(parse_err(
                0,
                format!("header declares {doc_count} documents, table has {}", documents.len()),
            ));
        }
        Ok(InvertedIndex {
            postings,
            documents,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Loads a persisted index, or builds one when `path` is a JSON Lines
    /// corpus.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let is_index = reader
            .fill_buf()
            .map_err(|e| Error::io(path, e))?
            .starts_with(INDEX_MAGIC.as_bytes());
        if is_index {
            Self::read_from(reader)
        } else {
            Self::build(read_corpus_jsonl(path)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> InvertedIndex {
        InvertedIndex::build(vec![RawDocument::new("d0", "a b"), RawDocument::new("d1", "b c")]).unwrap()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Bill Gates!"), vec!["bill", "gates"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("führer\u{2014}1945"), vec!["führer", "1945"]);
        assert_eq!(tokenize("  --a--B  "), vec!["a", "b"]);
    }

    #[test]
    fn query_token_rejects_phrases() {
        assert_eq!(query_token(" Hitler ").unwrap(), "hitler");
        assert!(query_token("mass murder").is_err());
        assert!(query_token("!!").is_err());
    }

    #[test]
    fn hand_built_postings() {
        let idx = small();
        assert_eq!(idx.postings("a"), &[0]);
        assert_eq!(idx.postings("b"), &[0, 1]);
        assert_eq!(idx.postings("c"), &[1]);
        assert_eq!(idx.retrieve("b").ids(), &[0, 1]);
        assert!(idx.retrieve("zzz").is_empty());
    }

    #[test]
    fn conjunctive_queries() {
        let idx = small();
        assert_eq!(idx.retrieve_conjunctive(&["a", "b"]).unwrap().ids(), &[0]);
        assert!(idx.retrieve_conjunctive(&["a", "zzz"]).unwrap().is_empty());
        assert!(idx.retrieve_conjunctive::<&str>(&[]).is_err());
    }

    #[test]
    fn empty_stream_and_duplicates() {
        let idx = InvertedIndex::build(Vec::new()).unwrap();
        assert_eq!(idx.doc_count(), 0);
        assert_eq!(idx.vocabulary_size(), 0);
        let dup = InvertedIndex::build(vec![RawDocument::new("x", "a"), RawDocument::new("x", "b")]);
        assert!(matches!(dup, Err(Error::DuplicateDocument(id)) if id == "x"));
    }

    #[test]
    fn repeated_tokens_post_once() {
        let idx = InvertedIndex::build(vec![RawDocument::new("d", "a a A")]).unwrap();
        assert_eq!(idx.postings("a"), &[0]);
    }

    #[test]
    fn persistence_format() {
        let idx = small();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "ANONIDX 1 2\na\t0\nb\t0,1\nc\t1\n---\n{\"id\":\"d0\",\"text\":\"a b\"}\n{\"id\":\"d1\",\"text\":\"b c\"}\n"
        );
        let back = InvertedIndex::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn corrupt_index_is_rejected() {
        assert!(InvertedIndex::read_from("NOPE 1 0\n---\n".as_bytes()).is_err());
        assert!(InvertedIndex::read_from("ANONIDX 1 1\na\t3\n---\n{\"id\":\"x\",\"text\":\"a\"}\n".as_bytes()).is_err());
        assert!(InvertedIndex::read_from("ANONIDX 1 2\na\t0\n---\n{\"id\":\"x\",\"text\":\"a\"}\n".as_bytes()).is_err());
    }

    #[test]
    fn docset_algebra() {
        let a: DocSet = [3, 1, 2, 2].into_iter().collect();
        let b = DocSet::from_sorted(vec![2, 3, 4]).unwrap();
        assert_eq!(a.ids(), &[1, 2, 3]);
        assert_eq!(a.intersection(&b).ids(), &[2, 3]);
        assert_eq!(a.union(&b).ids(), &[1, 2, 3, 4]);
        assert!(DocSet::from_sorted(vec![2, 2]).is_err());
        assert!(a.intersection(&b).is_subset(&a));
    }
}
