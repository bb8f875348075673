//! Class-labeled corpus ingestion and per-class token counting.
//!
//! A corpus root holds one subdirectory per class; every `*.txt` file inside a
//! class directory contributes one document per line. Classes and files are
//! visited in lexicographic order so token ids are reproducible.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::tsv::{self, Metadata};
use crate::{Error, Result, TokenId};

/// Role of a special token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpecialKind {
    Mask,
    Eos,
    Pad,
}

impl SpecialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpecialKind::Mask => "mask",
            SpecialKind::Eos => "eos",
            SpecialKind::Pad => "pad",
        }
    }
}

/// Bijective token-string <-> dense id mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    special: BTreeMap<SpecialKind, TokenId>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from tokens listed in id order. Duplicates are rejected.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for tok in tokens {
            let tok = tok.into();
            if vocab.index.contains_key(&tok) {
                return Err(Error::Config(format!("duplicate token {tok:?} in vocabulary")));
            }
            vocab.intern(&tok);
        }
        Ok(vocab)
    }

    /// Id of `token`, appending it with the next dense id if unseen.
    pub fn intern(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Flag an existing id as special.
    pub fn set_special(&mut self, kind: SpecialKind, id: TokenId) -> Result<()> {
        if id as usize >= self.len() {
            return Err(Error::Config(format!(
                "special {} id {id} outside vocabulary of size {}",
                kind.as_str(),
                self.len()
            )));
        }
        self.special.insert(kind, id);
        Ok(())
    }

    pub fn special(&self, kind: SpecialKind) -> Option<TokenId> {
        self.special.get(&kind).copied()
    }

    pub fn specials(&self) -> impl Iterator<Item = (SpecialKind, TokenId)> + '_ {
        self.special.iter().map(|(&k, &v)| (k, v))
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.values().any(|&s| s == id)
    }

    /// SHA-256 over the token strings in id order, hex encoded.
    pub fn fingerprint(&self) -> String {
        fingerprint_tokens(self.tokens.iter().map(String::as_str))
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub(crate) fn fingerprint_tokens<'a>(tokens: impl Iterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for tok in tokens {
        hasher.update(tok.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenizerKind {
    /// Split on Unicode whitespace; every punctuation character is its own token.
    #[default]
    WhitespacePunct,
    /// Lines hold whitespace-separated integer ids from an external tokenizer.
    ExternalIds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    None,
    #[default]
    Lowercase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    pub normalization: Normalization,
}

impl TokenizerSpec {
    pub fn describe(&self) -> String {
        let kind = match self.kind {
            TokenizerKind::WhitespacePunct => "whitespace-punct",
            TokenizerKind::ExternalIds => "external-ids",
        };
        let norm = match self.normalization {
            Normalization::None => "none",
            Normalization::Lowercase => "lowercase",
        };
        format!("{kind}/{norm}")
    }
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Split `text` into token strings without touching a vocabulary.
pub fn split_tokens(text: &str, spec: TokenizerSpec) -> Result<Vec<String>> {
    let text = match spec.normalization {
        Normalization::None => text.to_owned(),
        Normalization::Lowercase => text.to_lowercase(),
    };
    let mut out = Vec::new();
    match spec.kind {
        TokenizerKind::WhitespacePunct => {
            for word in text.split_whitespace() {
                let mut start = None;
                for (i, c) in word.char_indices() {
                    if is_punct(c) {
                        if let Some(s) = start.take() {
                            out.push(word[s..i].to_owned());
                        }
                        out.push(c.to_string());
                    } else if start.is_none() {
                        start = Some(i);
                    }
                }
                if let Some(s) = start {
                    out.push(word[s..].to_owned());
                }
            }
        }
        TokenizerKind::ExternalIds => {
            for field in text.split_whitespace() {
                let id: u64 = field
                    .parse()
                    .map_err(|_| Error::Config(format!("external id stream holds non-integer {field:?}")))?;
                out.push(id.to_string());
            }
        }
    }
    Ok(out)
}

/// Tokenize `text`, appending unseen token strings to `vocab`.
pub fn tokenize(text: &str, spec: TokenizerSpec, vocab: &mut Vocab) -> Result<Vec<TokenId>> {
    Ok(split_tokens(text, spec)?
        .iter()
        .map(|t| vocab.intern(t))
        .collect())
}

/// Tokenize against a fixed vocabulary; unknown tokens are an error.
pub fn tokenize_known(text: &str, spec: TokenizerSpec, vocab: &Vocab) -> Result<Vec<TokenId>> {
    split_tokens(text, spec)?
        .iter()
        .map(|t| {
            vocab
                .id(t)
                .ok_or_else(|| Error::Config(format!("token {t:?} is not in the vocabulary")))
        })
        .collect()
}

/// Per-class token counts `c_k(v)` and totals `N_k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    class_names: Vec<String>,
    counts: Vec<Vec<u64>>,
    totals: Vec<u64>,
}

impl ClassCounts {
    /// Validates `K >= 2`, equal row lengths and recomputes totals.
    pub fn new(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, found {}",
                class_names.len()
            )));
        }
        if counts.len() != class_names.len() {
            return Err(Error::Config(format!(
                "{} class names but {} count vectors",
                class_names.len(),
                counts.len()
            )));
        }
        let width = counts[0].len();
        if let Some(bad) = counts.iter().find(|c| c.len() != width) {
            return Err(Error::Shape {
                expected: width,
                got: bad.len(),
            });
        }
        let totals: Vec<u64> = counts.iter().map(|c| c.iter().sum()).collect();
        for (name, &n) in class_names.iter().zip(&totals) {
            if n == 0 {
                return Err(Error::Config(format!("class `{name}` has no tokens")));
            }
        }
        Ok(Self {
            class_names,
            counts,
            totals,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn vocab_len(&self) -> usize {
        self.counts[0].len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn counts(&self, k: usize) -> &[u64] {
        &self.counts[k]
    }

    pub fn total(&self, k: usize) -> u64 {
        self.totals[k]
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    /// `c_¬k(v)`: counts summed over every class except `k`.
    pub fn complement(&self, k: usize) -> Vec<u64> {
        let mut out = vec![0u64; self.vocab_len()];
        for (j, row) in self.counts.iter().enumerate() {
            if j != k {
                for (o, &c) in out.iter_mut().zip(row) {
                    *o += c;
                }
            }
        }
        out
    }

    pub fn complement_total(&self, k: usize) -> u64 {
        self.totals
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &n)| n)
            .sum()
    }
}

/// `result[v] = Σ_k c_k(v)`.
pub fn pooled_counts(counts: &ClassCounts) -> Vec<u64> {
    let mut out = vec![0u64; counts.vocab_len()];
    for k in 0..counts.num_classes() {
        for (o, &c) in out.iter_mut().zip(counts.counts(k)) {
            *o += c;
        }
    }
    out
}

/// A loaded corpus that keeps tokenized documents around (the mock model
/// needs bigrams, not just counts).
#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    pub vocab: Vocab,
    pub classes: Vec<ClassDocs>,
}

#[derive(Debug, Clone)]
pub struct ClassDocs {
    pub name: String,
    pub documents: Vec<Vec<TokenId>>,
}

impl LabeledCorpus {
    /// Read every class directory under `root`.
    pub fn read(root: &Path, spec: TokenizerSpec) -> Result<Self> {
        let mut class_dirs = Vec::new();
        let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(root, e))?;
            let path = entry.path();
            if path.is_dir() {
                let name = entry.file_name().to_string_lossy().into_owned();
                class_dirs.push((name, path));
            }
        }
        class_dirs.sort();
        if class_dirs.len() < 2 {
            return Err(Error::Config(format!(
                "{}: need at least 2 class subdirectories, found {}",
                root.display(),
                class_dirs.len()
            )));
        }

        let mut vocab = Vocab::new();
        let mut classes = Vec::with_capacity(class_dirs.len());
        for (name, dir) in class_dirs {
            let mut documents = Vec::new();
            for file in text_files(&dir)? {
                let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
                for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
                    let line = std::str::from_utf8(raw).map_err(|_| Error::Utf8 {
                        path: file.clone(),
                        line: i + 1,
                    })?;
                    let ids = tokenize(line, spec, &mut vocab)?;
                    if !ids.is_empty() {
                        documents.push(ids);
                    }
                }
            }
            if documents.iter().all(|d| d.is_empty()) {
                return Err(Error::Config(format!("class `{name}` has no tokens")));
            }
            classes.push(ClassDocs { name, documents });
        }
        Ok(Self { vocab, classes })
    }

    pub fn counts(&self) -> Result<ClassCounts> {
        let width = self.vocab.len();
        let counts = self
            .classes
            .iter()
            .map(|class| {
                let mut row = vec![0u64; width];
                for doc in &class.documents {
                    for &id in doc {
                        row[id as usize] += 1;
                    }
                }
                row
            })
            .collect();
        ClassCounts::new(self.classes.iter().map(|c| c.name.clone()).collect(), counts)
    }

    pub fn documents(&self) -> impl Iterator<Item = &[TokenId]> {
        self.classes
            .iter()
            .flat_map(|c| c.documents.iter().map(Vec::as_slice))
    }
}

fn text_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Read a corpus root into a vocabulary and per-class counts.
pub fn load_labeled_corpus(root: &Path, spec: TokenizerSpec) -> Result<(Vocab, ClassCounts)> {
    let corpus = LabeledCorpus::read(root, spec)?;
    let counts = corpus.counts()?;
    Ok((corpus.vocab, counts))
}

/// Render the count table: header row, one row per id, then a totals comment.
pub fn write_count_table(vocab: &Vocab, counts: &ClassCounts, meta: &Metadata) -> Result<String> {
    if vocab.len() != counts.vocab_len() {
        return Err(Error::Shape {
            expected: vocab.len(),
            got: counts.vocab_len(),
        });
    }
    let mut out = meta.render();
    out.push_str("token\tid");
    for name in counts.class_names() {
        out.push_str("\tc_");
        out.push_str(&tsv::escape(name));
    }
    out.push('\n');
    for (id, tok) in vocab.tokens().iter().enumerate() {
        out.push_str(&tsv::escape(tok));
        out.push('\t');
        out.push_str(&id.to_string());
        for k in 0..counts.num_classes() {
            out.push('\t');
            out.push_str(&counts.counts(k)[id].to_string());
        }
        out.push('\n');
    }
    out.push_str("# totals:");
    for (i, n) in counts.totals().iter().enumerate() {
        out.push(if i == 0 { '\t' } else { ' ' });
        out.push_str(&n.to_string());
    }
    out.push('\n');
    Ok(out)
}

/// Parse a count table written by [`write_count_table`].
pub fn read_count_table(text: &str) -> Result<(Vocab, ClassCounts, Metadata)> {
    let doc = tsv::split_document(text)?;
    let mut rows = doc.rows.iter();
    let header = rows.next().ok_or_else(|| Error::parse(1, "missing header row"))?;
    if header.fields.len() < 4 || header.fields[0] != "token" || header.fields[1] != "id" {
        return Err(Error::parse(header.line, "expected header `token\\tid\\tc_<class>...`"));
    }
    let names = header.fields[2..]
        .iter()
        .map(|f| {
            f.strip_prefix("c_")
                .ok_or_else(|| Error::parse(header.line, format!("column {f:?} lacks `c_` prefix")))
                .and_then(|n| tsv::unescape(n, header.line))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = names.len();
    let mut tokens = Vec::new();
    let mut counts = vec![Vec::new(); k];
    for row in rows {
        row.expect_len(k + 2)?;
        let id = tsv::parse_u64(row.fields[1], row.line)?;
        if id as usize != tokens.len() {
            return Err(Error::parse(row.line, format!("ids must be dense and sorted; got {id}")));
        }
        tokens.push(tsv::unescape(row.fields[0], row.line)?);
        for (j, f) in row.fields[2..].iter().enumerate() {
            counts[j].push(tsv::parse_u64(f, row.line)?);
        }
    }
    let vocab = Vocab::from_tokens(tokens)?;
    let counts = ClassCounts::new(names, counts)?;
    if let Some(&(line, body)) = doc.comments.iter().find(|(_, b)| b.trim_start().starts_with("totals:")) {
        let stated = body.trim_start()["totals:".len()..]
            .split_whitespace()
            .map(|s| tsv::parse_u64(s, line))
            .collect::<Result<Vec<_>>>()?;
        if stated != counts.totals() {
            return Err(Error::parse(line, "totals line disagrees with the rows"));
        }
    }
    Ok((vocab, counts, doc.meta))
}
