//! Interpolated bigram/unigram logit provider.
//!
//! A stand-in for a diffusion backbone: each masked position is scored from
//! the nearest committed token to its left (or a begin marker), as
//! `log(μ·P(v | prev) + (1 − μ)·P(v))`. Both distributions are add-κ smoothed
//! over the full vocabulary, so every logit is finite.
//!
//! The vocabulary is the corpus vocabulary with an `<eos>` token appended;
//! every document ends with an implicit EOS.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{LabeledCorpus, SpecialKind, Vocab};
use crate::decoder::LogitProvider;
use crate::tsv::{self, Metadata};
use crate::{Error, Result, TokenId};

pub const DEFAULT_MU: f64 = 0.7;
pub const DEFAULT_KAPPA: f64 = 0.1;
pub const EOS_TOKEN: &str = "<eos>";

/// Conditioning context of a bigram row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prev {
    Begin,
    Token(TokenId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockModel {
    vocab: Vocab,
    mu: f64,
    kappa: f64,
    unigram_counts: Vec<u64>,
    bigram_counts: BTreeMap<Prev, BTreeMap<TokenId, u64>>,
    unigram: Vec<f64>,
    bigram: BTreeMap<Prev, Vec<f64>>,
    /// Row for contexts never observed in training (all-zero counts, smoothed).
    uniform: Vec<f64>,
}

fn check_hyper(mu: f64, kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::Param(format!("mu must lie in [0, 1], got {mu}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Param(format!("kappa must be > 0, got {kappa}")));
    }
    Ok(())
}

fn smoothed(counts: impl Iterator<Item = (usize, u64)>, width: usize, kappa: f64) -> Vec<f64> {
    let mut row = vec![kappa; width];
    for (v, c) in counts {
        row[v] += c as f64;
    }
    let total: f64 = row.iter().sum();
    for p in &mut row {
        *p /= total;
    }
    row
}

impl MockModel {
    /// Train on tokenized documents. `vocab` must already contain
    /// `<eos>` flagged as the EOS special.
    pub fn train<'a, I>(vocab: Vocab, documents: I, mu: f64, kappa: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        check_hyper(mu, kappa)?;
        let eos = vocab
            .special(SpecialKind::Eos)
            .ok_or_else(|| Error::Training("vocabulary has no EOS token".into()))?;
        let mut unigram_counts = vec![0u64; vocab.len()];
        let mut bigram_counts: BTreeMap<Prev, BTreeMap<TokenId, u64>> = BTreeMap::new();
        let mut seen_tokens = 0usize;
        for doc in documents {
            if doc.is_empty() {
                continue;
            }
            let mut prev = Prev::Begin;
            for &tok in doc.iter().chain(std::iter::once(&eos)) {
                if tok as usize >= vocab.len() {
                    return Err(Error::Training(format!("token id {tok} outside vocabulary")));
                }
                unigram_counts[tok as usize] += 1;
                *bigram_counts.entry(prev).or_default().entry(tok).or_default() += 1;
                prev = Prev::Token(tok);
            }
            seen_tokens += doc.len();
        }
        if seen_tokens == 0 {
            return Err(Error::Training("corpus has no tokens".into()));
        }
        Ok(Self::from_counts(vocab, mu, kappa, unigram_counts, bigram_counts))
    }

    /// Train on every document of a labeled corpus, pooled across classes.
    pub fn train_on_corpus(corpus: &LabeledCorpus, mu: f64, kappa: f64) -> Result<Self> {
        let mut vocab = corpus.vocab.clone();
        if vocab.id(EOS_TOKEN).is_some() {
            return Err(Error::Training(format!("corpus already uses the reserved token {EOS_TOKEN}")));
        }
        let eos = vocab.intern(EOS_TOKEN);
        vocab.set_special(SpecialKind::Eos, eos)?;
        Self::train(vocab, corpus.documents(), mu, kappa)
    }

    fn from_counts(
        vocab: Vocab,
        mu: f64,
        kappa: f64,
        unigram_counts: Vec<u64>,
        bigram_counts: BTreeMap<Prev, BTreeMap<TokenId, u64>>,
    ) -> Self {
        let width = vocab.len();
        let unigram = smoothed(unigram_counts.iter().copied().enumerate(), width, kappa);
        let bigram = bigram_counts
            .iter()
            .map(|(&prev, row)| {
                (
                    prev,
                    smoothed(row.iter().map(|(&v, &c)| (v as usize, c)), width, kappa),
                )
            })
            .collect();
        let uniform = smoothed(std::iter::empty(), width, kappa);
        Self {
            vocab,
            mu,
            kappa,
            unigram_counts,
            bigram_counts,
            unigram,
            bigram,
            uniform,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn unigram(&self) -> &[f64] {
        &self.unigram
    }

    pub fn bigram_row(&self, prev: Prev) -> &[f64] {
        self.bigram.get(&prev).unwrap_or(&self.uniform)
    }

    pub fn observed_contexts(&self) -> impl Iterator<Item = Prev> + '_ {
        self.bigram.keys().copied()
    }

    /// Copy with a different interpolation weight.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        check_hyper(mu, self.kappa)?;
        Ok(Self {
            mu,
            ..self.clone()
        })
    }

    /// Most frequent non-special token, a convenient neutral prompt.
    pub fn most_frequent_token(&self) -> TokenId {
        let mut best = None;
        for (id, &c) in self.unigram_counts.iter().enumerate() {
            let id = id as TokenId;
            if self.vocab.is_special(id) {
                continue;
            }
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((id, c));
            }
        }
        best.map(|(id, _)| id).unwrap_or(0)
    }

    /// Logits for one position given its conditioning context.
    pub fn logits_given(&self, prev: Prev) -> Vec<f64> {
        let bi = self.bigram_row(prev);
        bi.iter()
            .zip(&self.unigram)
            .map(|(&b, &u)| (self.mu * b + (1.0 - self.mu) * u).ln())
            .collect()
    }

    /// Nearest committed token to the left of `position`.
    pub fn context_of(seq: &[Option<TokenId>], position: usize) -> Prev {
        seq[..position.min(seq.len())]
            .iter()
            .rev()
            .find_map(|s| s.map(Prev::Token))
            .unwrap_or(Prev::Begin)
    }

    pub fn to_tsv(&self) -> String {
        let mut meta = Metadata::new();
        meta.set("format", "mock-model")
            .set("mu", tsv::fmt_f64(self.mu))
            .set("kappa", tsv::fmt_f64(self.kappa))
            .set("vocab_sha", self.vocab.fingerprint());
        for (kind, id) in self.vocab.specials() {
            meta.set(format!("special.{}", kind.as_str()), id.to_string());
        }
        let mut out = meta.render();
        out.push_str("# unigram rows: U<TAB>token<TAB>id<TAB>count\n");
        out.push_str("# bigram rows: B<TAB>prev-id or ^<TAB>next-id<TAB>count\n");
        for (id, tok) in self.vocab.tokens().iter().enumerate() {
            out.push_str(&format!("U\t{}\t{id}\t{}\n", tsv::escape(tok), self.unigram_counts[id]));
        }
        for (prev, row) in &self.bigram_counts {
            let p = match prev {
                Prev::Begin => "^".to_string(),
                Prev::Token(t) => t.to_string(),
            };
            for (next, c) in row {
                out.push_str(&format!("B\t{p}\t{next}\t{c}\n"));
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let doc = tsv::split_document(text)?;
        if doc.meta.get("format") != Some("mock-model") {
            return Err(Error::parse(1, "not a mock-model file (missing `#! format=mock-model`)"));
        }
        let mu = tsv::parse_f64(doc.meta.require("mu")?, 0)?;
        let kappa = tsv::parse_f64(doc.meta.require("kappa")?, 0)?;
        check_hyper(mu, kappa)?;
        let mut tokens = Vec::new();
        let mut unigram_counts = Vec::new();
        let mut bigram_counts: BTreeMap<Prev, BTreeMap<TokenId, u64>> = BTreeMap::new();
        for row in &doc.rows {
            match row.fields.first().copied() {
                Some("U") => {
                    row.expect_len(4)?;
                    let id = tsv::parse_u64(row.fields[2], row.line)?;
                    if id as usize != tokens.len() {
                        return Err(Error::parse(row.line, "unigram rows must list dense ids in order"));
                    }
                    tokens.push(tsv::unescape(row.fields[1], row.line)?);
                    unigram_counts.push(tsv::parse_u64(row.fields[3], row.line)?);
                }
                Some("B") => {
                    row.expect_len(4)?;
                    let prev = match row.fields[1] {
                        "^" => Prev::Begin,
                        p => Prev::Token(tsv::parse_u64(p, row.line)? as TokenId),
                    };
                    let next = tsv::parse_u64(row.fields[2], row.line)? as TokenId;
                    let c = tsv::parse_u64(row.fields[3], row.line)?;
                    if bigram_counts.entry(prev).or_default().insert(next, c).is_some() {
                        return Err(Error::parse(row.line, "duplicate bigram row"));
                    }
                }
                _ => return Err(Error::parse(row.line, "row must start with U or B")),
            }
        }
        let mut vocab = Vocab::from_tokens(tokens)?;
        for kind in [SpecialKind::Mask, SpecialKind::Eos, SpecialKind::Pad] {
            if let Some(id) = doc.meta.get(&format!("special.{}", kind.as_str())) {
                vocab.set_special(kind, tsv::parse_u64(id, 0)? as TokenId)?;
            }
        }
        if let Some(sha) = doc.meta.get("vocab_sha") {
            if sha != vocab.fingerprint() {
                return Err(Error::parse(0, "vocab_sha does not match the listed tokens"));
            }
        }
        let width = vocab.len() as u64;
        let out_of_range = bigram_counts.iter().any(|(p, row)| {
            matches!(p, Prev::Token(t) if *t as u64 >= width) || row.keys().any(|&n| n as u64 >= width)
        });
        if out_of_range {
            return Err(Error::parse(0, "bigram row references an id outside the vocabulary"));
        }
        Ok(Self::from_counts(vocab, mu, kappa, unigram_counts, bigram_counts))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

impl LogitProvider for MockModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logits(&self, seq: &[Option<TokenId>], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        positions
            .iter()
            .map(|&p| {
                if p >= seq.len() {
                    return Err(Error::Param(format!("position {p} beyond sequence of {}", seq.len())));
                }
                Ok(self.logits_given(Self::context_of(seq, p)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(text: &[&[&str]], mu: f64, kappa: f64) -> MockModel {
        let mut vocab = Vocab::new();
        let docs: Vec<Vec<TokenId>> = text
            .iter()
            .map(|d| d.iter().map(|t| vocab.intern(t)).collect())
            .collect();
        let eos = vocab.intern(EOS_TOKEN);
        vocab.set_special(SpecialKind::Eos, eos).unwrap();
        MockModel::train(vocab, docs.iter().map(Vec::as_slice), mu, kappa).unwrap()
    }

    #[test]
    fn bigram_mle_in_small_kappa_limit() {
        let m = model(&[&["a", "b", "a", "b"]], 0.7, 1e-9);
        let a = m.vocab().id("a").unwrap();
        let b = m.vocab().id("b").unwrap();
        assert!((m.bigram_row(Prev::Token(a))[b as usize] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rows_are_normalized() {
        let m = model(&[&["x", "y", "z", "x"], &["z", "z"]], 0.5, 0.3);
        assert!((m.unigram().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for prev in m.observed_contexts().collect::<Vec<_>>() {
            assert!((m.bigram_row(prev).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((m.bigram_row(Prev::Token(999)).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mu_zero_is_position_independent() {
        let m = model(&[&["a", "b", "c", "a"]], 0.0, 0.1);
        let seq = vec![Some(0), None, Some(2), None];
        let out = m.logits(&seq, &[1, 3]).unwrap();
        assert_eq!(out[0], out[1]);
        let expected: Vec<f64> = m.unigram().iter().map(|p| p.ln()).collect();
        assert_eq!(out[0], expected);
    }

    #[test]
    fn nearest_committed_left_neighbour() {
        let seq = vec![Some(4), Some(1), None, None, Some(3)];
        assert_eq!(MockModel::context_of(&seq, 3), Prev::Token(1));
        assert_eq!(MockModel::context_of(&seq, 0), Prev::Begin);
        let seq = vec![None, None];
        assert_eq!(MockModel::context_of(&seq, 1), Prev::Begin);

        let m = model(&[&["a", "b", "c"]], 0.7, 0.1);
        let seq = vec![Some(0), Some(1), None, None];
        let out = m.logits(&seq, &[3]).unwrap();
        assert_eq!(out[0], m.logits_given(Prev::Token(1)));
    }

    #[test]
    fn deterministic_and_finite() {
        let m = model(&[&["a", "b"], &["b", "c"]], 0.7, 0.1);
        let seq = vec![Some(0), None, None];
        let x = m.logits(&seq, &[1, 2]).unwrap();
        assert_eq!(x, m.logits(&seq, &[1, 2]).unwrap());
        assert!(x.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut vocab = Vocab::from_tokens([EOS_TOKEN]).unwrap();
        vocab.set_special(SpecialKind::Eos, 0).unwrap();
        let docs: Vec<&[TokenId]> = vec![&[]];
        assert!(matches!(MockModel::train(vocab, docs, 0.7, 0.1), Err(Error::Training(_))));
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        let mut vocab = Vocab::from_tokens(["a", EOS_TOKEN]).unwrap();
        vocab.set_special(SpecialKind::Eos, 1).unwrap();
        let docs: Vec<&[TokenId]> = vec![&[0]];
        assert!(MockModel::train(vocab.clone(), docs.clone(), 1.5, 0.1).is_err());
        assert!(MockModel::train(vocab, docs, 0.5, 0.0).is_err());
    }

    #[test]
    fn save_load_is_exact() {
        let m = model(&[&["a", "b", "a", "#c"], &["b", "\tq"]], 0.7, 0.1);
        let back = MockModel::from_tsv(&m.to_tsv()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn most_frequent_skips_specials() {
        let m = model(&[&["a", "b", "b"]], 0.7, 0.1);
        assert_eq!(m.vocab().token(m.most_frequent_token()), Some("b"));
    }
}
