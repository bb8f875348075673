//! One-vs-rest log-odds token scores with a pooled Dirichlet prior.
//!
//! For class `k` with counts `c_k(v)`, totals `N_k`, complement counts
//! `c_¬k(v)`, `N_¬k`, and prior mass `ã(v) = α·pooled(v)` with `A = Σ ã(v)`:
//!
//! ```text
//! δ_k(v) = ln((c_k + ã) / (N_k + A − c_k − ã)) − ln((c_¬k + ã) / (N_¬k + A − c_¬k − ã))
//! Var(v) ≈ 1/(c_k + ã) + 1/(c_¬k + ã)
//! s_k(v) = δ_k(v) / sqrt(Var(v))
//! ```
//!
//! Tokens never seen in any class carry no evidence: their delta, variance
//! and score are all stored as zero.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{fingerprint_tokens, pooled_counts, ClassCounts, Vocab};
use crate::tsv::{self, Metadata};
use crate::{Error, Result, TokenId};

/// Default prior scaling coefficient.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Pseudo-count prior derived from pooled frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    mass: Vec<f64>,
    total: f64,
    alpha: f64,
}

impl Prior {
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

pub fn build_prior(pooled: &[u64], alpha: f64) -> Result<Prior> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Param(format!("alpha must be positive and finite, got {alpha}")));
    }
    let positive = pooled.iter().filter(|&&c| c > 0).count();
    if positive < 2 {
        return Err(Error::DegenerateVocab(format!(
            "prior needs at least two tokens with positive pooled count, found {positive}"
        )));
    }
    let mass: Vec<f64> = pooled.iter().map(|&c| alpha * c as f64).collect();
    // A is taken from the exact integer sum, so it agrees with Σ ã(v) up to rounding.
    let total = alpha * pooled.iter().sum::<u64>() as f64;
    Ok(Prior { mass, total, alpha })
}

/// Per-token quantities shared by the delta and variance computations.
struct Sides<'a> {
    vocab: Option<&'a Vocab>,
    ck: &'a [u64],
    cnot: Vec<u64>,
    nk: u64,
    nnot: u64,
    prior: &'a Prior,
}

impl<'a> Sides<'a> {
    fn new(counts: &'a ClassCounts, k: usize, prior: &'a Prior) -> Result<Self> {
        if k >= counts.num_classes() {
            return Err(Error::Param(format!(
                "class index {k} out of range for {} classes",
                counts.num_classes()
            )));
        }
        if prior.mass.len() != counts.vocab_len() {
            return Err(Error::Shape {
                expected: counts.vocab_len(),
                got: prior.mass.len(),
            });
        }
        Ok(Self {
            vocab: None,
            ck: counts.counts(k),
            cnot: counts.complement(k),
            nk: counts.total(k),
            nnot: counts.complement_total(k),
            prior,
        })
    }

    fn token_name(&self, v: usize) -> String {
        self.vocab
            .and_then(|voc| voc.token(v as TokenId))
            .map(str::to_owned)
            .unwrap_or_else(|| format!("#{v}"))
    }

    fn observed(&self, v: usize) -> bool {
        self.ck[v] + self.cnot[v] > 0
    }

    fn delta(&self, v: usize) -> Result<f64> {
        let a = self.prior.mass[v];
        let big_a = self.prior.total;
        let ck = self.ck[v] as f64;
        let cn = self.cnot[v] as f64;
        // N - c is exact in integers; subtracting first avoids cancellation.
        let den_k = (self.nk - self.ck[v]) as f64 + (big_a - a);
        let den_n = (self.nnot - self.cnot[v]) as f64 + (big_a - a);
        if !(den_k > 0.0 && den_n > 0.0) {
            return Err(Error::NumericalDomain {
                token: self.token_name(v),
                msg: format!("non-positive odds denominator ({den_k}, {den_n}); the token makes up an entire side"),
            });
        }
        Ok(((ck + a) / den_k).ln() - ((cn + a) / den_n).ln())
    }

    fn variance(&self, v: usize) -> Result<f64> {
        let a = self.prior.mass[v];
        let num_k = self.ck[v] as f64 + a;
        let num_n = self.cnot[v] as f64 + a;
        if !(num_k > 0.0 && num_n > 0.0) {
            return Err(Error::Internal(format!(
                "zero variance term for observed token {}",
                self.token_name(v)
            )));
        }
        Ok(1.0 / num_k + 1.0 / num_n)
    }
}

/// `δ_k(v)` for every token.
pub fn log_odds(counts: &ClassCounts, k: usize, prior: &Prior) -> Result<Vec<f64>> {
    let sides = Sides::new(counts, k, prior)?;
    (0..counts.vocab_len())
        .map(|v| if sides.observed(v) { sides.delta(v) } else { Ok(0.0) })
        .collect()
}

/// Approximate `Var[δ_k(v)]` for every token; zero-pooled tokens get the 0 sentinel.
pub fn log_odds_variance(counts: &ClassCounts, k: usize, prior: &Prior) -> Result<Vec<f64>> {
    let sides = Sides::new(counts, k, prior)?;
    (0..counts.vocab_len())
        .map(|v| if sides.observed(v) { sides.variance(v) } else { Ok(0.0) })
        .collect()
}

/// `s(v) = δ(v) / sqrt(Var(v))`, keeping zero deltas at zero.
pub fn normalize(delta: &[f64], variance: &[f64]) -> Result<Vec<f64>> {
    if delta.len() != variance.len() {
        return Err(Error::Shape {
            expected: delta.len(),
            got: variance.len(),
        });
    }
    delta
        .iter()
        .zip(variance)
        .enumerate()
        .map(|(v, (&d, &var))| {
            if d == 0.0 {
                Ok(0.0)
            } else if var > 0.0 {
                Ok(d / var.sqrt())
            } else {
                Err(Error::Numerical(format!("non-positive variance {var} at token {v}")))
            }
        })
        .collect()
}

/// Provenance carried alongside a table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableMeta {
    pub alpha: f64,
    pub vocab_sha: String,
    pub classes: Vec<String>,
    /// Free-form creation parameters (tokenizer, effective CLI config, ...).
    pub params: Metadata,
}

impl TableMeta {
    pub fn k(&self) -> usize {
        self.classes.len()
    }
}

/// Scores of one class against the rest, indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub class_name: String,
    pub tokens: Vec<String>,
    pub delta: Vec<f64>,
    pub variance: Vec<f64>,
    pub zscore: Vec<f64>,
    pub meta: TableMeta,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab_sha(&self) -> &str {
        &self.meta.vocab_sha
    }

    /// Fail unless `vocab` is the vocabulary the table was built from.
    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let sha = vocab.fingerprint();
        if sha != self.meta.vocab_sha {
            return Err(Error::Incompatible(format!(
                "table `{}` was built for vocabulary {} but got {}",
                self.class_name, self.meta.vocab_sha, sha
            )));
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ScoreTable) -> Result<()> {
        if self.meta.vocab_sha != other.meta.vocab_sha {
            return Err(Error::Incompatible(format!(
                "tables `{}` and `{}` use different vocabularies ({} vs {})",
                self.class_name, other.class_name, self.meta.vocab_sha, other.meta.vocab_sha
            )));
        }
        Ok(())
    }

    /// Token ids sorted by descending zscore, ties by ascending id.
    pub fn ranked_ids(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.len() as TokenId).collect();
        ids.sort_by(|&a, &b| {
            self.zscore[b as usize]
                .total_cmp(&self.zscore[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }

    fn metadata(&self) -> Metadata {
        let mut m = self.meta.params.clone();
        m.set("alpha", tsv::fmt_f64(self.meta.alpha))
            .set("class", self.class_name.clone())
            .set("classes", self.meta.classes.join(","))
            .set("vocab_sha", self.meta.vocab_sha.clone())
            .set("k", self.meta.k().to_string());
        m
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.metadata().render();
        out.push_str("token\tid\tdelta\tvariance\tzscore\n");
        for id in self.ranked_ids() {
            let v = id as usize;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                tsv::escape(&self.tokens[v]),
                id,
                tsv::fmt_f64(self.delta[v]),
                tsv::fmt_f64(self.variance[v]),
                tsv::fmt_f64(self.zscore[v]),
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let doc = tsv::split_document(text)?;
        let meta = doc.meta;
        let alpha = tsv::parse_f64(meta.require("alpha")?, 0)?;
        let class_name = meta.require("class")?.to_string();
        let classes: Vec<String> = meta.require("classes")?.split(',').map(str::to_owned).collect();
        let vocab_sha = meta.require("vocab_sha")?.to_string();
        let k = tsv::parse_u64(meta.require("k")?, 0)? as usize;
        if k != classes.len() {
            return Err(Error::parse(0, format!("k={k} but {} classes listed", classes.len())));
        }
        if !classes.contains(&class_name) {
            return Err(Error::parse(0, format!("class `{class_name}` not among classes")));
        }

        let mut rows = doc.rows.iter();
        match rows.next() {
            Some(h) if h.fields == ["token", "id", "delta", "variance", "zscore"] => {}
            Some(h) => return Err(Error::parse(h.line, "unexpected column header")),
            None => return Err(Error::parse(0, "missing column header")),
        }
        let mut slots: Vec<Option<(String, f64, f64, f64)>> = Vec::new();
        for row in rows {
            row.expect_len(5)?;
            let id = tsv::parse_u64(row.fields[1], row.line)? as usize;
            if id >= slots.len() {
                slots.resize(id + 1, None);
            }
            if slots[id].is_some() {
                return Err(Error::parse(row.line, format!("duplicate id {id}")));
            }
            slots[id] = Some((
                tsv::unescape(row.fields[0], row.line)?,
                tsv::parse_f64(row.fields[2], row.line)?,
                tsv::parse_f64(row.fields[3], row.line)?,
                tsv::parse_f64(row.fields[4], row.line)?,
            ));
        }
        let n = slots.len();
        let mut table = ScoreTable {
            class_name,
            tokens: Vec::with_capacity(n),
            delta: Vec::with_capacity(n),
            variance: Vec::with_capacity(n),
            zscore: Vec::with_capacity(n),
            meta: TableMeta {
                alpha,
                vocab_sha,
                classes,
                params: Metadata::new(),
            },
        };
        for (id, slot) in slots.into_iter().enumerate() {
            let (tok, d, var, z) =
                slot.ok_or_else(|| Error::parse(0, format!("id {id} missing; ids must be dense")))?;
            table.tokens.push(tok);
            table.delta.push(d);
            table.variance.push(var);
            table.zscore.push(z);
        }
        let sha = fingerprint_tokens(table.tokens.iter().map(String::as_str));
        if sha != table.meta.vocab_sha {
            return Err(Error::parse(
                0,
                format!("vocab_sha {} does not match the listed tokens ({sha})", table.meta.vocab_sha),
            ));
        }
        let reserved = ["alpha", "class", "classes", "vocab_sha", "k"];
        for (key, value) in meta.iter() {
            if !reserved.contains(&key) {
                table.meta.params.set(key, value);
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}

/// Build one one-vs-rest table per class.
pub fn build_score_tables(
    vocab: &Vocab,
    counts: &ClassCounts,
    alpha: f64,
    params: &Metadata,
) -> Result<Vec<ScoreTable>> {
    if vocab.len() != counts.vocab_len() {
        return Err(Error::Shape {
            expected: vocab.len(),
            got: counts.vocab_len(),
        });
    }
    let prior = build_prior(&pooled_counts(counts), alpha)?;
    let meta = TableMeta {
        alpha,
        vocab_sha: vocab.fingerprint(),
        classes: counts.class_names().to_vec(),
        params: params.clone(),
    };
    (0..counts.num_classes())
        .map(|k| {
            let mut sides = Sides::new(counts, k, &prior)?;
            sides.vocab = Some(vocab);
            let mut delta = Vec::with_capacity(vocab.len());
            let mut variance = Vec::with_capacity(vocab.len());
            for v in 0..vocab.len() {
                if sides.observed(v) {
                    delta.push(sides.delta(v)?);
                    variance.push(sides.variance(v)?);
                } else {
                    delta.push(0.0);
                    variance.push(0.0);
                }
            }
            let zscore = normalize(&delta, &variance)?;
            Ok(ScoreTable {
                class_name: counts.class_names()[k].clone(),
                tokens: vocab.tokens().to_vec(),
                delta,
                variance,
                zscore,
                meta: meta.clone(),
            })
        })
        .collect()
}

/// Score tables keyed by class name.
pub fn tables_by_class(tables: Vec<ScoreTable>) -> BTreeMap<String, ScoreTable> {
    tables.into_iter().map(|t| (t.class_name.clone(), t)).collect()
}
