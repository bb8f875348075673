//! Score-table diagnostics and the steering-efficacy experiment.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::corpus::{ClassCounts, Vocab};
use crate::decoder::{decode, DecodeConfig, LogitProvider};
use crate::mockmodel::MockModel;
use crate::scores::{build_score_tables, ScoreTable};
use crate::steering::build_bias;
use crate::tsv::{self, Metadata};
use crate::{Error, Result, TokenId};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [2.0, 3.0, 5.0];
pub const DEFAULT_JACCARD_KS: [usize; 3] = [100, 500, 1000];
pub const DEFAULT_MARKER_THETA: f64 = 2.0;
pub const DEFAULT_SAMPLES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct CueRow {
    pub class_name: String,
    /// One count per threshold, same order as the report's thresholds.
    pub counts: Vec<usize>,
    pub max_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueStrengthReport {
    pub thresholds: Vec<f64>,
    pub rows: Vec<CueRow>,
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Param("threshold list is empty".into()));
    }
    if thresholds.iter().any(|t| !t.is_finite()) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Param(format!("thresholds must be finite and strictly ascending: {thresholds:?}")));
    }
    Ok(())
}

/// Count tokens whose zscore strictly exceeds each threshold.
pub fn cue_strength(tables: &[ScoreTable], thresholds: &[f64]) -> Result<CueStrengthReport> {
    check_thresholds(thresholds)?;
    let rows = tables
        .iter()
        .map(|t| CueRow {
            class_name: t.class_name.clone(),
            counts: thresholds
                .iter()
                .map(|&th| t.zscore.iter().filter(|&&z| z > th).count())
                .collect(),
            max_z: t.zscore.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0),
        })
        .collect();
    Ok(CueStrengthReport {
        thresholds: thresholds.to_vec(),
        rows,
    })
}

impl CueStrengthReport {
    pub fn to_tsv(&self, meta: &Metadata) -> String {
        let mut m = meta.clone();
        m.set(
            "thresholds",
            self.thresholds.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
        );
        let mut out = m.render();
        out.push_str("class");
        for t in &self.thresholds {
            out.push_str(&format!("\tn_z_gt_{t}"));
        }
        out.push_str("\tmax_z\n");
        for row in &self.rows {
            out.push_str(&tsv::escape(&row.class_name));
            for c in &row.counts {
                out.push_str(&format!("\t{c}"));
            }
            out.push_str(&format!("\t{}\n", tsv::fmt_f64(row.max_z)));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let doc = tsv::split_document(text)?;
        let thresholds = doc
            .meta
            .require("thresholds")?
            .split(',')
            .map(|t| tsv::parse_f64(t, 0))
            .collect::<Result<Vec<_>>>()?;
        let width = thresholds.len() + 2;
        let mut rows = doc.rows.iter();
        match rows.next() {
            Some(h) if h.fields.len() == width && h.fields[0] == "class" => {}
            Some(h) => return Err(Error::parse(h.line, "unexpected cue-strength header")),
            None => return Err(Error::parse(0, "missing cue-strength header")),
        }
        let rows = rows
            .map(|r| {
                r.expect_len(width)?;
                Ok(CueRow {
                    class_name: tsv::unescape(r.fields[0], r.line)?,
                    counts: r.fields[1..width - 1]
                        .iter()
                        .map(|f| tsv::parse_u64(f, r.line).map(|c| c as usize))
                        .collect::<Result<_>>()?,
                    max_z: tsv::parse_f64(r.fields[width - 1], r.line)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { thresholds, rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedToken {
    pub token: String,
    pub id: TokenId,
    pub zscore: f64,
}

/// The `n` highest-scoring tokens, ties broken by lowest id.
pub fn top_tokens(table: &ScoreTable, n: usize) -> Vec<RankedToken> {
    table
        .ranked_ids()
        .into_iter()
        .take(n)
        .map(|id| RankedToken {
            token: table.tokens[id as usize].clone(),
            id,
            zscore: table.zscore[id as usize],
        })
        .collect()
}

pub fn top_tokens_tsv(tables: &[ScoreTable], n: usize, meta: &Metadata) -> String {
    let mut m = meta.clone();
    m.set("top_n", n.to_string());
    let mut out = m.render();
    out.push_str("class\trank\ttoken\tid\tzscore\n");
    for t in tables {
        for (rank, r) in top_tokens(t, n).iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                tsv::escape(&t.class_name),
                rank + 1,
                tsv::escape(&r.token),
                r.id,
                tsv::fmt_f64(r.zscore)
            ));
        }
    }
    out
}

/// Jaccard similarity of the two tables' top-`k` token sets.
pub fn jaccard_overlap(a: &ScoreTable, b: &ScoreTable, k: usize) -> Result<f64> {
    a.check_compatible(b)?;
    if k == 0 {
        return Err(Error::Param("k must be positive".into()));
    }
    let sa: HashSet<TokenId> = top_tokens(a, k).into_iter().map(|r| r.id).collect();
    let sb: HashSet<TokenId> = top_tokens(b, k).into_iter().map(|r| r.id).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(sa.intersection(&sb).count() as f64 / union as f64)
}

/// All unordered class pairs at every `k`.
pub fn jaccard_tsv(tables: &[ScoreTable], ks: &[usize], meta: &Metadata) -> Result<String> {
    let mut m = meta.clone();
    m.set("ks", ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
    let mut out = m.render();
    out.push_str("class_a\tclass_b");
    for k in ks {
        out.push_str(&format!("\tk_{k}"));
    }
    out.push('\n');
    for i in 0..tables.len() {
        for j in i + 1..tables.len() {
            out.push_str(&format!(
                "{}\t{}",
                tsv::escape(&tables[i].class_name),
                tsv::escape(&tables[j].class_name)
            ));
            for &k in ks {
                out.push_str(&format!("\t{:.6}", jaccard_overlap(&tables[i], &tables[j], k)?));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Seed of sample `i` under `master` (SplitMix64 of the pair).
pub fn sample_seed(master: u64, i: usize) -> u64 {
    let mut z = master ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficacyConfig {
    pub lambdas: Vec<f64>,
    pub tau: f64,
    /// Marker threshold on the target table's zscore.
    pub theta: f64,
    pub samples: usize,
    /// `seed` is the master seed; `lambda`/`tau` are ignored.
    pub decode: DecodeConfig,
    pub prompt: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficacyRow {
    pub lambda: f64,
    pub tau: f64,
    /// Mean over samples of the fraction of generated tokens that are target markers.
    pub marker_rate: f64,
    /// Fraction of samples the bag-of-scores classifier assigns to the target class.
    pub target_rate: f64,
    pub mean_len: f64,
    pub samples: usize,
    /// Generated ids per sample; not persisted in reports.
    pub outputs: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficacyReport {
    pub target: String,
    pub theta: f64,
    pub markers: usize,
    pub rows: Vec<EfficacyRow>,
}

/// Scores every decode-vocab token under each class, aligned by string.
struct Classifier {
    per_class: Vec<Vec<f64>>,
}

impl Classifier {
    fn new(tables: &[ScoreTable], vocab: &Vocab) -> Self {
        let per_class = tables
            .iter()
            .map(|t| {
                let lookup: HashMap<&str, f64> = t
                    .tokens
                    .iter()
                    .map(String::as_str)
                    .zip(t.zscore.iter().copied())
                    .collect();
                vocab
                    .tokens()
                    .iter()
                    .map(|tok| lookup.get(tok.as_str()).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect();
        Self { per_class }
    }

    /// Class with the highest summed zscore; `None` with no evidence or a tie at the top.
    fn predict(&self, tokens: &[TokenId]) -> Option<usize> {
        let sums: Vec<f64> = self
            .per_class
            .iter()
            .map(|s| tokens.iter().map(|&t| s[t as usize]).sum())
            .collect();
        let best = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut winners = sums.iter().enumerate().filter(|(_, &s)| s == best);
        let first = winners.next().map(|(i, _)| i);
        if winners.next().is_some() {
            None
        } else {
            first
        }
    }
}

/// Decode `samples` sequences per λ and measure how often target markers appear.
pub fn steering_efficacy(
    tables: &[ScoreTable],
    target: usize,
    model: &MockModel,
    cfg: &EfficacyConfig,
) -> Result<EfficacyReport> {
    if !cfg.lambdas.contains(&0.0) {
        return Err(Error::Param("lambda grid must include 0 as the unsteered control".into()));
    }
    if cfg.samples == 0 {
        return Err(Error::Param("samples must be positive".into()));
    }
    let target_table = tables
        .get(target)
        .ok_or_else(|| Error::Param(format!("target class index {target} out of range")))?;
    for t in tables {
        target_table.check_compatible(t)?;
    }
    let vocab = model.vocab();
    let marker_lookup: HashSet<&str> = target_table
        .tokens
        .iter()
        .zip(&target_table.zscore)
        .filter(|(_, &z)| z > cfg.theta)
        .map(|(t, _)| t.as_str())
        .collect();
    let is_marker: Vec<bool> = vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(id, t)| !vocab.is_special(id as TokenId) && marker_lookup.contains(t.as_str()))
        .collect();
    let classifier = Classifier::new(tables, vocab);

    let rows = cfg
        .lambdas
        .iter()
        .map(|&lambda| {
            let bias = build_bias(target_table, lambda, cfg.tau, vocab)?;
            let outputs = (0..cfg.samples)
                .into_par_iter()
                .map(|i| {
                    let dc = DecodeConfig {
                        seed: sample_seed(cfg.decode.seed, i),
                        lambda,
                        tau: cfg.tau,
                        ..cfg.decode.clone()
                    };
                    decode(&cfg.prompt, model, Some(&bias), &dc).map(|o| o.tokens)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(lambda, cfg.tau, outputs, &is_marker, &classifier, target))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EfficacyReport {
        target: target_table.class_name.clone(),
        theta: cfg.theta,
        markers: is_marker.iter().filter(|&&m| m).count(),
        rows,
    })
}

fn summarize(
    lambda: f64,
    tau: f64,
    outputs: Vec<Vec<TokenId>>,
    is_marker: &[bool],
    classifier: &Classifier,
    target: usize,
) -> EfficacyRow {
    let n = outputs.len() as f64;
    let marker_rate = outputs
        .iter()
        .map(|o| {
            if o.is_empty() {
                0.0
            } else {
                o.iter().filter(|&&t| is_marker[t as usize]).count() as f64 / o.len() as f64
            }
        })
        .sum::<f64>()
        / n;
    let target_rate = outputs
        .iter()
        .filter(|o| classifier.predict(o) == Some(target))
        .count() as f64
        / n;
    let mean_len = outputs.iter().map(|o| o.len() as f64).sum::<f64>() / n;
    EfficacyRow {
        lambda,
        tau,
        marker_rate,
        target_rate,
        mean_len,
        samples: outputs.len(),
        outputs,
    }
}

impl EfficacyReport {
    pub fn to_tsv(&self, meta: &Metadata) -> String {
        let mut m = meta.clone();
        m.set("target", self.target.clone())
            .set("theta", self.theta.to_string())
            .set("markers", self.markers.to_string())
            .set(
                "lambdas",
                self.rows.iter().map(|r| r.lambda.to_string()).collect::<Vec<_>>().join(","),
            );
        let mut out = m.render();
        out.push_str("lambda\ttau\tmarker_rate\ttarget_rate\tmean_len\tsamples\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.lambda,
                r.tau,
                tsv::fmt_f64(r.marker_rate),
                tsv::fmt_f64(r.target_rate),
                tsv::fmt_f64(r.mean_len),
                r.samples
            ));
        }
        out
    }

    /// Parse a report written by [`EfficacyReport::to_tsv`]; `outputs` come back empty.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let doc = tsv::split_document(text)?;
        let target = doc.meta.require("target")?.to_string();
        let theta = tsv::parse_f64(doc.meta.require("theta")?, 0)?;
        let markers = tsv::parse_u64(doc.meta.require("markers")?, 0)? as usize;
        let mut rows = doc.rows.iter();
        match rows.next() {
            Some(h) if h.fields == ["lambda", "tau", "marker_rate", "target_rate", "mean_len", "samples"] => {}
            Some(h) => return Err(Error::parse(h.line, "unexpected efficacy header")),
            None => return Err(Error::parse(0, "missing efficacy header")),
        }
        let rows = rows
            .map(|r| {
                r.expect_len(6)?;
                Ok(EfficacyRow {
                    lambda: tsv::parse_f64(r.fields[0], r.line)?,
                    tau: tsv::parse_f64(r.fields[1], r.line)?,
                    marker_rate: tsv::parse_f64(r.fields[2], r.line)?,
                    target_rate: tsv::parse_f64(r.fields[3], r.line)?,
                    mean_len: tsv::parse_f64(r.fields[4], r.line)?,
                    samples: tsv::parse_u64(r.fields[5], r.line)? as usize,
                    outputs: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            target,
            theta,
            markers,
            rows,
        })
    }
}

/// Grid for a hyperparameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub row: EfficacyRow,
    pub target: String,
    pub markers: usize,
}

/// Run the efficacy experiment for every (α, τ, λ) cell.
///
/// Every cell reuses the same per-sample seeds, so rows differ only through
/// the swept parameter. When the λ grid lacks 0, the control is run anyway
/// but left out of the result.
pub fn sweep(
    vocab: &Vocab,
    counts: &ClassCounts,
    target: usize,
    model: &MockModel,
    grid: &SweepGrid,
    base: &EfficacyConfig,
    params: &Metadata,
) -> Result<Vec<SweepRow>> {
    if grid.alphas.is_empty() || grid.taus.is_empty() || grid.lambdas.is_empty() {
        return Err(Error::Param("every sweep axis needs at least one value".into()));
    }
    let mut lambdas = grid.lambdas.clone();
    let added_control = !lambdas.contains(&0.0);
    if added_control {
        lambdas.insert(0, 0.0);
    }
    let mut out = Vec::new();
    for &alpha in &grid.alphas {
        let tables = build_score_tables(vocab, counts, alpha, params)?;
        for &tau in &grid.taus {
            let cfg = EfficacyConfig {
                lambdas: lambdas.clone(),
                tau,
                ..base.clone()
            };
            let report = steering_efficacy(&tables, target, model, &cfg)?;
            for row in report.rows {
                if added_control && row.lambda == 0.0 {
                    continue;
                }
                out.push(SweepRow {
                    alpha,
                    row,
                    target: report.target.clone(),
                    markers: report.markers,
                });
            }
        }
    }
    Ok(out)
}

pub fn sweep_tsv(rows: &[SweepRow], base: &EfficacyConfig, meta: &Metadata) -> String {
    let mut out = meta.render();
    out.push_str(
        "alpha\ttau\tlambda\ttarget\ttheta\tmarkers\tsamples\tseed\tblock_len\tnum_steps\ttemperature\tgreedy\tmarker_rate\ttarget_rate\tmean_len\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.alpha,
            r.row.tau,
            r.row.lambda,
            tsv::escape(&r.target),
            base.theta,
            r.markers,
            r.row.samples,
            base.decode.seed,
            base.decode.block_len,
            base.decode.num_steps,
            base.decode.temperature,
            base.decode.greedy,
            tsv::fmt_f64(r.row.marker_rate),
            tsv::fmt_f64(r.row.target_rate),
            tsv::fmt_f64(r.row.mean_len),
        ));
    }
    out
}

/// Decode-vocab tokens the target table marks as cues.
pub fn marker_ids(table: &ScoreTable, vocab: &Vocab, theta: f64) -> Vec<TokenId> {
    let lookup: HashMap<&str, f64> = table
        .tokens
        .iter()
        .map(String::as_str)
        .zip(table.zscore.iter().copied())
        .collect();
    (0..vocab.len() as TokenId)
        .filter(|&id| {
            !vocab.is_special(id)
                && vocab
                    .token(id)
                    .and_then(|t| lookup.get(t))
                    .is_some_and(|&z| z > theta)
        })
        .collect()
}
