//! Score-table steering bias, biased softmax and candidate sampling.
//!
//! The bias for a target class is `b(v) = λ·clip(s(v), −τ, τ)`, materialized
//! once against the decode-time vocabulary and added unchanged to the logits of
//! every masked position at every step.

use std::collections::HashMap;

use rand::Rng;

use crate::corpus::Vocab;
use crate::scores::ScoreTable;
use crate::{Error, Result, TokenId};

pub const DEFAULT_TAU: f64 = 8.0;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Fixed steering vector over a decode vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVector {
    values: Vec<f64>,
    lambda: f64,
    tau: f64,
    /// `class@vocab_sha` of the table the bias came from.
    source: String,
}

impl BiasVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of decode-vocab tokens that received a non-zero bias.
    pub fn support(&self) -> usize {
        self.values.iter().filter(|&&b| b != 0.0).count()
    }
}

fn check_params(lambda: f64, tau: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Param(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Param(format!("tau must be finite and > 0, got {tau}")));
    }
    Ok(())
}

/// Align `table` to `decode_vocab` by token string, then clip and scale.
///
/// Special ids and tokens the table does not know get zero bias.
pub fn build_bias(table: &ScoreTable, lambda: f64, tau: f64, decode_vocab: &Vocab) -> Result<BiasVector> {
    check_params(lambda, tau)?;
    let lookup: HashMap<&str, f64> = table
        .tokens
        .iter()
        .map(String::as_str)
        .zip(table.zscore.iter().copied())
        .collect();
    let values = decode_vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(id, tok)| {
            if decode_vocab.is_special(id as TokenId) {
                return 0.0;
            }
            match lookup.get(tok.as_str()) {
                Some(&s) => lambda * s.clamp(-tau, tau),
                None => 0.0,
            }
        })
        .collect();
    Ok(BiasVector {
        values,
        lambda,
        tau,
        source: format!("{}@{}", table.class_name, table.meta.vocab_sha),
    })
}

/// Bias from raw per-id scores, for callers that already share the decode vocabulary.
pub fn bias_from_scores(scores: &[f64], lambda: f64, tau: f64, decode_vocab: &Vocab) -> Result<BiasVector> {
    check_params(lambda, tau)?;
    if scores.len() != decode_vocab.len() {
        return Err(Error::Shape {
            expected: decode_vocab.len(),
            got: scores.len(),
        });
    }
    let values = scores
        .iter()
        .enumerate()
        .map(|(id, &s)| {
            if decode_vocab.is_special(id as TokenId) {
                0.0
            } else {
                lambda * s.clamp(-tau, tau)
            }
        })
        .collect();
    Ok(BiasVector {
        values,
        lambda,
        tau,
        source: "raw".into(),
    })
}

/// `logits + bias`, elementwise. The input is left untouched.
pub fn apply_bias(logits: &[f64], bias: &BiasVector) -> Result<Vec<f64>> {
    if logits.len() != bias.values.len() {
        return Err(Error::Shape {
            expected: bias.values.len(),
            got: logits.len(),
        });
    }
    Ok(logits.iter().zip(&bias.values).map(|(z, b)| z + b).collect())
}

/// Tempered sampling distribution plus untempered confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeredDistribution {
    pub probs: Vec<f64>,
    pub confidence: f64,
    pub temperature: f64,
}

impl SteeredDistribution {
    /// Highest-probability id, lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.probs)
    }
}

fn argmax(xs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn steered_distribution(biased_logits: &[f64], temperature: f64) -> Result<SteeredDistribution> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Param(format!("temperature must be > 0, got {temperature}")));
    }
    if biased_logits.is_empty() {
        return Err(Error::Numerical("empty logit vector".into()));
    }
    if let Some(i) = biased_logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logit at id {i}")));
    }
    let untempered = softmax(biased_logits, 1.0);
    let confidence = untempered.iter().copied().fold(0.0, f64::max);
    let probs = if temperature == 1.0 {
        untempered
    } else {
        softmax(biased_logits, temperature)
    };
    Ok(SteeredDistribution {
        probs,
        confidence,
        temperature,
    })
}

/// Pick a candidate: argmax when `greedy`, otherwise one inverse-CDF draw.
pub fn sample_token<R: Rng + ?Sized>(dist: &SteeredDistribution, rng: &mut R, greedy: bool) -> TokenId {
    if greedy {
        return dist.argmax();
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i as TokenId;
            }
        }
    }
    // u landed in the rounding slack above the accumulated mass
    last_positive as TokenId
}
