//! Behavioural checks every [`LogitProvider`] must pass.
//!
//! The same suite runs against the in-process mock model and against external
//! providers reached through the JSON-lines adapter.

use crate::decoder::LogitProvider;
use crate::{Error, Result, TokenId};

/// Deterministic probe sequences over a vocabulary of `vocab_len` ids: a mix
/// of fully masked, partially masked and single-slot sequences.
pub fn probe_sequences(vocab_len: usize) -> Vec<Vec<Option<TokenId>>> {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize
    };
    let mut probes = vec![vec![None], vec![Some(0)], vec![None; 4]];
    for len in 2..=7 {
        let seq = (0..len)
            .map(|_| {
                let r = next();
                if r % 3 == 0 {
                    None
                } else {
                    Some((r % vocab_len) as TokenId)
                }
            })
            .collect();
        probes.push(seq);
    }
    probes
}

fn violation(msg: String) -> Error {
    Error::ProviderContract(msg)
}

/// Check shape, finiteness and determinism on the probe set.
pub fn check_provider<P: LogitProvider + ?Sized>(provider: &P) -> Result<()> {
    let width = provider.vocab().len();
    if width == 0 {
        return Err(violation("provider declares an empty vocabulary".into()));
    }
    for (kind, id) in provider.vocab().specials() {
        if id as usize >= width {
            return Err(violation(format!("special {} id {id} out of range", kind.as_str())));
        }
    }
    for seq in probe_sequences(width) {
        let masked: Vec<usize> = (0..seq.len()).filter(|&i| seq[i].is_none()).collect();
        if masked.is_empty() {
            continue;
        }
        let first = provider.logits(&seq, &masked)?;
        if first.len() != masked.len() {
            return Err(violation(format!(
                "{} positions requested, {} vectors returned",
                masked.len(),
                first.len()
            )));
        }
        for (row, &p) in first.iter().zip(&masked) {
            if row.len() != width {
                return Err(violation(format!("position {p}: {} logits for vocabulary of {width}", row.len())));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(violation(format!("position {p}: non-finite logit")));
            }
        }
        let second = provider.logits(&seq, &masked)?;
        if first != second {
            return Err(violation(format!("non-deterministic logits for probe {seq:?}")));
        }
    }
    Ok(())
}

/// Check that two providers agree bit-for-bit on the probe set.
pub fn check_equivalent<A, B>(a: &A, b: &B) -> Result<()>
where
    A: LogitProvider + ?Sized,
    B: LogitProvider + ?Sized,
{
    if a.vocab() != b.vocab() {
        return Err(violation("providers declare different vocabularies".into()));
    }
    for seq in probe_sequences(a.vocab().len()) {
        let masked: Vec<usize> = (0..seq.len()).filter(|&i| seq[i].is_none()).collect();
        if a.logits(&seq, &masked)? != b.logits(&seq, &masked)? {
            return Err(violation(format!("providers disagree on probe {seq:?}")));
        }
    }
    Ok(())
}
