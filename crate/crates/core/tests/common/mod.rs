//! Test-only oracles and fixtures.
//!
//! The oracles here deliberately avoid the library's code paths: the score
//! oracle evaluates the log-odds formula straight from raw count arrays, and
//! the decoder oracle enumerates every commit subset at every step instead of
//! sorting candidates.

#![allow(dead_code)]

use std::fs;
use std::path::Path;

use tokensteer::corpus::{SpecialKind, Vocab};
use tokensteer::decoder::LogitProvider;
use tokensteer::{Result, TokenId};

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

/// Direct evaluation of (delta, variance, zscore) for class `k`, token `v`.
/// Returns `None` for tokens never observed in any class.
pub fn formula_oracle(counts: &[Vec<u64>], k: usize, v: usize, alpha: f64) -> Option<(f64, f64, f64)> {
    let num_classes = counts.len();
    let width = counts[0].len();
    let mut pooled_v = 0.0;
    for row in counts {
        pooled_v += row[v] as f64;
    }
    if pooled_v == 0.0 {
        return None;
    }
    let mut big_a = 0.0;
    for row in counts {
        for u in 0..width {
            big_a += alpha * row[u] as f64;
        }
    }
    let a = alpha * pooled_v;
    let ck = counts[k][v] as f64;
    let nk: f64 = counts[k].iter().map(|&c| c as f64).sum();
    let mut cn = 0.0;
    let mut nn = 0.0;
    for j in 0..num_classes {
        if j != k {
            cn += counts[j][v] as f64;
            nn += counts[j].iter().map(|&c| c as f64).sum::<f64>();
        }
    }
    let delta = ((ck + a) / (nk + big_a - ck - a)).ln() - ((cn + a) / (nn + big_a - cn - a)).ln();
    let var = 1.0 / (ck + a) + 1.0 / (cn + a);
    Some((delta, var, delta / var.sqrt()))
}

/// Deterministic provider with quantized hash logits (ties are common).
pub struct HashProvider {
    pub vocab: Vocab,
    pub salt: u64,
}

impl HashProvider {
    pub fn new(vocab_len: usize, salt: u64, with_eos: bool) -> Self {
        let mut vocab = Vocab::from_tokens((0..vocab_len).map(|i| format!("v{i}"))).unwrap();
        if with_eos {
            vocab.set_special(SpecialKind::Eos, (vocab_len - 1) as TokenId).unwrap();
        }
        Self { vocab, salt }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl LogitProvider for HashProvider {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logits(&self, seq: &[Option<TokenId>], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut h = self.salt;
        for s in seq {
            h = mix(h ^ s.map_or(u64::MAX, u64::from));
        }
        Ok(positions
            .iter()
            .map(|&p| {
                (0..self.vocab.len())
                    .map(|v| {
                        let r = mix(h ^ mix(p as u64) ^ mix(1000 + v as u64));
                        // multiples of 0.5 in [-2, 2]
                        (r % 9) as f64 * 0.5 - 2.0
                    })
                    .collect()
            })
            .collect())
    }
}

/// Greedy decode by brute force: at each step try every subset of masked
/// slots of the scheduled size and keep the one whose confidences, sorted
/// descending, are lexicographically largest (earliest positions on ties).
pub fn greedy_oracle(
    prompt: &[TokenId],
    provider: &dyn LogitProvider,
    bias: Option<&[f64]>,
    block_len: usize,
    steps: usize,
    max_new: usize,
) -> Vec<TokenId> {
    let eos = provider.vocab().special(SpecialKind::Eos);
    let mut out: Vec<TokenId> = Vec::new();
    while out.len() < max_new {
        let len = block_len.min(max_new - out.len());
        let mut block: Vec<Option<TokenId>> = vec![None; len];
        let mut remaining = len;
        for t in 0..steps {
            let left = steps - t;
            let quota = (remaining + left - 1) / left;
            remaining -= quota;
            if quota == 0 {
                continue;
            }
            let offset = prompt.len() + out.len();
            let seq: Vec<Option<TokenId>> = prompt
                .iter()
                .chain(out.iter())
                .map(|&x| Some(x))
                .chain(block.iter().copied())
                .collect();
            let masked: Vec<usize> = (0..len).filter(|&i| block[i].is_none()).map(|i| offset + i).collect();
            let logits = provider.logits(&seq, &masked).unwrap();
            // per position: greedy candidate and untempered max-prob
            let cand: Vec<(TokenId, f64)> = logits
                .iter()
                .map(|z| {
                    let z: Vec<f64> = match bias {
                        Some(b) => z.iter().zip(b).map(|(x, y)| x + y).collect(),
                        None => z.clone(),
                    };
                    let mut best = 0;
                    for v in 1..z.len() {
                        if z[v] > z[best] {
                            best = v;
                        }
                    }
                    let m = z[best];
                    let mut sum = 0.0;
                    for &x in &z {
                        sum += (x - m).exp();
                    }
                    (best as TokenId, 1.0 / sum)
                })
                .collect();
            let n = masked.len();
            let mut best_subset: Option<(Vec<f64>, Vec<usize>)> = None;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != quota {
                    continue;
                }
                let idx: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
                let mut confs: Vec<f64> = idx.iter().map(|&i| cand[i].1).collect();
                confs.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let better = match &best_subset {
                    None => true,
                    Some((bc, bi)) => {
                        let ord = confs.partial_cmp(bc).unwrap();
                        ord == std::cmp::Ordering::Greater
                            || (ord == std::cmp::Ordering::Equal && earlier_positions(&idx, bi, &cand))
                    }
                };
                if better {
                    best_subset = Some((confs, idx));
                }
            }
            for i in best_subset.unwrap().1 {
                block[masked[i] - offset] = Some(cand[i].0);
            }
        }
        let block: Vec<TokenId> = block.into_iter().map(|s| s.unwrap()).collect();
        match eos.and_then(|e| block.iter().position(|&t| t == e)) {
            Some(cut) => {
                out.extend_from_slice(&block[..cut]);
                return out;
            }
            None => out.extend(block),
        }
    }
    out
}

/// Among equal-confidence subsets, prefer the one that, tie by tie, picks the
/// lower position: compare position lists sorted by (confidence desc, index).
fn earlier_positions(a: &[usize], b: &[usize], cand: &[(TokenId, f64)]) -> bool {
    let key = |s: &[usize]| {
        let mut v: Vec<(f64, usize)> = s.iter().map(|&i| (cand[i].1, i)).collect();
        v.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        v.into_iter().map(|(_, i)| i).collect::<Vec<_>>()
    };
    key(a) < key(b)
}

pub fn write_corpus(root: &Path, classes: &[(&str, &[&str])]) {
    for (name, lines) in classes {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("docs.txt"), lines.join("\n")).unwrap();
    }
}

pub const SHARED: [&str; 8] = ["the", "a", "of", "and", "to", "is", "it", "was"];
pub const ALPHA_MARKERS: [&str; 5] = ["sun", "bright", "gold", "warm", "light"];
pub const BETA_MARKERS: [&str; 5] = ["rain", "cold", "grey", "dark", "wind"];

/// Two classes sharing function words, each with its own disjoint markers.
pub fn synthetic_corpus(root: &Path, docs_per_class: usize) {
    let mut state: u64 = 12345;
    let mut next = move |m: usize| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as usize) % m
    };
    for (name, markers) in [("alpha", ALPHA_MARKERS), ("beta", BETA_MARKERS)] {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        let mut text = String::new();
        for _ in 0..docs_per_class {
            let len = 8 + next(5);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    if next(10) < 4 {
                        markers[next(markers.len())]
                    } else {
                        SHARED[next(SHARED.len())]
                    }
                })
                .collect();
            text.push_str(&words.join(" "));
            text.push('\n');
        }
        fs::write(dir.join("docs.txt"), text).unwrap();
    }
}
