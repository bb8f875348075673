//! Block-wise masked-diffusion decoding with confidence-ordered commits.
//!
//! Generation appends a block of masked slots after the committed prefix and
//! resolves it over a fixed number of denoising steps. At each step every
//! masked slot gets logits from the provider, the steering bias is added, a
//! candidate is drawn from the tempered softmax, and the slots whose
//! untempered max-probability is highest are committed. Committed slots are
//! never reopened.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SpecialKind, Vocab};
use crate::steering::{self, BiasVector, DEFAULT_TAU, DEFAULT_TEMPERATURE};
use crate::{Error, Result, TokenId};

pub const DEFAULT_STEPS: usize = 128;
pub const DEFAULT_BLOCK_LEN: usize = 128;

/// Anything that can score masked positions.
///
/// Implementations must return, for each requested position, one finite logit
/// vector of length `vocab().len()`, and must be deterministic for identical
/// inputs.
pub trait LogitProvider {
    fn vocab(&self) -> &Vocab;

    /// `seq` is the prompt, committed tokens and the active block, with
    /// `None` for masked slots. `positions` index into `seq`.
    fn logits(&self, seq: &[Option<TokenId>], positions: &[usize]) -> Result<Vec<Vec<f64>>>;
}

impl<P: LogitProvider + ?Sized> LogitProvider for &P {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn logits(&self, seq: &[Option<TokenId>], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        (**self).logits(seq, positions)
    }
}

/// Per-backbone steering-strength presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Llada,
    Dream,
}

impl Profile {
    pub fn default_lambda(self) -> f64 {
        match self {
            Profile::Llada => 0.7,
            Profile::Dream => 0.5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Llada => "llada",
            Profile::Dream => "dream",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llada" => Ok(Profile::Llada),
            "dream" => Ok(Profile::Dream),
            other => Err(Error::Param(format!("unknown profile `{other}` (expected llada or dream)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub block_len: usize,
    pub num_steps: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub greedy: bool,
    pub seed: u64,
    pub lambda: f64,
    pub tau: f64,
    pub profile: Profile,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let profile = Profile::default();
        Self {
            block_len: DEFAULT_BLOCK_LEN,
            num_steps: DEFAULT_STEPS,
            max_new_tokens: DEFAULT_BLOCK_LEN,
            temperature: DEFAULT_TEMPERATURE,
            greedy: false,
            seed: 0,
            lambda: profile.default_lambda(),
            tau: DEFAULT_TAU,
            profile,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_len == 0 || self.num_steps == 0 || self.max_new_tokens == 0 {
            return Err(Error::Param(
                "block_len, num_steps and max_new_tokens must all be positive".into(),
            ));
        }
        if self.block_len > self.max_new_tokens {
            return Err(Error::Param(format!(
                "block_len {} exceeds max_new_tokens {}",
                self.block_len, self.max_new_tokens
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Param(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Per-step commit counts: `ceil(remaining / steps_remaining)`.
pub fn commit_schedule(block_len: usize, num_steps: usize) -> Vec<usize> {
    let mut remaining = block_len;
    (0..num_steps)
        .map(|t| {
            let n = remaining.div_ceil(num_steps - t);
            remaining -= n;
            n
        })
        .collect()
}

/// Random stream for one (block, step, position) cell, independent of the
/// order in which cells are visited.
pub fn cell_rng(seed: u64, block: usize, step: usize, position: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key
        .chunks_exact_mut(8)
        .zip([seed, block as u64, step as u64, position as u64])
    {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// One committed slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    /// Absolute position in the full sequence.
    pub position: usize,
    pub token: TokenId,
    pub confidence: f64,
}

/// Trajectory record for a single denoising step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub block: usize,
    pub step: usize,
    pub commits: Vec<Commit>,
}

impl StepRecord {
    pub fn to_json_line(&self) -> String {
        // Serializing plain numbers and vectors cannot fail.
        serde_json::to_string(self).expect("step record serializes")
    }
}

/// The partially denoised sequence while one block is active.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState {
    context: Vec<TokenId>,
    prompt_len: usize,
    block: Vec<Option<TokenId>>,
    block_index: usize,
    step: usize,
    schedule: Vec<usize>,
    committed: usize,
}

impl GenerationState {
    /// `context` is the prompt followed by previously completed blocks.
    pub fn new(context: Vec<TokenId>, prompt_len: usize, block_len: usize, block_index: usize, num_steps: usize) -> Self {
        Self {
            context,
            prompt_len,
            block: vec![None; block_len],
            block_index,
            step: 0,
            schedule: commit_schedule(block_len, num_steps),
            committed: 0,
        }
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.context[..self.prompt_len]
    }

    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    pub fn block(&self) -> &[Option<TokenId>] {
        &self.block
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn committed_count(&self) -> usize {
        self.committed
    }

    pub fn is_complete(&self) -> bool {
        self.committed == self.block.len()
    }

    /// Full sequence as seen by the provider.
    pub fn sequence(&self) -> Vec<Option<TokenId>> {
        self.context
            .iter()
            .map(|&t| Some(t))
            .chain(self.block.iter().copied())
            .collect()
    }

    /// Absolute positions of masked slots.
    pub fn masked_positions(&self) -> Vec<usize> {
        let offset = self.context.len();
        self.block
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| offset + i)
            .collect()
    }

    /// Committed block tokens in order; `None` while any slot is masked.
    pub fn block_tokens(&self) -> Option<Vec<TokenId>> {
        self.block.iter().copied().collect()
    }

    /// Run one denoising step.
    pub fn denoise_step<P: LogitProvider + ?Sized>(
        &mut self,
        provider: &P,
        bias: Option<&BiasVector>,
        config: &DecodeConfig,
    ) -> Result<StepRecord> {
        let t = self.step;
        let quota = *self.schedule.get(t).ok_or_else(|| {
            Error::Internal(format!("step {t} beyond schedule of {} steps", self.schedule.len()))
        })?;
        let masked = self.masked_positions();
        if quota > masked.len() {
            return Err(Error::Internal(format!(
                "schedule asks for {quota} commits with {} masked slots",
                masked.len()
            )));
        }
        let mut record = StepRecord {
            block: self.block_index,
            step: t,
            commits: Vec::new(),
        };
        if quota == 0 {
            self.step += 1;
            return Ok(record);
        }

        let vocab_len = provider.vocab().len();
        let logits = provider.logits(&self.sequence(), &masked)?;
        if logits.len() != masked.len() {
            return Err(Error::ProviderContract(format!(
                "asked for {} positions, got {} logit vectors",
                masked.len(),
                logits.len()
            )));
        }

        let mut candidates = Vec::with_capacity(masked.len());
        for (&pos, z) in masked.iter().zip(&logits) {
            if z.len() != vocab_len {
                return Err(Error::ProviderContract(format!(
                    "position {pos}: logit vector of length {} for vocabulary of {vocab_len}",
                    z.len()
                )));
            }
            if z.iter().any(|x| !x.is_finite()) {
                return Err(Error::ProviderContract(format!("position {pos}: non-finite logit")));
            }
            let biased = match bias {
                Some(b) => steering::apply_bias(z, b)?,
                None => z.clone(),
            };
            let dist = steering::steered_distribution(&biased, config.temperature)?;
            let mut rng = cell_rng(config.seed, self.block_index, t, pos);
            let token = steering::sample_token(&dist, &mut rng, config.greedy);
            candidates.push(Commit {
                position: pos,
                token,
                confidence: dist.confidence,
            });
        }

        candidates.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then(a.position.cmp(&b.position))
        });
        candidates.truncate(quota);
        candidates.sort_by_key(|c| c.position);

        let offset = self.context.len();
        for c in &candidates {
            let slot = &mut self.block[c.position - offset];
            debug_assert!(slot.is_none());
            *slot = Some(c.token);
        }
        self.committed += candidates.len();
        self.step += 1;
        record.commits = candidates;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Generated ids, excluding the prompt and anything from the first EOS on.
    pub tokens: Vec<TokenId>,
    pub trajectory: Vec<StepRecord>,
    pub hit_eos: bool,
}

/// Decode up to `config.max_new_tokens` after `prompt`.
///
/// Each block runs all of its steps; a committed EOS then truncates the
/// output at its position and ends generation.
pub fn decode<P: LogitProvider + ?Sized>(
    prompt: &[TokenId],
    provider: &P,
    bias: Option<&BiasVector>,
    config: &DecodeConfig,
) -> Result<DecodeOutput> {
    config.validate()?;
    if prompt.is_empty() {
        return Err(Error::Param("prompt must not be empty".into()));
    }
    let vocab = provider.vocab();
    if let Some(b) = bias {
        if b.len() != vocab.len() {
            return Err(Error::Shape {
                expected: vocab.len(),
                got: b.len(),
            });
        }
    }
    if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= vocab.len()) {
        return Err(Error::Param(format!("prompt id {bad} outside vocabulary of {}", vocab.len())));
    }
    let eos = vocab.special(SpecialKind::Eos);

    let mut context = prompt.to_vec();
    let mut trajectory = Vec::new();
    let mut hit_eos = false;
    let mut block_index = 0;
    while context.len() - prompt.len() < config.max_new_tokens {
        let remaining = config.max_new_tokens - (context.len() - prompt.len());
        let len = config.block_len.min(remaining);
        let mut state = GenerationState::new(context, prompt.len(), len, block_index, config.num_steps);
        while !state.is_complete() {
            if state.step() >= config.num_steps {
                return Err(Error::Internal("block incomplete after all steps".into()));
            }
            trajectory.push(state.denoise_step(provider, bias, config)?);
        }
        let block = state
            .block_tokens()
            .ok_or_else(|| Error::Internal("complete block still has masked slots".into()))?;
        context = state.context;
        match eos.and_then(|e| block.iter().position(|&t| t == e)) {
            Some(cut) => {
                context.extend_from_slice(&block[..cut]);
                hit_eos = true;
                break;
            }
            None => context.extend_from_slice(&block),
        }
        block_index += 1;
    }
    Ok(DecodeOutput {
        tokens: context.split_off(prompt.len()),
        trajectory,
        hit_eos,
    })
}
