//! Flat `key=value` run configuration shared by every subcommand.
//!
//! File form: one `key=value` per line; blank lines and lines starting with
//! `#` are ignored. The key is trimmed, everything after the first `=` is the
//! value, with `\\`, `\t`, `\n`, `\r` escapes. Lists are comma-separated.
//! Keys a subcommand does not use are accepted and ignored, so one file can
//! drive a whole pipeline.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use tokensteer::analysis::{DEFAULT_JACCARD_KS, DEFAULT_MARKER_THETA, DEFAULT_SAMPLES, DEFAULT_THRESHOLDS};
use tokensteer::corpus::{Normalization, TokenizerKind, TokenizerSpec};
use tokensteer::decoder::{Profile, DEFAULT_BLOCK_LEN, DEFAULT_STEPS};
use tokensteer::mockmodel::{DEFAULT_KAPPA, DEFAULT_MU};
use tokensteer::scores::DEFAULT_ALPHA;
use tokensteer::steering::{DEFAULT_TAU, DEFAULT_TEMPERATURE};
use tokensteer::tsv::{self, Metadata};

pub const DEFAULT_TOP_N: usize = 20;
pub const DEFAULT_SWEEP_LAMBDAS: [f64; 4] = [0.0, 0.25, 0.5, 0.7];

/// Every key, in file order.
pub const KEYS: &[&str] = &[
    "corpus",
    "out",
    "table",
    "tables",
    "class",
    "prompt",
    "prompt_file",
    "mock",
    "provider_cmd",
    "trajectory",
    "profile",
    "alpha",
    "tau",
    "lambda",
    "temperature",
    "greedy",
    "seed",
    "block_len",
    "steps",
    "max_new_tokens",
    "theta",
    "samples",
    "mu",
    "kappa",
    "tokenizer",
    "case",
    "thresholds",
    "ks",
    "top_n",
    "alphas",
    "taus",
    "lambdas",
    "jobs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub tables: Vec<PathBuf>,
    pub class: Option<String>,
    pub prompt: Option<String>,
    pub prompt_file: Option<PathBuf>,
    pub mock: Option<PathBuf>,
    pub provider_cmd: Option<String>,
    pub trajectory: Option<PathBuf>,
    pub profile: Profile,
    pub alpha: f64,
    pub tau: f64,
    /// `None` means the profile default.
    pub lambda: Option<f64>,
    pub temperature: f64,
    pub greedy: bool,
    pub seed: u64,
    pub block_len: usize,
    pub steps: usize,
    /// `None` means one block.
    pub max_new_tokens: Option<usize>,
    pub theta: f64,
    pub samples: usize,
    pub mu: f64,
    pub kappa: f64,
    pub tokenizer: TokenizerKind,
    pub case: Normalization,
    pub thresholds: Vec<f64>,
    pub ks: Vec<usize>,
    pub top_n: usize,
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// 0 lets rayon pick.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            out: None,
            table: None,
            tables: Vec::new(),
            class: None,
            prompt: None,
            prompt_file: None,
            mock: None,
            provider_cmd: None,
            trajectory: None,
            profile: Profile::default(),
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            lambda: None,
            temperature: DEFAULT_TEMPERATURE,
            greedy: false,
            seed: 0,
            block_len: DEFAULT_BLOCK_LEN,
            steps: DEFAULT_STEPS,
            max_new_tokens: None,
            theta: DEFAULT_MARKER_THETA,
            samples: DEFAULT_SAMPLES,
            mu: DEFAULT_MU,
            kappa: DEFAULT_KAPPA,
            tokenizer: TokenizerKind::default(),
            case: Normalization::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            ks: DEFAULT_JACCARD_KS.to_vec(),
            top_n: DEFAULT_TOP_N,
            alphas: vec![DEFAULT_ALPHA],
            taus: vec![DEFAULT_TAU],
            lambdas: DEFAULT_SWEEP_LAMBDAS.to_vec(),
            jobs: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("bad value {value:?} for `{key}`: {e}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_num(key, v)).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_tokenizer(value: &str) -> Result<TokenizerKind> {
    match value.trim() {
        "whitespace-punct" => Ok(TokenizerKind::WhitespacePunct),
        "external-ids" => Ok(TokenizerKind::ExternalIds),
        other => bail!("unknown tokenizer {other:?} (expected whitespace-punct or external-ids)"),
    }
}

pub fn parse_case(value: &str) -> Result<Normalization> {
    match value.trim() {
        "lower" => Ok(Normalization::Lowercase),
        "none" => Ok(Normalization::None),
        other => bail!("unknown case mode {other:?} (expected lower or none)"),
    }
}

fn tokenizer_name(kind: TokenizerKind) -> &'static str {
    match kind {
        TokenizerKind::WhitespacePunct => "whitespace-punct",
        TokenizerKind::ExternalIds => "external-ids",
    }
}

fn case_name(case: Normalization) -> &'static str {
    match case {
        Normalization::Lowercase => "lower",
        Normalization::None => "none",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || PathBuf::from(value);
        match key {
            "corpus" => self.corpus = Some(path()),
            "out" => self.out = Some(path()),
            "table" => self.table = Some(path()),
            "tables" => {
                self.tables = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(PathBuf::from).collect()
                }
            }
            "class" => self.class = Some(value.to_string()),
            "prompt" => self.prompt = Some(value.to_string()),
            "prompt_file" => self.prompt_file = Some(path()),
            "mock" => self.mock = Some(path()),
            "provider_cmd" => self.provider_cmd = Some(value.to_string()),
            "trajectory" => self.trajectory = Some(path()),
            "profile" => self.profile = value.trim().parse().map_err(|e| anyhow!("{e}"))?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "lambda" => self.lambda = Some(parse_num(key, value)?),
            "temperature" => self.temperature = parse_num(key, value)?,
            "greedy" => self.greedy = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "block_len" => self.block_len = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "max_new_tokens" => self.max_new_tokens = Some(parse_num(key, value)?),
            "theta" => self.theta = parse_num(key, value)?,
            "samples" => self.samples = parse_num(key, value)?,
            "mu" => self.mu = parse_num(key, value)?,
            "kappa" => self.kappa = parse_num(key, value)?,
            "tokenizer" => self.tokenizer = parse_tokenizer(value)?,
            "case" => self.case = parse_case(value)?,
            "thresholds" => self.thresholds = parse_list(key, value)?,
            "ks" => self.ks = parse_list(key, value)?,
            "top_n" => self.top_n = parse_num(key, value)?,
            "alphas" => self.alphas = parse_list(key, value)?,
            "taus" => self.taus = parse_list(key, value)?,
            "lambdas" => self.lambdas = parse_list(key, value)?,
            "jobs" => self.jobs = parse_num(key, value)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Value of `key` in file form; `None` for unset optional fields.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "corpus" => return path(&self.corpus),
            "out" => return path(&self.out),
            "table" => return path(&self.table),
            "tables" => self
                .tables
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
            "class" => return self.class.clone(),
            "prompt" => return self.prompt.clone(),
            "prompt_file" => return path(&self.prompt_file),
            "mock" => return path(&self.mock),
            "provider_cmd" => return self.provider_cmd.clone(),
            "trajectory" => return path(&self.trajectory),
            "profile" => self.profile.to_string(),
            "alpha" => self.alpha.to_string(),
            "tau" => self.tau.to_string(),
            "lambda" => return self.lambda.map(|l| l.to_string()),
            "temperature" => self.temperature.to_string(),
            "greedy" => self.greedy.to_string(),
            "seed" => self.seed.to_string(),
            "block_len" => self.block_len.to_string(),
            "steps" => self.steps.to_string(),
            "max_new_tokens" => return self.max_new_tokens.map(|n| n.to_string()),
            "theta" => self.theta.to_string(),
            "samples" => self.samples.to_string(),
            "mu" => self.mu.to_string(),
            "kappa" => self.kappa.to_string(),
            "tokenizer" => tokenizer_name(self.tokenizer).to_string(),
            "case" => case_name(self.case).to_string(),
            "thresholds" => join(&self.thresholds),
            "ks" => join(&self.ks),
            "top_n" => self.top_n.to_string(),
            "alphas" => join(&self.alphas),
            "taus" => join(&self.taus),
            "lambdas" => join(&self.lambdas),
            "jobs" => self.jobs.to_string(),
            _ => return None,
        })
    }

    /// Apply every `key=value` line of a config file on top of `self`.
    fn merge_file_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
            let value = tsv::unescape(value, i + 1)?;
            self.set(key.trim(), &value).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn from_file_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_file_text(text)?;
        Ok(cfg)
    }

    pub fn to_file_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = self.get(key) {
                out.push_str(&format!("{key}={}\n", tsv::escape(&v)));
            }
        }
        out
    }

    pub fn lambda_or_profile(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.profile.default_lambda())
    }

    pub fn max_new_or_block(&self) -> usize {
        self.max_new_tokens.unwrap_or(self.block_len)
    }

    pub fn tokenizer_spec(&self) -> TokenizerSpec {
        TokenizerSpec {
            kind: self.tokenizer,
            normalization: self.case,
        }
    }

    /// The listed keys as `cfg.<key>` provenance metadata.
    pub fn echo(&self, keys: &[&str]) -> Metadata {
        let mut m = Metadata::new();
        for key in keys {
            if let Some(v) = self.get(key) {
                m.set(format!("cfg.{key}"), v);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_file_text(&cfg.to_file_text()).unwrap(), cfg);
    }

    #[test]
    fn full_config_round_trips() {
        let cfg = RunConfig {
            corpus: Some("data/corpus".into()),
            out: Some("out dir".into()),
            table: Some("t.tsv".into()),
            tables: vec!["a.tsv".into(), "b.tsv".into()],
            class: Some("pos".into()),
            prompt: Some(" the\tweather\nis ".into()),
            prompt_file: Some("p.txt".into()),
            mock: Some("m.tsv".into()),
            provider_cmd: Some("python3 serve.py --x=1".into()),
            trajectory: Some("traj.jsonl".into()),
            profile: Profile::Dream,
            alpha: 0.1 + 0.2,
            tau: 1e-300,
            lambda: Some(1.0 / 3.0),
            temperature: 0.7,
            greedy: true,
            seed: u64::MAX,
            block_len: 32,
            steps: 7,
            max_new_tokens: Some(64),
            theta: -2.5,
            samples: 3,
            mu: 0.123456789012345,
            kappa: 2.0,
            tokenizer: TokenizerKind::ExternalIds,
            case: Normalization::None,
            thresholds: vec![1.5, 2.0],
            ks: vec![1, 2, 3],
            top_n: 5,
            alphas: vec![0.01, 0.1],
            taus: vec![],
            lambdas: vec![0.0, 0.5],
            jobs: 4,
        };
        let text = cfg.to_file_text();
        assert_eq!(RunConfig::from_file_text(&text).unwrap(), cfg, "{text}");
    }

    #[test]
    fn comments_blank_lines_and_spaced_keys() {
        let cfg = RunConfig::from_file_text("# run\n\n  alpha =0.5\nprofile=dream\n").unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.lambda_or_profile(), 0.5);
    }

    #[test]
    fn rejects_unknown_key_and_bad_value() {
        let err = RunConfig::from_file_text("alpah=1\n").unwrap_err();
        assert!(format!("{err:#}").contains("alpah"));
        assert!(RunConfig::from_file_text("steps=many\n").is_err());
        assert!(RunConfig::from_file_text("just text\n").is_err());
    }
}
