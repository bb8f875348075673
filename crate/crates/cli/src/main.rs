//! `tokensteer`: build score tables, decode with steering, sweep, analyze.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tokensteer::analysis::{cue_strength, jaccard_tsv, sweep, sweep_tsv, top_tokens_tsv, EfficacyConfig, SweepGrid};
use tokensteer::corpus::{load_labeled_corpus, tokenize_known, write_count_table, LabeledCorpus};
use tokensteer::decoder::{decode, DecodeConfig, LogitProvider};
use tokensteer::mockmodel::MockModel;
use tokensteer::provider::SubprocessProvider;
use tokensteer::scores::{build_score_tables, ScoreTable};
use tokensteer::steering::build_bias;
use tokensteer::tsv::{self, Metadata};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "tokensteer", version, about = "Class-conditional token scores and steered block-wise decoding")]
struct Cli {
    /// Flat key=value config file; flags override it, it overrides built-in defaults [default: none]
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Print the effective config in config-file form and exit without running [default: false]
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count tokens per class and write one score table per class plus counts.tsv
    BuildScores(BuildScoresArgs),
    /// Generate text from a logit provider, optionally steered by a score table
    Decode(DecodeArgs),
    /// Run the steering-efficacy experiment over an (alpha, tau, lambda) grid
    Sweep(SweepArgs),
    /// Write cue_strength.tsv, top_tokens.tsv and jaccard.tsv for score tables
    Analyze(AnalyzeArgs),
    /// Train the interpolated bigram mock model on a labeled corpus
    MockTrain(MockTrainArgs),
}

#[derive(Args)]
struct TokenizerArgs {
    /// Tokenizer: whitespace-punct or external-ids [default: whitespace-punct]
    #[arg(long, value_name = "KIND")]
    tokenizer: Option<String>,
    /// Case normalization: lower or none [default: lower]
    #[arg(long, value_name = "MODE")]
    case: Option<String>,
}

#[derive(Args)]
struct DecodeFlags {
    /// Steering profile: llada (lambda 0.7) or dream (lambda 0.5) [default: llada]
    #[arg(long)]
    profile: Option<String>,
    /// Steering strength lambda [default: from --profile, 0.7 for llada, 0.5 for dream]
    #[arg(long)]
    lambda: Option<f64>,
    /// Score clipping threshold tau [default: 8]
    #[arg(long)]
    tau: Option<f64>,
    /// Sampling temperature [default: 1]
    #[arg(long)]
    temperature: Option<f64>,
    /// Pick the argmax token instead of sampling [default: false]
    #[arg(long)]
    greedy: bool,
    /// RNG seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Tokens per block [default: 128]
    #[arg(long)]
    block_len: Option<usize>,
    /// Denoising steps per block [default: 128]
    #[arg(long)]
    steps: Option<usize>,
    /// Total tokens to generate [default: one block, i.e. --block-len]
    #[arg(long)]
    max_new_tokens: Option<usize>,
}

#[derive(Args)]
struct BuildScoresArgs {
    /// Corpus root with one subdirectory of *.txt files per class [default: none]
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Prior scaling coefficient alpha [default: 0.01]
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory [default: .]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    tok: TokenizerArgs,
}

#[derive(Args)]
struct DecodeArgs {
    /// Score table file, or a build-scores output directory together with --class [default: none, unsteered]
    #[arg(long, value_name = "PATH")]
    table: Option<PathBuf>,
    /// Class to steer toward; must match the table's class [default: the table's class]
    #[arg(long)]
    class: Option<String>,
    /// Prompt text [default: none]
    #[arg(long, conflicts_with = "prompt_file")]
    prompt: Option<String>,
    /// File holding the prompt text [default: none]
    #[arg(long, value_name = "PATH")]
    prompt_file: Option<PathBuf>,
    /// Mock model file from mock-train [default: none]
    #[arg(long, value_name = "PATH", conflicts_with = "provider_cmd")]
    mock: Option<PathBuf>,
    /// Command line of an external JSON-lines logit provider [default: none]
    #[arg(long, value_name = "CMD")]
    provider_cmd: Option<String>,
    /// Output file [default: stdout]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Write the per-step commit log as JSON lines [default: none]
    #[arg(long, value_name = "PATH")]
    trajectory: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeFlags,
    #[command(flatten)]
    tok: TokenizerArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Corpus root the tables (and, without --mock, the model) are built from [default: none]
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Target class [default: none]
    #[arg(long)]
    class: Option<String>,
    /// Mock model file [default: trained on --corpus with --mu/--kappa]
    #[arg(long, value_name = "PATH")]
    mock: Option<PathBuf>,
    /// Prompt text [default: the model's most frequent token]
    #[arg(long)]
    prompt: Option<String>,
    /// Comma-separated alpha grid [default: 0.01]
    #[arg(long, value_name = "LIST")]
    alphas: Option<String>,
    /// Comma-separated tau grid [default: 8]
    #[arg(long, value_name = "LIST")]
    taus: Option<String>,
    /// Comma-separated lambda grid [default: 0,0.25,0.5,0.7]
    #[arg(long, value_name = "LIST")]
    lambdas: Option<String>,
    /// Marker threshold theta on the target zscore [default: 2]
    #[arg(long)]
    theta: Option<f64>,
    /// Decoded samples per cell [default: 50]
    #[arg(long)]
    samples: Option<usize>,
    /// Bigram weight mu when training the mock model [default: 0.7]
    #[arg(long)]
    mu: Option<f64>,
    /// Add-kappa smoothing when training the mock model [default: 0.1]
    #[arg(long)]
    kappa: Option<f64>,
    /// Worker threads, 0 for all cores [default: 0]
    #[arg(long)]
    jobs: Option<usize>,
    /// Report file [default: stdout]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeFlags,
    #[command(flatten)]
    tok: TokenizerArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Score table files [default: none]
    #[arg(value_name = "TABLE")]
    tables: Vec<PathBuf>,
    /// Comma-separated zscore thresholds [default: 2,3,5]
    #[arg(long, value_name = "LIST")]
    thresholds: Option<String>,
    /// Comma-separated top-k sizes for Jaccard overlap [default: 100,500,1000]
    #[arg(long, value_name = "LIST")]
    ks: Option<String>,
    /// Tokens listed per class in top_tokens.tsv [default: 20]
    #[arg(long)]
    top_n: Option<usize>,
    /// Output directory [default: .]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MockTrainArgs {
    /// Corpus root with one subdirectory of *.txt files per class [default: none]
    #[arg(long, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Bigram weight mu [default: 0.7]
    #[arg(long)]
    mu: Option<f64>,
    /// Add-kappa smoothing [default: 0.1]
    #[arg(long)]
    kappa: Option<f64>,
    /// Model file [default: mock_model.tsv]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(flatten)]
    tok: TokenizerArgs,
}

/// Collects flag values as config-file assignments.
#[derive(Default)]
struct Overrides(Vec<(&'static str, String)>);

impl Overrides {
    fn opt<T: ToString>(&mut self, key: &'static str, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.push((key, v.to_string()));
        }
        self
    }

    fn path(&mut self, key: &'static str, value: &Option<PathBuf>) -> &mut Self {
        if let Some(p) = value {
            self.0.push((key, p.display().to_string()));
        }
        self
    }

    fn tok(&mut self, t: &TokenizerArgs) -> &mut Self {
        self.opt("tokenizer", &t.tokenizer).opt("case", &t.case)
    }

    fn decode(&mut self, d: &DecodeFlags) -> &mut Self {
        self.opt("profile", &d.profile)
            .opt("lambda", &d.lambda)
            .opt("tau", &d.tau)
            .opt("temperature", &d.temperature)
            .opt("seed", &d.seed)
            .opt("block_len", &d.block_len)
            .opt("steps", &d.steps)
            .opt("max_new_tokens", &d.max_new_tokens);
        if d.greedy {
            self.0.push(("greedy", "true".into()));
        }
        self
    }

    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        for (k, v) in &self.0 {
            cfg.set(k, v).with_context(|| format!("--{}", k.replace('_', "-")))?;
        }
        Ok(())
    }
}

const BUILD_KEYS: &[&str] = &["corpus", "alpha", "tokenizer", "case"];
const MOCK_KEYS: &[&str] = &["corpus", "mu", "kappa", "tokenizer", "case"];
const DECODE_KEYS: &[&str] = &[
    "table",
    "class",
    "prompt",
    "prompt_file",
    "mock",
    "provider_cmd",
    "profile",
    "lambda",
    "tau",
    "temperature",
    "greedy",
    "seed",
    "block_len",
    "steps",
    "max_new_tokens",
    "tokenizer",
    "case",
];
const SWEEP_KEYS: &[&str] = &[
    "corpus",
    "class",
    "mock",
    "prompt",
    "alphas",
    "taus",
    "lambdas",
    "theta",
    "samples",
    "mu",
    "kappa",
    "profile",
    "temperature",
    "greedy",
    "seed",
    "block_len",
    "steps",
    "max_new_tokens",
    "tokenizer",
    "case",
];
const ANALYZE_KEYS: &[&str] = &["tables", "thresholds", "ks", "top_n"];

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
            RunConfig::from_file_text(&text).with_context(|| format!("config {}", path.display()))
        }
        None => Ok(RunConfig::default()),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).context("writing stdout")?;
            out.flush().context("writing stdout")
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require_corpus(cfg: &RunConfig) -> Result<&Path> {
    cfg.corpus
        .as_deref()
        .context("no corpus root given (use --corpus or `corpus=` in the config)")
}

fn cmd_build_scores(cfg: &RunConfig) -> Result<()> {
    let root = require_corpus(cfg)?;
    let (vocab, counts) = load_labeled_corpus(root, cfg.tokenizer_spec())?;
    let params = cfg.echo(BUILD_KEYS);
    let tables = build_score_tables(&vocab, &counts, cfg.alpha, &params)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    let counts_path = out.join("counts.tsv");
    write_out(Some(&counts_path), &write_count_table(&vocab, &counts, &params)?)?;
    for t in &tables {
        t.save(&out.join(format!("scores_{}.tsv", t.class_name)))?;
    }
    eprintln!(
        "wrote counts.tsv and {} score tables ({} tokens) to {}",
        tables.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

fn cmd_mock_train(cfg: &RunConfig) -> Result<()> {
    let root = require_corpus(cfg)?;
    let corpus = LabeledCorpus::read(root, cfg.tokenizer_spec())?;
    let model = MockModel::train_on_corpus(&corpus, cfg.mu, cfg.kappa)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("mock_model.tsv"));
    let text = cfg.echo(MOCK_KEYS).render() + &model.to_tsv();
    write_out(Some(&out), &text)?;
    eprintln!("wrote mock model ({} tokens) to {}", model.vocab().len(), out.display());
    Ok(())
}

fn open_provider(cfg: &RunConfig) -> Result<Box<dyn LogitProvider>> {
    match (&cfg.mock, &cfg.provider_cmd) {
        (Some(_), Some(_)) => bail!("give either a mock model or a provider command, not both"),
        (Some(path), None) => Ok(Box::new(
            MockModel::load(path).with_context(|| format!("loading mock model {}", path.display()))?,
        )),
        (None, Some(cmd)) => Ok(Box::new(
            SubprocessProvider::spawn_command_line(cmd).with_context(|| format!("starting provider `{cmd}`"))?,
        )),
        (None, None) => bail!("no logit provider given (use --mock PATH or --provider-cmd CMD)"),
    }
}

fn prompt_text(cfg: &RunConfig) -> Result<Option<String>> {
    match (&cfg.prompt, &cfg.prompt_file) {
        (Some(_), Some(_)) => bail!("give either a prompt or a prompt file, not both"),
        (Some(p), None) => Ok(Some(p.clone())),
        (None, Some(path)) => Ok(Some(
            fs::read_to_string(path).with_context(|| format!("reading prompt {}", path.display()))?,
        )),
        (None, None) => Ok(None),
    }
}

fn decode_config(cfg: &RunConfig) -> DecodeConfig {
    DecodeConfig {
        block_len: cfg.block_len,
        num_steps: cfg.steps,
        max_new_tokens: cfg.max_new_or_block(),
        temperature: cfg.temperature,
        greedy: cfg.greedy,
        seed: cfg.seed,
        lambda: cfg.lambda_or_profile(),
        tau: cfg.tau,
        profile: cfg.profile,
    }
}

fn load_steering_table(cfg: &RunConfig, path: &Path) -> Result<ScoreTable> {
    let file = if path.is_dir() {
        let class = cfg
            .class
            .as_deref()
            .context("--class is required when --table is a directory")?;
        path.join(format!("scores_{class}.tsv"))
    } else {
        path.to_path_buf()
    };
    let table = ScoreTable::load(&file).with_context(|| format!("loading score table {}", file.display()))?;
    if let Some(class) = &cfg.class {
        if class != &table.class_name {
            bail!("{} holds class `{}`, not `{class}`", file.display(), table.class_name);
        }
    }
    Ok(table)
}

fn cmd_decode(mut cfg: RunConfig) -> Result<()> {
    cfg.lambda = Some(cfg.lambda_or_profile());
    cfg.max_new_tokens = Some(cfg.max_new_or_block());
    let provider = open_provider(&cfg)?;
    let vocab = provider.vocab();
    let text = prompt_text(&cfg)?.context("no prompt given (use --prompt or --prompt-file)")?;
    let prompt = tokenize_known(&text, cfg.tokenizer_spec(), vocab).context("tokenizing prompt")?;
    if prompt.is_empty() {
        bail!("prompt has no tokens");
    }
    let dc = decode_config(&cfg);
    let bias = match &cfg.table {
        Some(path) => {
            let table = load_steering_table(&cfg, path)?;
            Some(build_bias(&table, dc.lambda, dc.tau, vocab)?)
        }
        None if cfg.class.is_some() => bail!("--class needs --table"),
        None => None,
    };
    let out = decode(&prompt, provider.as_ref(), bias.as_ref(), &dc)?;

    let mut meta = cfg.echo(DECODE_KEYS);
    meta.set("generated", out.tokens.len().to_string())
        .set("hit_eos", out.hit_eos.to_string());
    if let Some(b) = &bias {
        meta.set("bias_support", b.support().to_string());
    }
    let body = meta.render() + &tsv::escape(&vocab.decode(&out.tokens)) + "\n";
    write_out(cfg.out.as_deref(), &body)?;
    if let Some(path) = &cfg.trajectory {
        let log: String = out.trajectory.iter().map(|r| r.to_json_line() + "\n").collect();
        write_out(Some(path), &log)?;
    }
    Ok(())
}

fn cmd_sweep(mut cfg: RunConfig) -> Result<()> {
    cfg.max_new_tokens = Some(cfg.max_new_or_block());
    let root = require_corpus(&cfg)?;
    let corpus = LabeledCorpus::read(root, cfg.tokenizer_spec())?;
    let counts = corpus.counts()?;
    let class = cfg.class.as_deref().context("no target class given (use --class)")?;
    let target = counts
        .class_index(class)
        .with_context(|| format!("class `{class}` not in corpus ({})", counts.class_names().join(", ")))?;
    let model = match &cfg.mock {
        Some(path) => MockModel::load(path).with_context(|| format!("loading mock model {}", path.display()))?,
        None => MockModel::train_on_corpus(&corpus, cfg.mu, cfg.kappa)?,
    };
    let prompt = match prompt_text(&cfg)? {
        Some(text) => tokenize_known(&text, cfg.tokenizer_spec(), model.vocab()).context("tokenizing prompt")?,
        None => vec![model.most_frequent_token()],
    };
    if prompt.is_empty() {
        bail!("prompt has no tokens");
    }
    let base = EfficacyConfig {
        lambdas: cfg.lambdas.clone(),
        tau: cfg.tau,
        theta: cfg.theta,
        samples: cfg.samples,
        decode: decode_config(&cfg),
        prompt,
    };
    let grid = SweepGrid {
        alphas: cfg.alphas.clone(),
        taus: cfg.taus.clone(),
        lambdas: cfg.lambdas.clone(),
    };
    let meta = cfg.echo(SWEEP_KEYS);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("starting worker pool")?;
    let rows = pool.install(|| sweep(&corpus.vocab, &counts, target, &model, &grid, &base, &meta))?;
    write_out(cfg.out.as_deref(), &sweep_tsv(&rows, &base, &meta))
}

fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    if cfg.tables.is_empty() {
        bail!("no score tables given");
    }
    let tables = cfg
        .tables
        .iter()
        .map(|p| ScoreTable::load(p).with_context(|| format!("loading score table {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let meta: Metadata = cfg.echo(ANALYZE_KEYS);
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    let cue = cue_strength(&tables, &cfg.thresholds)?;
    let jaccard = jaccard_tsv(&tables, &cfg.ks, &meta)?;
    write_out(Some(&out.join("cue_strength.tsv")), &cue.to_tsv(&meta))?;
    write_out(Some(&out.join("top_tokens.tsv")), &top_tokens_tsv(&tables, cfg.top_n, &meta))?;
    write_out(Some(&out.join("jaccard.tsv")), &jaccard)?;
    eprintln!("wrote cue_strength.tsv, top_tokens.tsv and jaccard.tsv to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let mut o = Overrides::default();
    match &cli.command {
        Command::BuildScores(a) => {
            o.path("corpus", &a.corpus).opt("alpha", &a.alpha).path("out", &a.out).tok(&a.tok);
        }
        Command::MockTrain(a) => {
            o.path("corpus", &a.corpus)
                .opt("mu", &a.mu)
                .opt("kappa", &a.kappa)
                .path("out", &a.out)
                .tok(&a.tok);
        }
        Command::Decode(a) => {
            o.path("table", &a.table)
                .opt("class", &a.class)
                .opt("prompt", &a.prompt)
                .path("prompt_file", &a.prompt_file)
                .path("mock", &a.mock)
                .opt("provider_cmd", &a.provider_cmd)
                .path("out", &a.out)
                .path("trajectory", &a.trajectory)
                .decode(&a.decode)
                .tok(&a.tok);
        }
        Command::Sweep(a) => {
            o.path("corpus", &a.corpus)
                .opt("class", &a.class)
                .path("mock", &a.mock)
                .opt("prompt", &a.prompt)
                .opt("alphas", &a.alphas)
                .opt("taus", &a.taus)
                .opt("lambdas", &a.lambdas)
                .opt("theta", &a.theta)
                .opt("samples", &a.samples)
                .opt("mu", &a.mu)
                .opt("kappa", &a.kappa)
                .opt("jobs", &a.jobs)
                .path("out", &a.out)
                .decode(&a.decode)
                .tok(&a.tok);
        }
        Command::Analyze(a) => {
            o.opt("thresholds", &a.thresholds)
                .opt("ks", &a.ks)
                .opt("top_n", &a.top_n)
                .path("out", &a.out);
        }
    }
    o.apply(&mut cfg)?;
    if let Command::Analyze(a) = &cli.command {
        if !a.tables.is_empty() {
            cfg.tables = a.tables.clone();
        }
    }
    if cli.print_config {
        return write_out(None, &cfg.to_file_text());
    }
    match cli.command {
        Command::BuildScores(_) => cmd_build_scores(&cfg),
        Command::MockTrain(_) => cmd_mock_train(&cfg),
        Command::Decode(_) => cmd_decode(cfg),
        Command::Sweep(_) => cmd_sweep(cfg),
        Command::Analyze(_) => cmd_analyze(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tokensteer: error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
