//! Single binary driving the whole toolkit: `train`, `generate`, `eval`,
//! `chat`, and `synth`. Exit codes: 0 on success, 1 on runtime errors,
//! 2 on flag misuse.

use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lts_core::corpus::{self, Vocab, EOS_ID};
use lts_core::inference::beam_search;
use lts_core::metrics;
use lts_core::model::{ContextMode, FirstWordMode, ModelConfig, ModelParams, ReadoutMode};
use lts_core::synth;
use lts_core::training::{self, load_checkpoint, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(
    name = "lts",
    version,
    about = "GRU seq2seq dialogue toolkit with a learned first-word head"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a tab-separated pair corpus
    Train(TrainArgs),
    /// Decode N-best responses for posts from a file or stdin
    Generate(GenerateArgs),
    /// Score a checkpoint on a one-to-many test set
    Eval(EvalArgs),
    /// Interactive single-turn chat loop
    Chat(ChatArgs),
    /// Emit a synthetic keyword-rule corpus
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Learned first-word head
    Lts,
    /// Classic start-symbol decoding
    Start,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContextArg {
    /// Encoder's last hidden state
    Last,
    /// Attention over all encoder states
    Attn,
    /// Last hidden state plus attention
    Hybrid,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadoutArg {
    /// Affine projection
    Softmax,
    /// Two-piece maxout before the projection
    Maxout,
}

impl From<ModeArg> for FirstWordMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Lts => FirstWordMode::Lts,
            ModeArg::Start => FirstWordMode::StartSymbol,
        }
    }
}

impl From<ContextArg> for ContextMode {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::Last => ContextMode::LastHidden,
            ContextArg::Attn => ContextMode::Attention,
            ContextArg::Hybrid => ContextMode::Hybrid,
        }
    }
}

impl From<ReadoutArg> for ReadoutMode {
    fn from(r: ReadoutArg) -> Self {
        match r {
            ReadoutArg::Softmax => ReadoutMode::Softmax,
            ReadoutArg::Maxout => ReadoutMode::MaxoutSoftmax,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Pair corpus: one `post<TAB>response` per line, space-separated tokens
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for per-epoch checkpoints and `model.ckpt`
    #[arg(long)]
    out: PathBuf,
    /// Hidden state size [default: 64; paper profile 1024]
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding size [default: 32; paper profile 500]
    #[arg(long)]
    embed: Option<usize>,
    /// Mini-batch size [default: 16; paper profile 100]
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// First-word mechanism
    #[arg(long, value_enum, default_value_t = ModeArg::Lts)]
    mode: ModeArg,
    /// Decoder context source
    #[arg(long, value_enum, default_value_t = ContextArg::Last)]
    context: ContextArg,
    /// Readout between decoder state and logits
    #[arg(long, value_enum, default_value_t = ReadoutArg::Softmax)]
    readout: ReadoutArg,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Keep only this many most-frequent tokens in the vocabulary
    #[arg(long, default_value_t = 100_000)]
    vocab_cap: usize,
    /// Use the full-scale defaults (hidden 1024, embed 500, batch 100)
    #[arg(long)]
    paper_profile: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Checkpoint to decode with
    #[arg(long)]
    model: PathBuf,
    /// Posts file, or `-` for stdin
    #[arg(long, default_value = "-")]
    input: String,
    /// Beam width
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Ranked results to print per post (at most `--beam`)
    #[arg(long, default_value_t = 1)]
    nbest: usize,
    /// Decode budget in tokens
    #[arg(long, default_value_t = 20)]
    max_len: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Test set: `post<TAB>ref1<TAB>ref2...` per line
    #[arg(long)]
    test: PathBuf,
    /// Training corpus the frequency ranks are derived from
    #[arg(long)]
    freq_from: PathBuf,
    /// Compute accw-0..I and div-1..I up to this I
    #[arg(long, default_value_t = 5)]
    max_i: usize,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    /// Where to write the key=value metric report
    #[arg(long)]
    report: PathBuf,
    /// Also write the per-i curves as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Annotation file (`item<TAB>rater<TAB>score`) for Fleiss' kappa
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Apply a brevity penalty to corpus BLEU
    #[arg(long)]
    brevity_penalty: bool,
}

#[derive(Args)]
struct ChatArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    beam: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Where to write the corpus
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    /// Total distinct tokens (keywords + first words + fillers)
    #[arg(long, default_value_t = 60)]
    vocab: usize,
    /// Probability mass shifted onto the high-frequency first word
    #[arg(long, default_value_t = 0.6)]
    skew: f64,
    /// Number of keyword/first-word classes
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value = "keyword-first-word")]
    rule: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<lts_core::Error> for CliError {
    fn from(e: lts_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Chat(args) => cmd_chat(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (hidden, embed, batch) = if args.paper_profile {
        (1024, 500, 100)
    } else {
        (64, 32, 16)
    };
    let hidden = args.hidden.unwrap_or(hidden);
    let embed = args.embed.unwrap_or(embed);
    let batch = args.batch.unwrap_or(batch);
    if hidden == 0 || embed == 0 || batch == 0 {
        return Err(CliError::Usage("--hidden, --embed and --batch must be positive".into()));
    }

    let (pairs, vocab, _) = corpus::load_pairs(&args.corpus, args.vocab_cap)?;
    let model_config = ModelConfig {
        vocab_size: vocab.size(),
        embed_dim: embed,
        hidden_dim: hidden,
        first_word_mode: args.mode.into(),
        context_mode: args.context.into(),
        readout: args.readout.into(),
    };
    let train_config = TrainConfig {
        batch_size: batch,
        learning_rate: args.lr,
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    fs::create_dir_all(&args.out)?;
    let params = ModelParams::init(&model_config, args.seed)?;
    training::train(
        &pairs,
        &params,
        &model_config,
        &train_config,
        &vocab,
        Some(&args.out),
        |epoch, loss| println!("epoch={epoch} loss={loss:.6}"),
    )?;
    Ok(())
}

fn load_model(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(load_checkpoint(path)?)
}

fn encode_post(line: &str, vocab: &Vocab) -> Result<Vec<usize>, CliError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(CliError::Runtime("empty post".into()));
    }
    let mut ids = vocab.encode(tokens);
    ids.push(EOS_ID);
    Ok(ids)
}

fn decode_tokens(ids: &[usize], vocab: &Vocab) -> Result<String, CliError> {
    let trimmed = match ids.last() {
        Some(&id) if id == EOS_ID => &ids[..ids.len() - 1],
        _ => ids,
    };
    Ok(vocab.decode(trimmed)?.join(" "))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    if args.nbest == 0 || args.beam < args.nbest {
        return Err(CliError::Usage(format!(
            "--beam ({}) must be at least --nbest ({}), both positive",
            args.beam, args.nbest
        )));
    }
    let ckpt = load_model(&args.model)?;
    let text = if args.input == "-" {
        let mut buf = String::new();
        io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        fs::read_to_string(&args.input)?
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in text.lines() {
        let post = encode_post(line, &ckpt.vocab)?;
        let beam = beam_search(&post, &ckpt.params, &ckpt.config, args.beam, args.max_len)?;
        for (rank, hyp) in beam.iter().take(args.nbest).enumerate() {
            let tokens = decode_tokens(&hyp.tokens, &ckpt.vocab)?;
            writeln!(out, "{}\t{:.6}\t{}", rank + 1, hyp.logprob, tokens)?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_model(&args.model)?;
    let counts = corpus::count_tokens(&args.freq_from)?;
    let freq = corpus::FrequencyTable::from_counts(&counts, &ckpt.vocab);
    let samples = corpus::load_test_set(&args.test, &ckpt.vocab)?;
    if args.max_i > freq.len() {
        return Err(CliError::Usage(format!(
            "--max-i {} exceeds the {} ranked vocabulary tokens",
            args.max_i,
            freq.len()
        )));
    }
    if args.beam == 0 {
        return Err(CliError::Usage("--beam must be positive".into()));
    }
    let mut report = metrics::evaluate(
        &ckpt.params,
        &ckpt.config,
        &ckpt.vocab,
        &samples,
        &freq,
        args.max_i,
        args.beam,
        args.brevity_penalty,
    )?;
    if let Some(path) = &args.annotations {
        let records = metrics::load_annotations(path)?;
        report.kappa = Some(metrics::fleiss_kappa(&records)?);
    }
    let kv = report.to_kv();
    fs::write(&args.report, &kv)?;
    if let Some(path) = &args.csv {
        fs::write(path, report.to_csv())?;
    }
    print!("{kv}");
    Ok(())
}

fn cmd_chat(args: ChatArgs) -> Result<(), CliError> {
    if args.beam == 0 {
        return Err(CliError::Usage("--beam must be positive".into()));
    }
    let ckpt = load_model(&args.model)?;
    let stdin = io::stdin();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim() == ":quit" {
            break;
        }
        // A failed turn is reported and the loop goes on.
        match chat_turn(&line, &ckpt, args.beam) {
            Ok(response) => println!("{response}"),
            Err(CliError::Runtime(msg)) | Err(CliError::Usage(msg)) => eprintln!("error: {msg}"),
        }
    }
    Ok(())
}

fn chat_turn(line: &str, ckpt: &Checkpoint, beam: usize) -> Result<String, CliError> {
    let post = encode_post(line, &ckpt.vocab)?;
    let hyps = beam_search(&post, &ckpt.params, &ckpt.config, beam, 20)?;
    decode_tokens(&hyps[0].tokens, &ckpt.vocab)
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let rule: synth::SynthRule = args
        .rule
        .parse()
        .map_err(|e: lts_core::Error| CliError::Usage(e.to_string()))?;
    let config = synth::SynthConfig {
        pairs: args.pairs,
        vocab: args.vocab,
        skew: args.skew,
        classes: args.classes,
        rule,
        seed: args.seed,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let text = synth::generate(&config)?;
    fs::write(&args.out, text)?;
    Ok(())
}
