use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use convtok::augment::{corpus_stats, load_utterances, pack_segments, save_utterances, PackConfig, TaskSet};
use convtok::corpus::{load_corpus, save_corpus, Item, TaskToken};
use convtok::evaluate::{evaluate_corpus, EvalConfig};
use convtok::extract::{load_hypotheses, save_hypotheses, FrameSpec};
use convtok::metrics::CollarConfig;
use convtok::simulate::{save_edit_logs, simulate, NoiseConfig, SimConfig};
use convtok::tokenizer::{task_token_surfaces, train_bpe, Vocab};

/// Token-augmented transcript preparation, tokenization and evaluation.
#[derive(Parser, Debug)]
#[command(name = "convtok", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pack a corpus into token-augmented utterances and print statistics.
    Prepare(PrepareArgs),
    /// Train a BPE vocabulary with task tokens as atomic pieces.
    TrainTokenizer(TrainArgs),
    /// Encode utterances into piece ids.
    Encode(EncodeArgs),
    /// Score hypotheses against reference utterances.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic corpus with noisy hypotheses.
    Simulate(SimulateArgs),
    /// Print statistics for an utterance file.
    Stats(StatsArgs),
}

// Each argument struct doubles as the schema of its `--config` file. Keys
// are the long flag names with underscores. Flags win over file values.

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PrepareArgs {
    /// Corpus JSONL.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output utterance JSONL.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of sc,ep,ne; empty for plain transcripts.
    #[arg(long)]
    tasks: Option<String>,
    /// Maximum utterance duration in seconds.
    #[arg(long)]
    max_dur: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainArgs {
    /// Utterance JSONL used as training text.
    #[arg(long)]
    utterances: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Output vocabulary file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EncodeArgs {
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    utterances: Option<PathBuf>,
    /// Output JSONL with one `{"utt", "ids"}` object per utterance.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateArgs {
    /// Source corpus JSONL; reference event times come from its segments.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Reference utterance JSONL.
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    reference: Option<PathBuf>,
    /// Hypothesis JSONL.
    #[arg(long)]
    hyp: Option<PathBuf>,
    /// Report JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-utterance TSV output.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Matching tolerance in seconds.
    #[arg(long)]
    collar: Option<f64>,
    #[arg(long)]
    frame_dur: Option<f64>,
    #[arg(long)]
    frame_stride: Option<f64>,
    /// Also report per-utterance macro averages.
    #[arg(long = "macro", num_args = 0..=1, default_missing_value = "true")]
    #[serde(rename = "macro")]
    macro_average: Option<bool>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct SimulateArgs {
    /// Simulation config (TOML). Missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
    /// Corpus seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Noise seed; overrides the config file.
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    n_conversations: Option<usize>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StatsArgs {
    #[arg(long)]
    utterances: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    json: Option<bool>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Fill unset flags from the config file named by `config`.
macro_rules! layer {
    ($args:expr, $ty:ty, [$($field:ident),*]) => {{
        let mut args = $args;
        if let Some(path) = args.config.clone() {
            let file: $ty = read_config(&path)?;
            $(if args.$field.is_none() { args.$field = file.$field; })*
        }
        args
    }};
}

/// Invalid invocation or configuration; exits with code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
}

/// Print to stdout with a trailing newline. A closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", text.trim_end_matches('\n'));
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Usage(format!("missing required option --{flag}")).into())
}

/// Write through a temporary file in the destination directory, then rename.
fn atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&Path) -> convtok::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating {}", path.display()))?;
    write(tmp.path()).with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn atomic_text(path: &Path, text: &str) -> Result<()> {
    atomic(path, |tmp| fs::write(tmp, text).map_err(|e| convtok::Error::Io { path: tmp.display().to_string(), source: e }))
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let args = layer!(args, PrepareArgs, [corpus, out, tasks, max_dur]);
    let tasks: TaskSet = match &args.tasks {
        Some(t) => t.parse()?,
        None => TaskSet::ALL,
    };
    let config = PackConfig { max_duration: args.max_dur.unwrap_or(PackConfig::default().max_duration), tasks };
    config.validate()?;
    let corpus_path = required(args.corpus, "corpus")?;
    let out = required(args.out, "out")?;
    let corpus = load_corpus(&corpus_path)?;
    let utterances: Vec<_> = corpus.iter().flat_map(|c| pack_segments(c, &config)).collect();
    atomic(&out, |tmp| save_utterances(&utterances, tmp))?;
    emit(&corpus_stats(&utterances).to_string());
    Ok(())
}

fn training_text(path: &Path) -> Result<Vec<Vec<Item>>> {
    Ok(load_utterances(path)?.into_iter().map(|u| u.items).collect())
}

fn train_tokenizer(args: TrainArgs) -> Result<()> {
    let args = layer!(args, TrainArgs, [utterances, vocab_size, out]);
    let path = required(args.utterances, "utterances")?;
    let size = required(args.vocab_size, "vocab-size")?;
    let out = required(args.out, "out")?;
    let text = training_text(&path)?;
    let vocab = train_bpe(&text, size, &task_token_surfaces())?;
    let mut summary = format!("vocabulary: {} pieces ({} merges)\n", vocab.len(), vocab.merges().len());
    for token in TaskToken::ALL {
        let pieces = vocab.encode(&[Item::Token(token)]).len();
        if pieces != 1 {
            bail!(Usage(format!("{} encodes to {pieces} pieces", token.surface())));
        }
        summary += &format!("{}\t1 piece\tok\n", token.surface());
    }
    atomic(&out, |tmp| vocab.save(tmp))?;
    emit(&summary);
    Ok(())
}

#[derive(Serialize)]
struct Encoded<'a> {
    utt: String,
    ids: &'a [u32],
}

fn encode(args: EncodeArgs) -> Result<()> {
    let args = layer!(args, EncodeArgs, [vocab, utterances, out]);
    let vocab = Vocab::load(required(args.vocab, "vocab")?)?;
    let utterances = load_utterances(required(args.utterances, "utterances")?)?;
    let out = required(args.out, "out")?;
    let mut text = String::new();
    for u in &utterances {
        let ids = vocab.encode(&u.items);
        text.push_str(&serde_json::to_string(&Encoded { utt: u.key(), ids: &ids })?);
        text.push('\n');
    }
    atomic_text(&out, &text)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let args = layer!(
        args,
        EvaluateArgs,
        [corpus, reference, hyp, out, tsv, collar, frame_dur, frame_stride, macro_average]
    );
    let defaults = FrameSpec::default();
    let frames = FrameSpec {
        frame_duration: args.frame_dur.unwrap_or(defaults.frame_duration),
        frame_stride: args.frame_stride.unwrap_or(defaults.frame_stride),
    };
    frames.validate()?;
    let collar = match args.collar {
        Some(c) => CollarConfig::new(c)?,
        None => CollarConfig::default(),
    };
    let config = EvalConfig { collar, frames, macro_average: args.macro_average.unwrap_or(false) };
    let corpus = load_corpus(required(args.corpus, "corpus")?)?;
    let references = load_utterances(required(args.reference, "ref")?)?;
    let hypotheses = load_hypotheses(required(args.hyp, "hyp")?)?;
    let report = evaluate_corpus(&corpus, &references, &hypotheses, &config)?;
    if let Some(out) = &args.out {
        atomic_text(out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    if let Some(tsv) = &args.tsv {
        atomic_text(tsv, &report.utterance_tsv())?;
    }
    emit(&report.to_string());
    Ok(())
}

/// Keys of the flat simulation config that configure something other than
/// the corpus generator.
const NOISE_KEYS: [&str; 5] = ["sub_rate", "del_rate", "ins_rate", "token_drop_rate", "frame_jitter"];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimExtras {
    max_dur: Option<f64>,
    tasks: Option<String>,
    frame_dur: Option<f64>,
    frame_stride: Option<f64>,
}

fn split_sim_config(table: toml::Table) -> Result<(SimConfig, NoiseConfig, SimExtras)> {
    let mut sim = toml::Table::new();
    let mut noise = toml::Table::new();
    let mut extras = toml::Table::new();
    for (key, value) in table {
        if NOISE_KEYS.contains(&key.as_str()) {
            noise.insert(key, value);
        } else if key == "noise_seed" {
            noise.insert("seed".into(), value);
        } else if ["max_dur", "tasks", "frame_dur", "frame_stride"].contains(&key.as_str()) {
            extras.insert(key, value);
        } else {
            sim.insert(key, value);
        }
    }
    let bad = |e: toml::de::Error| anyhow::Error::from(Usage(format!("simulation config: {e}")));
    Ok((
        sim.try_into().map_err(bad)?,
        noise.try_into().map_err(bad)?,
        extras.try_into().map_err(bad)?,
    ))
}

fn simulate_cmd(args: SimulateArgs) -> Result<()> {
    let table = match &args.config {
        Some(path) => read_config::<toml::Table>(path)?,
        None => toml::Table::new(),
    };
    let (mut sim, mut noise, extras) = split_sim_config(table)?;
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    if let Some(seed) = args.noise_seed {
        noise.seed = seed;
    }
    if let Some(n) = args.n_conversations {
        sim.n_conversations = n;
    }
    let tasks = match &extras.tasks {
        Some(t) => t.parse()?,
        None => TaskSet::ALL,
    };
    let pack = PackConfig { max_duration: extras.max_dur.unwrap_or(PackConfig::default().max_duration), tasks };
    let defaults = FrameSpec::default();
    let frames = FrameSpec {
        frame_duration: extras.frame_dur.unwrap_or(defaults.frame_duration),
        frame_stride: extras.frame_stride.unwrap_or(defaults.frame_stride),
    };
    let out = simulate(&sim, &pack, &noise, &frames)?;
    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    atomic(&dir.join("corpus.jsonl"), |p| save_corpus(&out.corpus, p))?;
    atomic(&dir.join("utterances.jsonl"), |p| save_utterances(&out.utterances, p))?;
    atomic(&dir.join("hypotheses.jsonl"), |p| save_hypotheses(&out.hypotheses, p))?;
    atomic(&dir.join("edits.jsonl"), |p| save_edit_logs(&out.edit_logs, p))?;
    emit(&format!(
        "{} conversations, {} utterances written to {}",
        out.corpus.len(),
        out.utterances.len(),
        dir.display()
    ));
    Ok(())
}

fn stats(args: StatsArgs) -> Result<()> {
    let args = layer!(args, StatsArgs, [utterances, json]);
    let utterances = load_utterances(required(args.utterances, "utterances")?)?;
    let report = corpus_stats(&utterances);
    if args.json.unwrap_or(false) {
        emit(&serde_json::to_string_pretty(&report)?);
    } else {
        emit(&report.to_string());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::TrainTokenizer(a) => train_tokenizer(a),
        Command::Encode(a) => encode(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Stats(a) => stats(a),
    }
}

/// 2 for I/O failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<convtok::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() || cause.is::<tempfile::PersistError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
