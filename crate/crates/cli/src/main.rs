use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use depa::corpus::{TaskKind, TaskSpec};
use depa::model::MaskKind;
use depa::pipeline::{self, Decoder};

#[derive(Parser)]
#[command(name = "depa", version, about = "Non-autoregressive translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus and its vocabulary.
    MakeData(MakeData),
    /// Train a teacher or a curriculum student from a config file.
    Train(Train),
    /// Replace corpus targets with greedy teacher decodes.
    Distill(Distill),
    /// Translate a source file line by line.
    Translate(Translate),
    /// Score hypotheses against references.
    Eval(Eval),
    /// Cosine-similarity probe or paired bootstrap test.
    Probe(Probe),
    /// Batch-1 decoding latency of a teacher against a student.
    Latency(Latency),
    /// Dump decoder self-attention maps for one sentence pair.
    ExportAttention(ExportAttention),
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Copy,
    Reverse,
    Homograph,
}

#[derive(Args)]
struct MakeData {
    #[arg(long, value_enum)]
    task: Task,
    /// Number of distinct source symbols.
    #[arg(long)]
    vocab: usize,
    /// Sentence length range `MIN:MAX`.
    #[arg(long, value_parser = parse_range)]
    len: (usize, usize),
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Trailing pairs written as the validation split.
    #[arg(long, default_value_t = 0)]
    heldout: usize,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct Train {
    #[arg(long, required_unless_present = "replay", conflicts_with = "replay")]
    config: Option<PathBuf>,
    /// Re-execute the run stored in this directory.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct Distill {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Corpus prefix (`<prefix>.src`, `<prefix>.tgt`).
    #[arg(long)]
    corpus: PathBuf,
    /// Output prefix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Translate {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Autoregressive greedy decoding (for teacher checkpoints).
    #[arg(long)]
    greedy: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Directory for `metrics.txt` and `metrics.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Probe {
    /// Paired bootstrap: hypotheses A, hypotheses B, references.
    #[arg(long, num_args = 3, value_names = ["A", "B", "REFS"], conflicts_with = "cosine")]
    bootstrap: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cosine probe of this checkpoint.
    #[arg(long, requires_all = ["vocab", "data"])]
    cosine: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Corpus prefix for the cosine probe.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct Latency {
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    student: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Directory for `latency.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mask {
    Causal,
    Full,
}

#[derive(Args)]
struct ExportAttention {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    src: String,
    #[arg(long)]
    tgt: String,
    #[arg(long, value_enum, default_value = "full")]
    mask: Mask,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected MIN:MAX")?;
    let a = a.parse().map_err(|_| format!("bad minimum `{a}`"))?;
    let b = b.parse().map_err(|_| format!("bad maximum `{b}`"))?;
    Ok((a, b))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::MakeData(a) => {
            let kind = match a.task {
                Task::Copy => TaskKind::Copy,
                Task::Reverse => TaskKind::Reverse,
                Task::Homograph => TaskKind::Homograph,
            };
            let spec = TaskSpec {
                kind,
                vocab_size: a.vocab,
                min_len: a.len.0,
                max_len: a.len.1,
                n_pairs: a.n,
                seed: a.seed,
            };
            let files = pipeline::make_data(&spec, a.heldout, &a.out, a.force)?;
            println!("train={}", files.train.display());
            if let Some(v) = files.valid {
                println!("valid={}", v.display());
            }
            println!("vocab={}", files.vocab.display());
        }
        Command::Train(a) => {
            let summary = match (a.config, a.replay) {
                (_, Some(src)) => pipeline::replay_run(&src, &a.run_dir)?,
                (Some(cfg), None) => pipeline::train_run(&cfg, &a.run_dir)?,
                (None, None) => unreachable!("clap requires --config or --replay"),
            };
            let o = &summary.outcome;
            println!("run_dir={}", summary.run_dir.display());
            if let Some(step) = o.resumed_from {
                println!("resumed_from={step}");
            }
            println!("steps={}", o.log.last().map_or(0, |r| r.step));
            println!("best_step={}", o.best_step);
            print!("{}", summary.report.to_text());
        }
        Command::Distill(a) => {
            let n = pipeline::distill_corpus(&a.teacher, &a.vocab, &a.corpus, &a.out)?;
            println!("pairs={n}");
        }
        Command::Translate(a) => {
            let decoder = if a.greedy { Decoder::Greedy } else { Decoder::Parallel };
            let n = pipeline::translate_file(&a.checkpoint, &a.vocab, &a.input, &a.output, decoder)?;
            println!("sentences={n}");
        }
        Command::Eval(a) => {
            let r = pipeline::eval_files(&a.hyp, &a.reference, a.out.as_deref())?;
            print!("{}", r.to_text());
        }
        Command::Probe(a) => match (a.bootstrap, a.cosine) {
            (Some(files), None) => {
                let p = pipeline::bootstrap_files(&files[0], &files[1], &files[2], a.trials, a.seed)?;
                println!("p_value={p:.6}");
            }
            (None, Some(ckpt)) => {
                let vocab = a.vocab.context("--cosine needs --vocab")?;
                let data = a.data.context("--cosine needs --data")?;
                let r = pipeline::probe_checkpoint(&ckpt, &vocab, &data)?;
                println!("cosine={:.6}\nsamples={}\nskipped={}", r.mean, r.samples, r.skipped);
            }
            _ => return Err(depa::Error::Usage("probe needs --bootstrap A B REFS or --cosine CKPT".into()).into()),
        },
        Command::Latency(a) => {
            let r = pipeline::latency_files(&a.teacher, &a.student, &a.vocab, &a.input)?;
            if let Some(dir) = a.out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("latency.txt"), r.to_text())?;
            }
            print!("{}", r.to_text());
        }
        Command::ExportAttention(a) => {
            let kind = match a.mask {
                Mask::Causal => MaskKind::Causal,
                Mask::Full => MaskKind::Full,
            };
            let dump = pipeline::export_attention_files(&a.checkpoint, &a.vocab, &a.src, &a.tgt, kind, &a.out)?;
            println!("layers={}\nwidth={}", dump.maps.len(), dump.width());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<depa::Error>() {
        Some(e) => e.exit_code() as u8,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
