//! End-to-end commands behind the command-line tool: data generation,
//! training runs with self-contained run directories, distillation,
//! translation, evaluation, probes and latency measurement.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, RunMode};
use crate::corpus::{
    corpus_paths, distill, encode_pairs, make_synthetic_task, read_lines, read_parallel, write_lines, write_parallel,
    SentencePair, TargetVocabFilter, TaskSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{
    cosine_probe, export_attention, measure_latency, paired_bootstrap, AttentionDump, LatencyReport, MetricReport,
    ProbeResult,
};
use crate::model::{greedy_decode_batch, load_checkpoint, translate_batch, MaskKind, ModelParams};
use crate::training::{train_at_teacher, train_curriculum, TrainData, TrainOutcome};

pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const INPUTS_DIR: &str = "inputs";
pub const THREADS_ENV: &str = "DEPA_THREADS";

/// Worker threads allowed by `DEPA_THREADS` (default 1).
pub fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Files written by [`make_data`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataFiles {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub vocab: PathBuf,
}

/// Generates a synthetic task into `out`: `train.src/.tgt`, optionally the
/// last `heldout` pairs as `valid.src/.tgt`, and `vocab.txt` built over all
/// pairs. Existing files are kept unless `force`.
pub fn make_data(spec: &TaskSpec, heldout: usize, out: &Path, force: bool) -> Result<DataFiles> {
    if heldout >= spec.n_pairs {
        return Err(Error::usage(format!(
            "heldout ({heldout}) must be smaller than the number of pairs ({})",
            spec.n_pairs
        )));
    }
    let files = DataFiles {
        train: out.join("train"),
        valid: (heldout > 0).then(|| out.join("valid")),
        vocab: out.join("vocab.txt"),
    };
    let mut targets = vec![files.vocab.clone()];
    for prefix in std::iter::once(&files.train).chain(files.valid.as_ref()) {
        let (s, t) = corpus_paths(prefix);
        targets.extend([s, t]);
    }
    if !force {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            return Err(Error::usage(format!("{} exists (pass --force to overwrite)", existing.display())));
        }
    }
    let pairs = make_synthetic_task(spec)?;
    let vocab = Vocabulary::build(&pairs, usize::MAX)?;
    fs::create_dir_all(out)?;
    let (train, valid) = pairs.split_at(pairs.len() - heldout);
    write_parallel(&files.train, train)?;
    if let Some(v) = &files.valid {
        write_parallel(v, valid)?;
    }
    vocab.write(&files.vocab)?;
    Ok(files)
}

/// Encoded corpus from `<prefix>.src/.tgt`.
pub fn load_corpus(prefix: &Path, vocab: &Vocabulary) -> Result<Vec<SentencePair>> {
    encode_pairs(vocab, &read_parallel(prefix)?)
}

fn decode_lines(vocab: &Vocabulary, seqs: &[Vec<usize>]) -> Vec<String> {
    seqs.iter().map(|s| vocab.decode(s)).collect()
}

fn check_vocab(m: &ModelParams, vocab: &Vocabulary, what: &Path) -> Result<()> {
    if m.vocab_size() != vocab.len() {
        return Err(Error::config(format!(
            "{} expects a vocabulary of {} entries, got {}",
            what.display(),
            m.vocab_size(),
            vocab.len()
        )));
    }
    Ok(())
}

/// Runs `f` over contiguous shards of `items` on up to `threads` workers,
/// concatenating results in input order.
fn sharded<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&[T]) -> Result<Vec<U>> + Sync) -> Result<Vec<U>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let threads = threads.clamp(1, items.len());
    let shard = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = items.chunks(shard).map(|c| s.spawn(move || f(c))).collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Where a run reads its data from.
#[derive(Clone, Debug)]
struct RunInputs {
    train: PathBuf,
    valid: PathBuf,
    vocab: PathBuf,
    teacher: Option<PathBuf>,
}

/// Outcome of [`train_run`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub outcome: TrainOutcome,
    /// Scores of the selected parameters on the validation set.
    pub report: MetricReport,
}

fn copy_input(from: &Path, to: &Path) -> Result<()> {
    let bytes = fs::read(from).map_err(|e| Error::input(format!("cannot read {}: {e}", from.display())))?;
    if to.exists() && fs::read(to)? != bytes {
        return Err(Error::config(format!(
            "{} changed since the run started; use a fresh run directory",
            from.display()
        )));
    }
    fs::write(to, bytes)?;
    Ok(())
}

/// Copies every input of `cfg` into `<run>/inputs` and returns the copies.
fn snapshot_inputs(cfg: &RunConfig, run_dir: &Path) -> Result<RunInputs> {
    let dir = run_dir.join(INPUTS_DIR);
    fs::create_dir_all(&dir)?;
    let copy_corpus = |from: &Path, name: &str| -> Result<PathBuf> {
        let to = dir.join(name);
        let (fs_, ft) = corpus_paths(from);
        let (ts, tt) = corpus_paths(&to);
        copy_input(&fs_, &ts)?;
        copy_input(&ft, &tt)?;
        Ok(to)
    };
    let train = copy_corpus(&cfg.train, "train")?;
    let valid = copy_corpus(&cfg.valid, "valid")?;
    let vocab = dir.join("vocab.txt");
    copy_input(&cfg.vocab, &vocab)?;
    let teacher = match &cfg.teacher {
        Some(t) => {
            let to = dir.join("teacher.ckpt");
            copy_input(t, &to)?;
            Some(to)
        }
        None => None,
    };
    Ok(RunInputs {
        train,
        valid,
        vocab,
        teacher,
    })
}

fn replay_inputs(run_dir: &Path, cfg: &RunConfig) -> RunInputs {
    let dir = run_dir.join(INPUTS_DIR);
    RunInputs {
        train: dir.join("train"),
        valid: dir.join("valid"),
        vocab: dir.join("vocab.txt"),
        teacher: cfg.teacher.as_ref().map(|_| dir.join("teacher.ckpt")),
    }
}

/// Trains per the config at `config_path` into `run_dir`.
///
/// The run directory receives a byte-identical `config.txt`, copies of all
/// inputs under `inputs/`, the metric log, checkpoints, the distilled corpus
/// (with `use_kd`), `valid.hyp` and `report.txt`. An existing run directory
/// with the same config resumes from its latest checkpoint.
pub fn train_run(config_path: &Path, run_dir: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", config_path.display())))?;
    let cfg = RunConfig::load(config_path)?;
    prepare_run_dir(run_dir, &text)?;
    let inputs = snapshot_inputs(&cfg, run_dir)?;
    execute(&cfg, &inputs, run_dir)
}

/// Re-executes the run stored in `source` into the fresh directory `out`,
/// using only the snapshot config and the copied inputs.
pub fn replay_run(source: &Path, out: &Path) -> Result<RunSummary> {
    let snapshot = source.join(CONFIG_SNAPSHOT);
    let text = fs::read_to_string(&snapshot)
        .map_err(|e| Error::config(format!("{} is not a run directory: {e}", source.display())))?;
    let cfg = RunConfig::from_text(&text, source)?;
    if out.join(CONFIG_SNAPSHOT).exists() {
        return Err(Error::usage(format!("{} already holds a run", out.display())));
    }
    let inputs = replay_inputs(source, &cfg);
    prepare_run_dir(out, &text)?;
    let copied = RunConfig {
        train: inputs.train.clone(),
        valid: inputs.valid.clone(),
        vocab: inputs.vocab.clone(),
        teacher: inputs.teacher.clone(),
        ..cfg.clone()
    };
    let inputs = snapshot_inputs(&copied, out)?;
    execute(&cfg, &inputs, out)
}

fn prepare_run_dir(run_dir: &Path, text: &str) -> Result<()> {
    fs::create_dir_all(run_dir)?;
    let snap = run_dir.join(CONFIG_SNAPSHOT);
    if snap.exists() {
        if fs::read_to_string(&snap)? != text {
            return Err(Error::config(format!(
                "{} holds a run with a different config",
                run_dir.display()
            )));
        }
    } else {
        fs::write(&snap, text)?;
    }
    Ok(())
}

fn execute(cfg: &RunConfig, inputs: &RunInputs, run_dir: &Path) -> Result<RunSummary> {
    let vocab = Vocabulary::read(&inputs.vocab)?;
    let mut train = load_corpus(&inputs.train, &vocab)?;
    let valid = load_corpus(&inputs.valid, &vocab)?;
    if cfg.use_kd {
        let path = inputs.teacher.as_ref().expect("use_kd requires a teacher");
        let teacher = load_checkpoint(path)?.params;
        check_vocab(&teacher, &vocab, path)?;
        let prefix = run_dir.join("distilled");
        let (s, t) = corpus_paths(&prefix);
        train = if s.exists() && t.exists() {
            load_corpus(&prefix, &vocab)?
        } else {
            let d = distill(&teacher, &train, vocab.len(), threads_from_env())?;
            let lines: Vec<(String, String)> = d.iter().map(|p| (vocab.decode(&p.src), vocab.decode(&p.tgt))).collect();
            write_parallel(&prefix, &lines)?;
            d
        };
    }
    let filter = TargetVocabFilter::build(&vocab, &train);
    let init = ModelParams::init(&cfg.model, &filter, cfg.train_config.seed)?;
    let data = TrainData {
        train: &train,
        valid: &valid,
    };
    let outcome = match cfg.mode {
        RunMode::Teacher => train_at_teacher(init, data, &cfg.train_config, Some(run_dir))?,
        RunMode::Student => train_curriculum(init, data, &cfg.train_config, Some(run_dir))?,
    };
    let srcs: Vec<Vec<usize>> = valid.iter().map(|p| p.src.clone()).collect();
    let hyps = match cfg.mode {
        RunMode::Teacher => greedy_decode_batch(&outcome.best, &srcs)?,
        RunMode::Student => translate_batch(&outcome.best, &srcs, outcome.best.config.use_it)?,
    };
    let hyp_lines = decode_lines(&vocab, &hyps);
    let refs: Vec<String> = valid.iter().map(|p| vocab.decode(&p.tgt)).collect();
    write_lines(&run_dir.join("valid.hyp"), &hyp_lines)?;
    let report = MetricReport::compute(&hyp_lines, &refs)?;
    fs::write(run_dir.join("report.txt"), report.to_text())?;
    Ok(RunSummary {
        run_dir: run_dir.to_path_buf(),
        outcome,
        report,
    })
}

/// Replaces the targets of `<corpus>` with greedy teacher decodes, writing
/// `<out>.src/.tgt`. Returns the number of pairs.
pub fn distill_corpus(teacher: &Path, vocab: &Path, corpus: &Path, out: &Path) -> Result<usize> {
    let vocab = Vocabulary::read(vocab)?;
    let t = load_checkpoint(teacher)?.params;
    check_vocab(&t, &vocab, teacher)?;
    let pairs = load_corpus(corpus, &vocab)?;
    let d = distill(&t, &pairs, vocab.len(), threads_from_env())?;
    let lines: Vec<(String, String)> = d.iter().map(|p| (vocab.decode(&p.src), vocab.decode(&p.tgt))).collect();
    write_parallel(out, &lines)?;
    Ok(lines.len())
}

/// Decoding strategy for [`translate_file`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoder {
    /// One parallel pass with the predicted length.
    Parallel,
    /// Token-by-token greedy decoding with the causal decoder.
    Greedy,
}

/// Translates every line of `input` into `output`, one hypothesis per line.
pub fn translate_file(checkpoint: &Path, vocab: &Path, input: &Path, output: &Path, decoder: Decoder) -> Result<usize> {
    let vocab = Vocabulary::read(vocab)?;
    let m = load_checkpoint(checkpoint)?.params;
    check_vocab(&m, &vocab, checkpoint)?;
    let lines = read_lines(input)?;
    let srcs: Vec<Vec<usize>> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let ids = vocab.encode(l);
            if ids.is_empty() {
                Err(Error::input(format!("{} line {} is empty", input.display(), i + 1)))
            } else {
                Ok(ids)
            }
        })
        .collect::<Result<_>>()?;
    let hyps = sharded(&srcs, threads_from_env(), |chunk| {
        let chunk = chunk.to_vec();
        match decoder {
            Decoder::Parallel => translate_batch(&m, &chunk, m.config.use_it),
            Decoder::Greedy => greedy_decode_batch(&m, &chunk),
        }
    })?;
    write_lines(output, &decode_lines(&vocab, &hyps))?;
    Ok(hyps.len())
}

fn aligned(hyp: &Path, reference: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let h = read_lines(hyp)?;
    let r = read_lines(reference)?;
    if h.len() != r.len() {
        return Err(Error::input(format!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            h.len(),
            reference.display(),
            r.len()
        )));
    }
    Ok((h, r))
}

/// Scores a hypothesis file against a reference file; with `out`, writes
/// `metrics.txt` and `metrics.csv` there.
pub fn eval_files(hyp: &Path, reference: &Path, out: Option<&Path>) -> Result<MetricReport> {
    let (h, r) = aligned(hyp, reference)?;
    let report = MetricReport::compute(&h, &r)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.txt"), report.to_text())?;
        fs::write(dir.join("metrics.csv"), report.to_csv())?;
    }
    Ok(report)
}

/// Paired bootstrap p-value of system B against system A.
pub fn bootstrap_files(a: &Path, b: &Path, reference: &Path, trials: usize, seed: u64) -> Result<f64> {
    let (ha, r) = aligned(a, reference)?;
    let (hb, _) = aligned(b, reference)?;
    paired_bootstrap(&ha, &hb, &r, trials, seed)
}

/// Cosine probe of a checkpoint on the corpus at `data`; the input
/// transformation is probed when the model was trained with it.
pub fn probe_checkpoint(checkpoint: &Path, vocab: &Path, data: &Path) -> Result<ProbeResult> {
    let vocab = Vocabulary::read(vocab)?;
    let m = load_checkpoint(checkpoint)?.params;
    check_vocab(&m, &vocab, checkpoint)?;
    let pairs = load_corpus(data, &vocab)?;
    cosine_probe(&m, &pairs, m.config.use_it)
}

/// Batch-1 latency of a teacher (greedy) against a student (parallel).
pub fn latency_files(teacher: &Path, student: &Path, vocab: &Path, input: &Path) -> Result<LatencyReport> {
    let vocab = Vocabulary::read(vocab)?;
    let at = load_checkpoint(teacher)?.params;
    let nat = load_checkpoint(student)?.params;
    check_vocab(&at, &vocab, teacher)?;
    check_vocab(&nat, &vocab, student)?;
    let srcs: Vec<Vec<usize>> = read_lines(input)?
        .iter()
        .map(|l| vocab.encode(l))
        .filter(|s| !s.is_empty())
        .collect();
    measure_latency(&at, &nat, &srcs)
}

/// Writes the decoder self-attention of one sentence pair to `out`.
pub fn export_attention_files(
    checkpoint: &Path,
    vocab: &Path,
    src: &str,
    tgt: &str,
    kind: MaskKind,
    out: &Path,
) -> Result<AttentionDump> {
    let vocab = Vocabulary::read(vocab)?;
    let m = load_checkpoint(checkpoint)?.params;
    check_vocab(&m, &vocab, checkpoint)?;
    let pair = SentencePair::new(vocab.encode(src), vocab.encode(tgt), vocab.len())?;
    export_attention(&m, &pair, kind, out)
}
