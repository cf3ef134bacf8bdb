use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::corpus::{make_batches, Batch, SentencePair};
use crate::error::{Error, Result};
use crate::eval::bleu_tokens;
use crate::model::{load_checkpoint, save_checkpoint, translate_batch, ModelParams};
use crate::numerics::rng::hash_key;
use crate::numerics::{adam_step, AdamState, Graph};
use crate::training::loss::{phase_loss, StepOptions};
use crate::training::phases::{make_phase_batch, make_teacher_batch, PhaseKind};
use crate::training::schedule::lr_at;
use crate::training::TrainConfig;

pub const LOG_HEADER: &str = "step,phase,loss,lr,val_bleu";
const LOG_FILE: &str = "metrics.csv";
const BEST_FILE: &str = "best.ckpt";

/// Training and validation pairs.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a [SentencePair],
    pub valid: &'a [SentencePair],
}

/// One row of the metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    /// Global optimizer steps completed.
    pub step: u64,
    pub phase: String,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub lr: f64,
    pub val_bleu: Option<f64>,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let bleu = self.val_bleu.map(|b| format!("{b:.4}")).unwrap_or_default();
        format!("{},{},{:.6},{:.6e},{}", self.step, self.phase, self.loss, self.lr, bleu)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::input(format!("malformed metric row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        Ok(LogRow {
            step: f[0].parse().map_err(|_| bad())?,
            phase: f[1].to_string(),
            loss: f[2].parse().map_err(|_| bad())?,
            lr: f[3].parse().map_err(|_| bad())?,
            val_bleu: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| bad())?) },
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Selected parameters: best validation score in the final NAT phase
    /// (the last parameters for teachers or without validation data).
    pub best: ModelParams,
    pub last: ModelParams,
    pub log: Vec<LogRow>,
    pub best_step: u64,
    pub best_bleu: Option<f64>,
    /// Global step a resumed run restarted from.
    pub resumed_from: Option<u64>,
}

/// Runs every phase of `cfg.schedule` in order on the same parameters.
pub fn train_curriculum(init: ModelParams, data: TrainData<'_>, cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(init, data, cfg, run_dir, false)?.run(u64::MAX)
}

/// Like [`train_curriculum`] but stops once `stop_at` global steps are
/// done, as an interrupted run would. Rerunning on the same run directory
/// resumes from the latest checkpoint.
pub fn train_curriculum_until(
    init: ModelParams,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
    stop_at: u64,
) -> Result<TrainOutcome> {
    Trainer::new(init, data, cfg, run_dir, false)?.run(stop_at)
}

/// Trains the autoregressive teacher: one causal phase of
/// `steps_per_phase` steps on EOS-terminated targets.
pub fn train_at_teacher(init: ModelParams, data: TrainData<'_>, cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(init, data, cfg, run_dir, true)?.run(u64::MAX)
}

/// Deterministic batch order of one phase: epoch `e` is a shuffle keyed by
/// `(seed, phase, e)`.
struct BatchStream<'a> {
    pairs: &'a [SentencePair],
    tokens: usize,
    seed: u64,
    phase: usize,
    epoch: u64,
    batches: Vec<Batch>,
    next: usize,
}

impl<'a> BatchStream<'a> {
    fn new(pairs: &'a [SentencePair], tokens: usize, seed: u64, phase: usize) -> Result<Self> {
        let mut s = BatchStream {
            pairs,
            tokens,
            seed,
            phase,
            epoch: 0,
            batches: Vec::new(),
            next: 0,
        };
        s.load()?;
        Ok(s)
    }

    fn load(&mut self) -> Result<()> {
        let key = hash_key(&[self.seed, self.phase as u64, self.epoch]);
        self.batches = make_batches(self.pairs, self.tokens, key)?;
        self.next = 0;
        Ok(())
    }

    fn next_batch(&mut self) -> Result<&Batch> {
        if self.next == self.batches.len() {
            self.epoch += 1;
            self.load()?;
        }
        self.next += 1;
        Ok(&self.batches[self.next - 1])
    }

    fn skip(&mut self, n: u64) -> Result<()> {
        for _ in 0..n {
            self.next_batch()?;
        }
        Ok(())
    }
}

struct Best {
    params: ModelParams,
    step: u64,
    bleu: Option<f64>,
    loss: f64,
}

struct Trainer<'a> {
    params: ModelParams,
    data: TrainData<'a>,
    cfg: &'a TrainConfig,
    run_dir: Option<PathBuf>,
    teacher: bool,
    phases: Vec<PhaseKind>,
    adam: AdamState,
    log: Vec<LogRow>,
    best: Option<Best>,
    start: u64,
    resumed_from: Option<u64>,
    fingerprint: String,
}

fn config_fingerprint(cfg: &TrainConfig, teacher: bool, params: &ModelParams) -> String {
    let mut text = cfg.to_key_values().to_text();
    text.push_str(&params.config.to_key_values().to_text());
    text.push_str(if teacher { "kind=teacher\n" } else { "kind=student\n" });
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Step-numbered checkpoints in `dir`, sorted by step.
fn step_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_name().and_then(|s| s.to_str()).and_then(|s| s.strip_suffix(".ckpt")) else {
            continue;
        };
        if let Some((tag, step)) = stem.rsplit_once('_') {
            if tag.parse::<PhaseKind>().is_ok() {
                if let Ok(step) = step.parse::<u64>() {
                    out.push((step, path));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

impl<'a> Trainer<'a> {
    fn new(params: ModelParams, data: TrainData<'a>, cfg: &'a TrainConfig, run_dir: Option<&Path>, teacher: bool) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        if data.train.is_empty() {
            return Err(Error::input("training corpus is empty"));
        }
        let phases = if teacher { vec![PhaseKind::Forward] } else { cfg.schedule.phases.clone() };
        let fingerprint = config_fingerprint(cfg, teacher, &params);
        let mut t = Trainer {
            params,
            data,
            cfg,
            run_dir: run_dir.map(Path::to_path_buf),
            teacher,
            phases,
            adam: AdamState::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
            log: Vec::new(),
            best: None,
            start: 0,
            resumed_from: None,
            fingerprint,
        };
        if let Some(dir) = &t.run_dir {
            fs::create_dir_all(dir)?;
            t.resume()?;
        }
        Ok(t)
    }

    fn total_steps(&self) -> u64 {
        self.phases.len() as u64 * self.cfg.schedule.steps_per_phase
    }

    fn dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    /// Restores the latest step checkpoint of the run directory, if any.
    fn resume(&mut self) -> Result<()> {
        let dir = self.run_dir.clone().expect("resume needs a run directory");
        let Some((_, path)) = step_checkpoints(&dir)?.pop() else {
            return Ok(());
        };
        let ck = load_checkpoint(&path)?;
        if ck.meta.get("train.fingerprint") != Some(self.fingerprint.as_str()) {
            return Err(Error::config(format!(
                "{} was written by a different configuration; use a fresh run directory",
                path.display()
            )));
        }
        let step: u64 = ck.meta.require("train.step")?;
        if step > self.total_steps() {
            return Err(Error::Checkpoint(format!("{} is past the end of the schedule", path.display())));
        }
        self.params = ck.params;
        self.adam = ck
            .adam
            .ok_or_else(|| Error::Checkpoint(format!("{} lacks optimizer state", path.display())))?;
        if let Some(best_step) = ck.meta.get("best.step") {
            let best = load_checkpoint(&dir.join(BEST_FILE))?;
            self.best = Some(Best {
                params: best.params,
                step: best_step.parse().map_err(|_| Error::Checkpoint("bad best.step".into()))?,
                bleu: ck.meta.get("best.bleu").map(|b| b.parse()).transpose().map_err(|_| Error::Checkpoint("bad best.bleu".into()))?,
                loss: ck.meta.require("best.loss")?,
            });
        }
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            let text = fs::read_to_string(&log_path)?;
            for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
                let row = LogRow::parse(line)?;
                if row.step <= step {
                    self.log.push(row);
                }
            }
        }
        self.write_log()?;
        self.start = step;
        self.resumed_from = Some(step);
        Ok(())
    }

    fn write_log(&self) -> Result<()> {
        if let Some(dir) = self.dir() {
            let mut text = format!("{LOG_HEADER}\n");
            for row in &self.log {
                text.push_str(&row.to_csv());
                text.push('\n');
            }
            fs::write(dir.join(LOG_FILE), text)?;
        }
        Ok(())
    }

    fn append_log(&self, row: &LogRow) -> Result<()> {
        if let Some(dir) = self.dir() {
            let path = dir.join(LOG_FILE);
            let fresh = !path.exists();
            let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(f, "{LOG_HEADER}")?;
            }
            writeln!(f, "{}", row.to_csv())?;
        }
        Ok(())
    }

    fn meta(&self, step: u64) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("train.step", step);
        kv.set("train.fingerprint", &self.fingerprint);
        if let Some(b) = &self.best {
            kv.set("best.step", b.step);
            kv.set("best.loss", b.loss);
            if let Some(bleu) = b.bleu {
                kv.set("best.bleu", bleu);
            }
        }
        kv
    }

    fn validate_bleu(&self) -> Result<Option<f64>> {
        let limit = match self.cfg.valid_limit {
            0 => self.data.valid.len(),
            n => n.min(self.data.valid.len()),
        };
        if limit == 0 {
            return Ok(None);
        }
        let pairs = &self.data.valid[..limit];
        let srcs: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.clone()).collect();
        let refs: Vec<Vec<usize>> = pairs.iter().map(|p| p.tgt.clone()).collect();
        let hyps = translate_batch(&self.params, &srcs, self.params.config.use_it)?;
        Ok(Some(bleu_tokens(&hyps, &refs, 4)?))
    }

    fn one_step(&mut self, phase: PhaseKind, batch: &Batch, global: u64, in_phase: u64) -> Result<f64> {
        let pb = if self.teacher { make_teacher_batch(batch)? } else { make_phase_batch(phase, batch)? };
        let use_it = self.params.config.use_it && (phase == PhaseKind::Nat || self.cfg.it_in_pretraining);
        let opts = StepOptions {
            use_it,
            length_weight: self.cfg.length_weight,
            glancing_ratio: if phase == PhaseKind::Nat {
                self.cfg.glancing.ratio_at(in_phase, self.cfg.schedule.steps_per_phase)
            } else {
                0.0
            },
            glancing_key: vec![self.cfg.seed, global, 0x6c61],
        };
        let lr = lr_at(&self.cfg.lr, in_phase + 1);
        let (loss, grads) = {
            let mut g = Graph::training(self.cfg.seed, global);
            let nodes = phase_loss(&mut g, &self.params, &pb, &opts)?;
            let loss = g.value(nodes.loss).item() as f64;
            (loss, g.backward(nodes.loss)?)
        };
        if !loss.is_finite() || loss < 0.0 {
            return Err(Error::NonFinite("training loss"));
        }
        adam_step(&mut self.params.store, &grads, &mut self.adam, lr as f32)?;
        Ok(loss)
    }

    fn run(mut self, stop_at: u64) -> Result<TrainOutcome> {
        let spp = self.cfg.schedule.steps_per_phase;
        let total = self.total_steps();
        let stop = stop_at.min(total);
        let final_phase = self.phases.len() - 1;
        let mut global = self.start;
        let (mut loss_sum, mut loss_n) = (0.0, 0u64);
        'outer: while global < stop {
            let (p, k0) = ((global / spp) as usize, global % spp);
            let phase = self.phases[p];
            let mut stream = BatchStream::new(self.data.train, self.cfg.batch_tokens, self.cfg.seed, p)?;
            stream.skip(k0)?;
            if k0 == 0 && (p == 0 || self.cfg.reset_optimizer) {
                self.adam.reset();
            }
            for k in k0..spp {
                let batch = stream.next_batch()?.clone();
                loss_sum += self.one_step(phase, &batch, global, k)?;
                loss_n += 1;
                global += 1;
                let done = k + 1;
                if done % self.cfg.checkpoint_interval != 0 && done != spp {
                    if global == stop {
                        break 'outer;
                    }
                    continue;
                }
                let select = !self.teacher && p == final_phase;
                let val_bleu = if select { self.validate_bleu()? } else { None };
                let row = LogRow {
                    step: global,
                    phase: phase.tag().to_string(),
                    loss: loss_sum / loss_n as f64,
                    lr: lr_at(&self.cfg.lr, done),
                    val_bleu,
                };
                (loss_sum, loss_n) = (0.0, 0);
                self.append_log(&row)?;
                let improved = select
                    && match (&self.best, val_bleu) {
                        (None, _) => true,
                        (Some(b), Some(s)) => s > b.bleu.unwrap_or(f64::NEG_INFINITY) || (Some(s) == b.bleu && row.loss < b.loss),
                        (Some(b), None) => row.loss < b.loss,
                    };
                if improved {
                    self.best = Some(Best {
                        params: self.params.clone(),
                        step: global,
                        bleu: val_bleu,
                        loss: row.loss,
                    });
                }
                self.log.push(row);
                if let Some(dir) = self.dir() {
                    let meta = self.meta(global);
                    if improved {
                        save_checkpoint(&dir.join(BEST_FILE), &self.params, None, &meta)?;
                    }
                    let name = format!("{}_{global}.ckpt", phase.tag());
                    save_checkpoint(&dir.join(name), &self.params, Some(&self.adam), &meta)?;
                }
                if global == stop {
                    break 'outer;
                }
            }
        }
        let finished = global == total;
        let best = match self.best.take() {
            Some(b) if !self.teacher || !finished => b,
            _ => {
                let b = Best {
                    params: self.params.clone(),
                    step: global,
                    bleu: None,
                    loss: self.log.last().map(|r| r.loss).unwrap_or(f64::NAN),
                };
                if let (Some(dir), true) = (self.dir(), finished) {
                    save_checkpoint(&dir.join(BEST_FILE), &b.params, None, &self.meta(total))?;
                }
                b
            }
        };
        Ok(TrainOutcome {
            best: best.params,
            last: self.params,
            log: self.log,
            best_step: best.step,
            best_bleu: best.bleu,
            resumed_from: self.resumed_from,
        })
    }
}
