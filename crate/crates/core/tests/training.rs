use std::fs;
use std::path::Path;

use depa::corpus::{distill, encode_pairs, make_synthetic_task, SentencePair, TargetVocabFilter, TaskKind, TaskSpec, Vocabulary};
use depa::model::{greedy_decode, ModelConfig, ModelParams};
use depa::training::{
    train_at_teacher, train_curriculum, train_curriculum_until, CurriculumSchedule, GlancingSchedule, LrSchedule, TrainConfig,
    TrainData, LOG_HEADER,
};

struct Fixture {
    vocab: Vocabulary,
    train: Vec<SentencePair>,
    valid: Vec<SentencePair>,
    model: ModelParams,
}

fn fixture(use_it: bool) -> Fixture {
    let spec = TaskSpec {
        kind: TaskKind::Homograph,
        vocab_size: 16,
        min_len: 2,
        max_len: 6,
        n_pairs: 120,
        seed: 5,
    };
    let raw = make_synthetic_task(&spec).unwrap();
    let vocab = Vocabulary::build(&raw, 1000).unwrap();
    let pairs = encode_pairs(&vocab, &raw).unwrap();
    let (train, valid) = pairs.split_at(100);
    let filter = TargetVocabFilter::build(&vocab, &pairs);
    let cfg = ModelConfig {
        d_model: 16,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        ffn_dim: 32,
        max_offset: 6,
        max_len: 16,
        use_it,
        ..ModelConfig::default()
    };
    Fixture {
        model: ModelParams::init(&cfg, &filter, 9).unwrap(),
        vocab,
        train: train.to_vec(),
        valid: valid.to_vec(),
    }
}

fn config(schedule: &str, steps: u64) -> TrainConfig {
    let mut c = TrainConfig::new(CurriculumSchedule::preset(schedule, steps).unwrap(), 3);
    c.batch_tokens = 64;
    c.checkpoint_interval = 4;
    c.lr = LrSchedule::InverseSqrt { peak: 2e-3, warmup: 5 };
    c
}

impl Fixture {
    fn data(&self) -> TrainData<'_> {
        TrainData {
            train: &self.train,
            valid: &self.valid,
        }
    }
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn phase_budget_and_log_rows() {
    let f = fixture(false);
    let out = train_curriculum(f.model.clone(), f.data(), &config("FBF-NAT", 6), None).unwrap();
    assert_eq!(out.log.last().unwrap().step, 24);
    let phases: Vec<&str> = out.log.iter().map(|r| r.phase.as_str()).collect();
    assert_eq!(phases, ["F", "F", "B", "B", "F", "F", "NAT", "NAT"]);
    assert_eq!(out.log.iter().map(|r| r.step).collect::<Vec<_>>(), [4, 6, 10, 12, 16, 18, 22, 24]);
    for r in &out.log {
        assert!(r.loss.is_finite() && r.loss >= 0.0);
        assert_eq!(r.val_bleu.is_some(), r.phase == "NAT");
    }
    assert!(out.best_step > 18);
}

#[test]
fn training_is_deterministic() {
    let f = fixture(true);
    let cfg = config("FB-NAT", 5);
    let a = train_curriculum(f.model.clone(), f.data(), &cfg, None).unwrap();
    let b = train_curriculum(f.model.clone(), f.data(), &cfg, None).unwrap();
    assert_eq!(a.last.store.fingerprint(), b.last.store.fingerprint());
    assert_eq!(a.log, b.log);
    assert_ne!(a.last.store.fingerprint(), f.model.store.fingerprint());
}

#[test]
fn zero_glancing_equals_plain_training() {
    let f = fixture(false);
    let plain = config("NAT", 8);
    let mut glance = plain.clone();
    glance.glancing = GlancingSchedule::Linear { start: 0.0, end: 0.0 };
    let a = train_curriculum(f.model.clone(), f.data(), &plain, None).unwrap();
    let b = train_curriculum(f.model.clone(), f.data(), &glance, None).unwrap();
    assert_eq!(a.last.store.fingerprint(), b.last.store.fingerprint());
    let mut on = plain.clone();
    on.glancing = GlancingSchedule::Linear { start: 0.5, end: 0.3 };
    let c = train_curriculum(f.model.clone(), f.data(), &on, None).unwrap();
    assert_ne!(a.last.store.fingerprint(), c.last.store.fingerprint());
}

#[test]
fn interrupted_run_resumes_to_identical_artifacts() {
    let f = fixture(true);
    let cfg = config("FB-NAT", 6);
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    let a = train_curriculum(f.model.clone(), f.data(), &cfg, Some(straight.path())).unwrap();
    for stop in [5, 13] {
        train_curriculum_until(f.model.clone(), f.data(), &cfg, Some(resumed.path()), stop).unwrap();
    }
    let b = train_curriculum(f.model.clone(), f.data(), &cfg, Some(resumed.path())).unwrap();
    assert_eq!(b.resumed_from, Some(12));
    let csv = |log: &[depa::training::LogRow]| log.iter().map(|r| r.to_csv()).collect::<Vec<_>>();
    assert_eq!(csv(&a.log), csv(&b.log));
    assert_eq!(a.best.store.fingerprint(), b.best.store.fingerprint());
    assert_eq!(dir_files(straight.path()), dir_files(resumed.path()));
    let csv = fs::read_to_string(straight.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(LOG_HEADER));
    assert_eq!(csv.lines().count(), 1 + a.log.len());
}

#[test]
fn resume_refuses_a_different_config() {
    let f = fixture(false);
    let dir = tempfile::tempdir().unwrap();
    train_curriculum(f.model.clone(), f.data(), &config("NAT", 4), Some(dir.path())).unwrap();
    let mut other = config("NAT", 4);
    other.seed = 4;
    assert!(train_curriculum(f.model.clone(), f.data(), &other, Some(dir.path())).is_err());
}

#[test]
fn optimizer_reset_is_observable() {
    let f = fixture(false);
    let on = config("FB-NAT", 4);
    let mut off = on.clone();
    off.reset_optimizer = false;
    let a = train_curriculum(f.model.clone(), f.data(), &on, None).unwrap();
    let b = train_curriculum(f.model.clone(), f.data(), &off, None).unwrap();
    assert_eq!(a.log[0], b.log[0]);
    assert_ne!(a.last.store.fingerprint(), b.last.store.fingerprint());
}

#[test]
fn distillation_matches_independent_greedy_decodes() {
    let f = fixture(false);
    let teacher = train_at_teacher(f.model.clone(), f.data(), &config("NAT", 10), None).unwrap().best;
    for threads in [1, 3] {
        let kd = distill(&teacher, &f.valid, f.vocab.len(), threads).unwrap();
        assert_eq!(kd.len(), f.valid.len());
        for (p, d) in f.valid.iter().zip(&kd) {
            assert_eq!(d.src, p.src);
            assert_eq!(d.tgt, greedy_decode(&teacher, &p.src).unwrap());
        }
    }
    assert!(distill(&teacher, &f.valid, f.vocab.len() + 1, 1).is_err());
}

#[test]
fn teacher_run_writes_best_checkpoint() {
    let f = fixture(false);
    let dir = tempfile::tempdir().unwrap();
    let out = train_at_teacher(f.model.clone(), f.data(), &config("NAT", 5), Some(dir.path())).unwrap();
    assert!(out.log.iter().all(|r| r.phase == "F" && r.val_bleu.is_none()));
    assert_eq!(out.best_step, 5);
    assert!(dir.path().join("best.ckpt").exists());
    assert!(dir.path().join("F_5.ckpt").exists());
}
