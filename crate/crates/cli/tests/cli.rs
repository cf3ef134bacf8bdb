use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn depa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depa"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to launch depa")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = depa(dir, args);
    assert!(
        out.status.success(),
        "depa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}` in {stdout}"))
}

fn make_data(dir: &Path, task: &str, out: &str) {
    ok(
        dir,
        &["make-data", "--task", task, "--vocab", "16", "--len", "2:6", "--n", "120", "--seed", "4", "--out", out, "--heldout", "20"],
    );
}

const MODEL: &str = "d_model=16\nn_heads=2\nffn_dim=32\nenc_layers=1\ndec_layers=1\nbatch_tokens=128\nseed=2\n";

fn teacher(dir: &Path) {
    make_data(dir, "copy", "data");
    fs::write(
        dir.join("teacher.cfg"),
        format!("mode=teacher\ntrain=data/train\nvalid=data/valid\nvocab=data/vocab.txt\nsteps_per_phase=12\ncheckpoint_interval=6\n{MODEL}"),
    )
    .unwrap();
    ok(dir, &["train", "--config", "teacher.cfg", "--run-dir", "runs/t"]);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn make_data_is_deterministic_and_refuses_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    make_data(d, "homograph", "a");
    make_data(d, "homograph", "b");
    assert_eq!(files(&d.join("a")), files(&d.join("b")));
    assert_eq!(fs::read_to_string(d.join("a/train.src")).unwrap().lines().count(), 100);
    assert_eq!(fs::read_to_string(d.join("a/valid.tgt")).unwrap().lines().count(), 20);
    let again = depa(d, &["make-data", "--task", "copy", "--vocab", "16", "--len", "2:6", "--n", "10", "--seed", "1", "--out", "a"]);
    assert_eq!(again.status.code(), Some(2));
    ok(d, &["make-data", "--task", "copy", "--vocab", "16", "--len", "2:6", "--n", "10", "--seed", "1", "--out", "a", "--force"]);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    make_data(d, "copy", "data");
    fs::write(d.join("bad.cfg"), "train=data/train\nvalid=data/valid\nvocab=data/vocab.txt\nseed=1\nlearning_rat=0.1\n").unwrap();
    let out = depa(d, &["train", "--config", "bad.cfg", "--run-dir", "r"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn eval_of_identical_files_is_perfect_and_misalignment_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("h"), "a b c\nd e\n").unwrap();
    fs::write(d.join("short"), "a b c\n").unwrap();
    let out = ok(d, &["eval", "--hyp", "h", "--ref", "h", "--out", "m"]);
    assert_eq!(value(&out, "bleu"), "100.0000");
    assert_eq!(value(&out, "chrf"), "100.0000");
    assert!(d.join("m/metrics.txt").exists() && d.join("m/metrics.csv").exists());
    let bad = depa(d, &["eval", "--hyp", "h", "--ref", "short"]);
    assert_eq!(bad.status.code(), Some(3));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains('2') && err.contains('1'), "{err}");
}

#[test]
fn bootstrap_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("a"), "a b c\nd e f\ng h\na a\n").unwrap();
    fs::write(d.join("b"), "a b d\nd e f\ng g\na b\n").unwrap();
    fs::write(d.join("r"), "a b c\nd e f\ng h\na b\n").unwrap();
    let args = ["probe", "--bootstrap", "a", "b", "r", "--trials", "1000", "--seed", "1"];
    let p = ok(d, &args);
    assert_eq!(p, ok(d, &args));
    let same = ok(d, &["probe", "--bootstrap", "a", "a", "r"]);
    assert_eq!(value(&same, "p_value"), "1.000000");
    let few = depa(d, &["probe", "--bootstrap", "a", "b", "r", "--trials", "10"]);
    assert_eq!(few.status.code(), Some(2));
}

#[test]
fn teacher_pipeline_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    teacher(d);
    let run = d.join("runs/t");
    for f in ["best.ckpt", "F_6.ckpt", "F_12.ckpt", "metrics.csv", "config.txt", "report.txt", "valid.hyp"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    fs::write(d.join("empty.src"), "").unwrap();
    ok(d, &["translate", "--checkpoint", "runs/t/best.ckpt", "--vocab", "data/vocab.txt", "--input", "empty.src", "--output", "empty.hyp", "--greedy"]);
    assert_eq!(fs::read(d.join("empty.hyp")).unwrap(), b"");

    for out in ["g1", "g2"] {
        ok(d, &["translate", "--checkpoint", "runs/t/best.ckpt", "--vocab", "data/vocab.txt", "--input", "data/valid.src", "--output", out, "--greedy"]);
    }
    assert_eq!(fs::read(d.join("g1")).unwrap(), fs::read(d.join("g2")).unwrap());
    assert_eq!(fs::read_to_string(d.join("g1")).unwrap().lines().count(), 20);

    let n = ok(d, &["distill", "--teacher", "runs/t/best.ckpt", "--vocab", "data/vocab.txt", "--corpus", "data/valid", "--out", "kd"]);
    assert_eq!(value(&n, "pairs"), "20");
    assert_eq!(fs::read(d.join("kd.tgt")).unwrap(), fs::read(d.join("g1")).unwrap());

    let lat = ok(d, &["latency", "--teacher", "runs/t/best.ckpt", "--student", "runs/t/best.ckpt", "--vocab", "data/vocab.txt", "--input", "data/valid.src", "--out", "lat"]);
    let n: f64 = value(&lat, "n_sentences").parse().unwrap();
    let mean: f64 = value(&lat, "at_mean_s").parse().unwrap();
    let total: f64 = value(&lat, "at_total_s").parse().unwrap();
    assert!((total - mean * n).abs() / total < 0.05, "{lat}");
    assert!(d.join("lat/latency.txt").exists());

    let src = fs::read_to_string(d.join("data/valid.src")).unwrap();
    let tgt = fs::read_to_string(d.join("data/valid.tgt")).unwrap();
    let (s, t) = (src.lines().next().unwrap(), tgt.lines().next().unwrap());
    let att = ok(d, &["export-attention", "--checkpoint", "runs/t/best.ckpt", "--vocab", "data/vocab.txt", "--src", s, "--tgt", t, "--mask", "causal", "--out", "att"]);
    assert_eq!(value(&att, "width"), t.split(' ').count().to_string());
    assert!(d.join("att/attn_l0_h1.csv").exists());

    fs::write(d.join("other_vocab.txt"), "<pad>\n<s>\n</s>\n<unk>\nx\n").unwrap();
    let mismatch = depa(d, &["translate", "--checkpoint", "runs/t/best.ckpt", "--vocab", "other_vocab.txt", "--input", "data/valid.src", "--output", "x"]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn student_run_replays_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    teacher(d);
    fs::write(
        d.join("student.cfg"),
        format!(
            "train=data/train\nvalid=data/valid\nvocab=data/vocab.txt\nteacher=runs/t/best.ckpt\nuse_kd=true\nschedule=FB-NAT\nuse_it=true\nsteps_per_phase=6\ncheckpoint_interval=3\nglancing=linear\n{MODEL}"
        ),
    )
    .unwrap();
    let first = ok(d, &["train", "--config", "student.cfg", "--run-dir", "runs/s"]);
    assert_eq!(value(&first, "steps"), "18");
    let again = ok(d, &["train", "--config", "student.cfg", "--run-dir", "runs/s"]);
    assert_eq!(value(&again, "resumed_from"), "18");

    ok(d, &["train", "--replay", "runs/s", "--run-dir", "runs/replay"]);
    let (a, b) = (files(&d.join("runs/s")), files(&d.join("runs/replay")));
    assert_eq!(a.iter().map(|f| &f.0).collect::<Vec<_>>(), b.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{name} differs after replay");
    }
    let csv = fs::read_to_string(d.join("runs/s/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    let probe = ok(d, &["probe", "--cosine", "runs/s/best.ckpt", "--vocab", "data/vocab.txt", "--data", "data/valid"]);
    let c: f64 = value(&probe, "cosine").parse().unwrap();
    assert!((-1.0..=1.0).contains(&c));

    fs::write(d.join("student.cfg"), fs::read_to_string(d.join("student.cfg")).unwrap().replace("seed=2", "seed=3")).unwrap();
    let changed = depa(d, &["train", "--config", "student.cfg", "--run-dir", "runs/s"]);
    assert_eq!(changed.status.code(), Some(2));
}
