use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use mcm::cli::{run, Io};
use mcm::data::synthetic::{generate, SyntheticConfig};
use mcm::data::write_dataset;
use mcm::embeddings::{SkipGram, SkipGramConfig, Vocabulary};
use mcm::rng::{Rng, Stream};
use tempfile::TempDir;

/// Small widths so every command finishes in well under a second.
const TINY: &[&str] = &[
    "embed_dim=12",
    "filters=12",
    "lstm_units=12",
    "learner_dense=12,8",
    "disc_dense=12,8",
    "baseline_filters=12",
    "attention_hidden=8",
    "batch_size=16",
    "epochs=2",
];

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn mcm(args: &[&str], stdin: &str) -> Out {
    let mut input = stdin.as_bytes();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut io = Io {
        input: &mut input,
        out: &mut out,
        err: &mut err,
    };
    let code = run(std::iter::once("mcm").chain(args.iter().copied()), &mut io);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn kv(key: &str, p: &Path) -> String {
    format!("{key}={}", p.display())
}

struct Data {
    dir: TempDir,
    raw: PathBuf,
    train: PathBuf,
    test: PathBuf,
}

fn data() -> Data {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.tsv");
    let cfg = SyntheticConfig {
        examples: 150,
        max_tokens: 10,
        ..Default::default()
    };
    write_dataset(&raw, &generate(&cfg, 21)).unwrap();
    let out = dir.path().join("split");
    let r = mcm(&["--out", &s(&out), "split", &s(&raw)], "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    Data {
        raw,
        train: out.join("train.tsv"),
        test: out.join("test.tsv"),
        dir,
    }
}

fn train_args(d: &Data, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec!["--out".to_string(), s(out), "train".into(), kv("train", &d.train), kv("test", &d.test)];
    v.extend(TINY.iter().map(|x| x.to_string()));
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn call(args: &[String], stdin: &str) -> Out {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    mcm(&refs, stdin)
}

#[test]
fn preprocess_reports_class_balance() {
    let d = data();
    let out = d.dir.path().join("pre");
    let r = mcm(&["--out", &s(&out), "preprocess", &s(&d.raw)], "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("read 150"), "{}", r.stdout);
    assert!(r.stdout.contains("negative"), "{}", r.stdout);
    for f in ["preprocessed.tsv", "config.txt", "manifest.json", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn preprocess_of_single_words_warns_but_succeeds() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("one.tsv");
    fs::write(&input, "positive\tzabardast\nnegative\tbakwas\n").unwrap();
    let out = dir.path().join("pre");
    let r = mcm(&["--out", &s(&out), "preprocess", &s(&input)], "");
    assert_eq!(r.code, 0);
    assert!(r.stdout.contains("dropped 2"), "{}", r.stdout);
    assert!(r.stderr.contains("warning"));
    assert_eq!(fs::read_to_string(out.join("preprocessed.tsv")).unwrap(), "");
}

#[test]
fn missing_or_malformed_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let r = mcm(&["--out", &s(dir.path()), "preprocess", "/no/such/file.tsv"], "");
    assert_eq!(r.code, 2);
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "positive\tfine text\nhappy\tbad label\n").unwrap();
    let r = mcm(&["--out", &s(dir.path()), "preprocess", &s(&bad)], "");
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains(":2:"), "{}", r.stderr);
}

#[test]
fn train_emits_checkpoint_log_and_audit() {
    let d = data();
    let out = d.dir.path().join("run");
    let r = call(&train_args(&d, &out, &["model=mcm", "embedding=random", "finetune=true"]), "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("test accuracy"), "{}", r.stdout);
    for f in ["checkpoint.bin", "train_log.json", "metrics.json", "config.txt", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let audit = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(audit.contains("model = mcm") && audit.contains("embed_dim = 12"));
}

#[test]
fn simpleconv_on_pretrained_frozen_runs() {
    let d = data();
    let out = d.dir.path().join("run");
    let r = call(&train_args(&d, &out, &["model=simpleconv", "embedding=pretrained", "finetune=false"]), "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("char-hash"), "{}", r.stdout);
}

#[test]
fn unknown_model_lists_valid_kinds() {
    let d = data();
    let r = call(&train_args(&d, &d.dir.path().join("x"), &["model=transformer"]), "");
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("mcm|convnet|attention_lstm|simpleconv|embedding_probe"), "{}", r.stderr);
    let r = call(&train_args(&d, &d.dir.path().join("x"), &["colour=blue"]), "");
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("unknown key"));
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let d = data();
    let (a, b) = (d.dir.path().join("a"), d.dir.path().join("b"));
    for out in [&a, &b] {
        let r = call(&train_args(&d, out, &["--seed=4"]), "");
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    for f in ["checkpoint.bin", "train_log.json", "metrics.json", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn audit_config_reproduces_the_run() {
    let d = data();
    let first = d.dir.path().join("first");
    let r = call(&train_args(&d, &first, &["model=convnet", "seed=9", "dropout=0.3"]), "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let again = d.dir.path().join("again");
    let cfg = s(&first.join("config.txt"));
    let r = mcm(&["--config", &cfg, "--out", &s(&again), "train"], "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(
        fs::read(first.join("checkpoint.bin")).unwrap(),
        fs::read(again.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn flags_beat_file_beats_default() {
    let d = data();
    let cfg = d.dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 3\nepochs = 1\n").unwrap();
    let out = d.dir.path().join("p");
    let mut args = vec!["--config".to_string(), s(&cfg), "--seed".into(), "8".into()];
    args.extend(train_args(&d, &out, &[]));
    args.retain(|a| a != "epochs=2");
    let r = call(&args, "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let audit = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(audit.contains("seed = 8\n") && audit.contains("epochs = 1\n"), "{audit}");
}

#[test]
fn evaluate_and_predict_use_the_checkpoint() {
    let d = data();
    let out = d.dir.path().join("run");
    assert_eq!(call(&train_args(&d, &out, &[]), "").code, 0);
    let ckpt = kv("checkpoint", &out.join("checkpoint.bin"));
    let ev = d.dir.path().join("ev");
    let r = mcm(&["--out", &s(&ev), "evaluate", &ckpt, &kv("test", &d.test)], "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(
        fs::read_to_string(ev.join("metrics.json")).unwrap(),
        fs::read_to_string(out.join("metrics.json")).unwrap()
    );

    let r = mcm(&["predict", &ckpt], "yar ye bohat acha hai\n\nBURA din\n");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    for l in lines {
        let f: Vec<&str> = l.split('\t').collect();
        assert_eq!(f.len(), 4);
        assert!(["negative", "positive", "neutral"].contains(&f[0]));
        let total: f64 = f[1..].iter().map(|x| x.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-4);
    }
}

#[test]
fn evaluate_rejects_a_non_checkpoint() {
    let d = data();
    let r = mcm(&["--out", &s(d.dir.path()), "evaluate", &kv("checkpoint", &d.raw), &kv("test", &d.test)], "");
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("magic"));
}

fn matrix_args(d: &Data, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut v = vec!["--out".to_string(), s(out), "matrix".into(), kv("train", &d.train), kv("test", &d.test)];
    v.extend(TINY.iter().map(|x| x.to_string()));
    v.push("epochs=1".into());
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

#[test]
fn default_matrix_has_fourteen_cells_in_table_layout() {
    let d = data();
    let out = d.dir.path().join("m");
    let r = call(&matrix_args(&d, &out, &["--jobs=2"]), "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let tsv = fs::read_to_string(out.join("results.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), 14);
    assert_eq!(rows.iter().filter(|r| r.starts_with("embedding_probe\t")).count(), 2);
    assert!(tsv.starts_with("model\tembedding\tfinetune\taccuracy\tprecision\trecall\tf1\tbest_epoch\twall_seconds\n"));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    assert!(table.contains("Without finetuning") && table.contains("With finetuning"));
    // one line per (model, embedding) pair: 3 x 2 + probe
    assert_eq!(table.lines().filter(|l| l.contains(" | ")).count(), 2 + 7);
    assert_eq!(fs::read_to_string(out.join("cells.jsonl")).unwrap().lines().count(), 14);
}

#[test]
fn single_cell_matrix() {
    let d = data();
    let out = d.dir.path().join("m");
    let r = call(&matrix_args(&d, &out, &["models=mcm", "embeddings=random", "finetune_modes=true"]), "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(fs::read_to_string(out.join("results.tsv")).unwrap().lines().count(), 2);
}

#[test]
fn resume_skips_completed_cells() {
    let d = data();
    let out = d.dir.path().join("m");
    let args = matrix_args(&d, &out, &["models=convnet,simpleconv", "embeddings=random"]);
    assert_eq!(call(&args, "").code, 0);
    let manifest = out.join("cells.jsonl");
    let full = fs::read_to_string(&manifest).unwrap();
    let first = fs::read_to_string(out.join("results.tsv")).unwrap();
    // Simulate an interruption after two cells.
    let kept: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(&manifest, &kept).unwrap();

    let mut resumed = args.clone();
    resumed.insert(3, "--resume".into());
    let r = call(&resumed, "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("2 cell(s) reused"), "{}", r.stdout);
    let lines = fs::read_to_string(&manifest).unwrap();
    assert_eq!(lines.lines().count(), 4);
    assert!(lines.starts_with(&kept));
    let strip = |t: &str| -> Vec<String> {
        t.lines().map(|l| l.rsplit_once('\t').unwrap().0.to_string()).collect()
    };
    let second = fs::read_to_string(out.join("results.tsv")).unwrap();
    assert_eq!(strip(&first), strip(&second));

    let changed = matrix_args(&d, &out, &["models=convnet,simpleconv", "embeddings=random", "lr=0.1"]);
    let mut changed_resume = changed.clone();
    changed_resume.insert(3, "--resume".into());
    assert_eq!(call(&changed_resume, "").code, 2);
    let r = mcm(&["matrix", "--resume", &kv("train", &d.train), &kv("test", &d.test)], "");
    assert_eq!(r.code, 2);
}

#[test]
fn matrix_where_every_cell_fails_exits_3() {
    let d = data();
    let out = d.dir.path().join("m");
    let r = call(
        &matrix_args(&d, &out, &["models=convnet", "embeddings=multilingual", "multilingual=/no/vectors.txt"]),
        "",
    );
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(fs::read_to_string(out.join("results.tsv")).unwrap().contains("NA"));
}

#[test]
fn non_finite_training_exits_3() {
    let d = data();
    let vecs = d.dir.path().join("huge.txt");
    let vocab: Vec<String> = fs::read_to_string(&d.train)
        .unwrap()
        .lines()
        .flat_map(|l| l.split('\t').nth(1).unwrap().split_whitespace().map(String::from).collect::<Vec<_>>())
        .collect();
    let mut f = fs::File::create(&vecs).unwrap();
    writeln!(f, "1 12").unwrap();
    writeln!(f, "{} {}", vocab[0], ["3e38"; 12].join(" ")).unwrap();
    let out = d.dir.path().join("r");
    let args = train_args(&d, &out, &["model=convnet", "embedding=pretrained", &kv("pretrained", &vecs)]);
    let r = call(&args, "");
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("epoch 1, batch"), "{}", r.stderr);
}

#[test]
fn grid_search_reports_the_best_cell() {
    let d = data();
    let out = d.dir.path().join("g");
    let mut args = vec!["--out".to_string(), s(&out), "grid-search".into(), kv("train", &d.train)];
    args.extend(TINY.iter().map(|x| x.to_string()));
    args.extend(["grid_kernels=1-2".into(), "grid_dropout=0.3".into(), "grid_lr=0.002,0.001".into()]);
    let r = call(&args, "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("best: kernels=1,2"), "{}", r.stdout);
    assert_eq!(fs::read_to_string(out.join("grid.tsv")).unwrap().lines().count(), 3);
}

fn toy_corpus(dir: &Path) -> PathBuf {
    // "x" only ever appears with "y".
    let lines = ["x y", "x y", "x y", "y x", "z w v", "w z v", "v w z", "a b c", "c b a", "b a c"];
    let text: String = lines.iter().cycle().take(200).map(|l| format!("{l}\n")).collect();
    let p = dir.join("corpus.txt");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn embed_train_writes_a_vector_file() {
    let dir = TempDir::new().unwrap();
    let corpus = toy_corpus(dir.path());
    let out = dir.path().join("e");
    let r = mcm(&["--out", &s(&out), "embed-train", &s(&corpus), "sg_iterations=10000"], "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(out.join("embeddings.txt")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "9 300");
    assert_eq!(text.lines().count(), 10);
    assert!(r.stdout.contains("corpus 520 tokens"), "{}", r.stdout);
    assert!(out.join("loss.tsv").exists());
}

/// Four topics of six words; a sentence never leaves its topic.
fn topical_corpus(dir: &Path) -> PathBuf {
    let mut rng = Rng::new(2, Stream::Shuffle);
    let mut text = String::new();
    for _ in 0..400 {
        let topic = rng.below(4);
        let words: Vec<String> = (0..8).map(|_| format!("t{topic}w{}", rng.below(6))).collect();
        text.push_str(&words.join(" "));
        text.push('\n');
    }
    let p = dir.join("topics.txt");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn embed_train_ranks_the_cooccurring_token_first() {
    let dir = TempDir::new().unwrap();
    let corpus = topical_corpus(dir.path());
    let out = dir.path().join("e");
    let r = mcm(
        &["--out", &s(&out), "embed-train", &s(&corpus), "embed_dim=50", "sg_iterations=50000", "neighbors=t0w0"],
        "",
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    // Every top-5 neighbor of a topic word comes from its own topic.
    let line = r.stdout.lines().find(|l| l.starts_with("t0w0:")).unwrap();
    let names: Vec<&str> = line[6..].split(", ").map(|n| n.split(' ').next().unwrap()).collect();
    assert!(names.iter().all(|n| n.starts_with("t0")), "{line}");
}

#[test]
fn zero_iterations_write_the_initialization() {
    let dir = TempDir::new().unwrap();
    let corpus = toy_corpus(dir.path());
    let out = dir.path().join("e");
    let r = mcm(&["--out", &s(&out), "--seed", "6", "embed-train", &s(&corpus), "sg_iterations=0", "embed_dim=8"], "");
    assert_eq!(r.code, 0, "{}", r.stderr);

    let sentences: Vec<Vec<String>> = fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect();
    let vocab = Vocabulary::build(sentences.iter().flatten().map(String::as_str), 1);
    let cfg = SkipGramConfig { dim: 8, iterations: 0, ..Default::default() };
    let init = SkipGram::new(&sentences, &vocab, cfg, &mut Rng::new(6, Stream::NegativeSampling))
        .unwrap()
        .input_matrix()
        .unwrap();
    let expect = dir.path().join("init.txt");
    init.save(&expect, &vocab).unwrap();
    assert_eq!(fs::read(expect).unwrap(), fs::read(out.join("embeddings.txt")).unwrap());
}

#[test]
fn empty_corpus_exits_2() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("empty.txt");
    fs::write(&corpus, "\n\n").unwrap();
    let r = mcm(&["--out", &s(dir.path()), "embed-train", &s(&corpus)], "");
    assert_eq!(r.code, 2);
}

#[test]
fn binary_exit_codes_and_stdin() {
    let bin = env!("CARGO_BIN_EXE_mcm");
    let status = Command::new(bin).args(["preprocess", "/no/such/file"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    let status = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(status.status.code(), Some(2));

    let d = data();
    let out = d.dir.path().join("run");
    assert_eq!(call(&train_args(&d, &out, &[]), "").code, 0);
    let mut child = Command::new(bin)
        .args(["predict", &kv("checkpoint", &out.join("checkpoint.bin"))])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"acha din\nbura din\n").unwrap();
    let output = child.wait_with_output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert_eq!(String::from_utf8(output.stdout).unwrap().lines().count(), 2);
}
