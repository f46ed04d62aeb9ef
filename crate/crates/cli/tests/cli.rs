use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kge::EvalReport;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn kge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("KGE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stdout_lines(output: &Output) -> Vec<String> {
    String::from_utf8(output.stdout.clone())
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Trains a mini_wn model into `dir` and returns its path.
fn train_mini_wn(dir: &Path, task: &str, extra: &[&str]) -> (PathBuf, Output) {
    let out = dir.join(format!("{task}.bin"));
    let train = fixture("mini_wn/train.txt");
    let valid = fixture("mini_wn/valid.txt");
    let mut args = vec![
        "train",
        "--task",
        task,
        "--train",
        s(&train),
        "--valid",
        s(&valid),
        "--dim",
        "8",
        "--epoch",
        "10",
        "--threads",
        "1",
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    let output = kge(&args);
    (out, output)
}

#[test]
fn train_writes_model_manifest_and_parseable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (model, output) = train_mini_wn(dir.path(), "entity", &["--neg", "3"]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(model.is_file());

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("entity.bin.manifest.json")).unwrap(),
    )
    .unwrap();
    let hash = manifest["hash"].as_str().unwrap();
    assert_eq!(manifest["hyperparameters"]["neg"], 3);

    let lines = stdout_lines(&output);
    assert_eq!(lines.len(), 2);
    let train = EvalReport::from_tsv(&lines[0]).unwrap();
    assert_eq!(
        (train.dataset.as_str(), train.metric.as_str()),
        ("mini_wn/train", "train-loss")
    );
    assert_eq!(train.num_queries, 10 * 120);
    let valid = EvalReport::from_tsv(&lines[1]).unwrap();
    assert_eq!(
        (valid.metric.as_str(), valid.mode),
        ("hit@10", Some(kge::RankMode::Filtered))
    );
    assert_eq!(valid.num_queries, 20);
    for line in &lines {
        assert_eq!(line.split('\t').nth(6), Some(hash));
    }
}

#[test]
fn eval_reports_raw_and_filtered() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = train_mini_wn(dir.path(), "entity", &[]);
    let filter = [
        fixture("mini_wn/train.txt"),
        fixture("mini_wn/valid.txt"),
        fixture("mini_wn/test.txt"),
    ]
    .iter()
    .map(|p| s(p).to_owned())
    .collect::<Vec<_>>()
    .join(",");
    let test = fixture("mini_wn/test.txt");
    let output = kge(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&test),
        "--filter",
        &filter,
        "--mode",
        "both",
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let reports: Vec<EvalReport> = stdout_lines(&output)
        .iter()
        .map(|l| EvalReport::from_tsv(l).unwrap())
        .collect();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].mode, Some(kge::RankMode::Raw));
    assert_eq!(reports[1].mode, Some(kge::RankMode::Filtered));
    assert!(reports[1].value >= reports[0].value);
    assert_eq!(reports[0].num_queries, 20);
}

#[test]
fn hit_percent_needs_a_relation_model() {
    let dir = tempfile::tempdir().unwrap();
    let test = fixture("mini_wn/test.txt");
    let (entity, _) = train_mini_wn(dir.path(), "entity", &[]);
    let output = kge(&[
        "eval",
        "--model",
        s(&entity),
        "--test",
        s(&test),
        "--hit-percent",
        "5",
    ]);
    assert_eq!(code(&output), 2);

    let (relation, output) = train_mini_wn(dir.path(), "relation", &["--loss", "softmax"]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let output = kge(&[
        "eval",
        "--model",
        s(&relation),
        "--test",
        s(&test),
        "--hit-percent",
        "50",
    ]);
    assert_eq!(code(&output), 0);
    let report = EvalReport::from_tsv(&stdout_lines(&output)[0]).unwrap();
    assert_eq!(report.metric, "hit@50%(2)");
    assert_eq!(report.num_queries, 10);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (_, output) = train_mini_wn(dir.path(), "entity", &["--loss", "softmax", "--neg", "5"]);
    assert_eq!(code(&output), 2);

    let out = dir.path().join("m.bin");
    let output = kge(&[
        "train",
        "--task",
        "entity",
        "--train",
        "/no/such/file",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&output), 2);
    assert_eq!(code(&kge(&["train", "--task", "bogus"])), 2);
    assert_eq!(code(&kge(&[])), 2);
    assert_eq!(code(&kge(&["--help"])), 0);

    let (model, _) = train_mini_wn(dir.path(), "entity", &[]);
    let test = fixture("mini_wn/test.txt");
    let output = kge(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&test),
        "--mode",
        "filtered",
    ]);
    assert_eq!(code(&output), 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("--filter"));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.bin");
    std::fs::write(&bogus, b"not a model").unwrap();
    let test = fixture("mini_wn/test.txt");
    let output = kge(&["eval", "--model", s(&bogus), "--test", s(&test)]);
    assert_eq!(code(&output), 1);
}

#[test]
fn single_thread_runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (model_a, out_a) = train_mini_wn(a.path(), "entity", &[]);
    let (model_b, out_b) = train_mini_wn(b.path(), "entity", &[]);
    assert_eq!(
        std::fs::read(model_a).unwrap(),
        std::fs::read(model_b).unwrap()
    );
    // Identical apart from the timing column.
    let strip = |o: &Output| {
        stdout_lines(o)
            .iter()
            .map(|l| {
                let mut cols: Vec<&str> = l.split('\t').collect();
                cols.remove(5);
                cols.join("\t")
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&out_a), strip(&out_b));
}

fn qa_train(dir: &Path) -> PathBuf {
    let out = dir.join("qa.bin");
    let output = kge(&[
        "qa",
        "train",
        "--pairs",
        s(&fixture("tiny_qa/train.txt")),
        "--kb",
        s(&fixture("tiny_qa/kb.tsv")),
        "--aliases",
        s(&fixture("tiny_qa/aliases.tsv")),
        "--dim",
        "16",
        "--epoch",
        "30",
        "--lr",
        "0.5",
        "--bigrams",
        "--buckets",
        "4096",
        "--threads",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    out
}

#[test]
fn qa_train_answer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let model = qa_train(dir.path());
    assert!(dir.path().join("qa.bin.freq.tsv").is_file());
    let kb = fixture("tiny_qa/kb.tsv");
    let aliases = fixture("tiny_qa/aliases.tsv");
    let common = [
        "--model",
        s(&model),
        "--kb",
        s(&kb),
        "--aliases",
        s(&aliases),
    ];

    let mut args = vec!["qa", "eval"];
    args.extend_from_slice(&common);
    let test = fixture("tiny_qa/test.txt");
    args.extend_from_slice(&["--pairs", s(&test)]);
    let output = kge(&args);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let reports: Vec<EvalReport> = stdout_lines(&output)
        .iter()
        .map(|l| EvalReport::from_tsv(l).unwrap())
        .collect();
    assert_eq!(reports[0].metric, "accuracy");
    assert_eq!(reports[1].metric, "relation-top1");
    assert_eq!(reports[0].num_queries, 24);

    let answer = |question: &str| {
        let mut args = vec!["qa", "answer"];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--question", question]);
        kge(&args)
    };
    let output = answer("who wrote the art of programming");
    assert_eq!(code(&output), 0);
    let line = &stdout_lines(&output)[0];
    assert_eq!(
        line.split('\t').collect::<Vec<_>>()[1..3],
        ["book/author", "m.1000"]
    );

    let output = answer("zzz qqq");
    assert_eq!(code(&output), 0);
    assert!(stdout_lines(&output)[0].contains("NO_ANSWER"));
    assert_eq!(code(&answer("  ")), 2);
}

#[test]
fn qa_wikimovies_with_inverse_relations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("wm.bin");
    let kb = fixture("tiny_movies/kb.tsv");
    let output = kge(&[
        "qa",
        "train",
        "--format",
        "wikimovies",
        "--inverse",
        "--pairs",
        s(&fixture("tiny_movies/train.txt")),
        "--kb",
        s(&kb),
        "--dim",
        "16",
        "--epoch",
        "30",
        "--lr",
        "0.5",
        "--threads",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let output = kge(&[
        "qa",
        "eval",
        "--format",
        "wikimovies",
        "--model",
        s(&out),
        "--kb",
        s(&kb),
        "--pairs",
        s(&fixture("tiny_movies/test.txt")),
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report = EvalReport::from_tsv(&stdout_lines(&output)[0]).unwrap();
    assert_eq!((report.metric.as_str(), report.num_queries), ("hits@1", 25));
}

#[test]
fn simplequestions_needs_aliases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("qa.bin");
    let output = kge(&[
        "qa",
        "train",
        "--pairs",
        s(&fixture("tiny_qa/train.txt")),
        "--kb",
        s(&fixture("tiny_qa/kb.tsv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&output), 2);
}

#[test]
fn grid_prints_rows_then_the_winner() {
    let train = fixture("mini_wn/train.txt");
    let valid = fixture("mini_wn/valid.txt");
    let test = fixture("mini_wn/test.txt");
    let output = kge(&[
        "grid",
        "--task",
        "entity",
        "--train",
        s(&train),
        "--valid",
        s(&valid),
        "--test",
        s(&test),
        "--include-valid",
        "--grid-dim",
        "4,8",
        "--grid-epoch",
        "2,5",
        "--grid-neg",
        "3",
        "--threads",
        "1",
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let lines = stdout_lines(&output);
    // 4 grid rows, 2 regimes x (raw, filtered), winner.
    assert_eq!(lines.len(), 4 + 4 + 1);
    let rows: Vec<EvalReport> = lines[..4]
        .iter()
        .map(|l| EvalReport::from_tsv(l).unwrap())
        .collect();
    let best = rows
        .iter()
        .map(|r| r.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let winner = lines.last().unwrap();
    assert!(winner.ends_with("\tselected"));
    assert_eq!(EvalReport::from_tsv(winner).unwrap().value, best);
    let first_best = lines[..4]
        .iter()
        .find(|l| EvalReport::from_tsv(l).unwrap().value == best)
        .unwrap();
    assert!(winner.starts_with(first_best.as_str()));
    assert!(lines[4].ends_with("\ttrain") && lines[7].ends_with("\ttrain+valid"));
}

#[test]
fn degenerate_and_empty_grids() {
    let train = fixture("mini_wn/train.txt");
    let valid = fixture("mini_wn/valid.txt");
    let base = [
        "grid",
        "--task",
        "relation",
        "--train",
        s(&train),
        "--valid",
        s(&valid),
        "--loss",
        "softmax",
    ];
    let mut args = base.to_vec();
    args.extend_from_slice(&["--grid-dim", "4", "--grid-epoch", "1", "--threads", "1"]);
    let output = kge(&args);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let lines = stdout_lines(&output);
    assert_eq!(lines.len(), 2);
    assert_eq!(format!("{}\tselected", lines[0]), lines[1]);

    let mut args = base.to_vec();
    args.extend_from_slice(&["--grid-dim", "", "--grid-epoch", "1"]);
    assert_eq!(code(&kge(&args)), 2);

    let mut args = base.to_vec();
    args.extend_from_slice(&["--grid-dim", "4", "--grid-epoch", "1", "--grid-neg", "2"]);
    assert_eq!(code(&kge(&args)), 2);

    let mut args = base.to_vec();
    args.extend_from_slice(&[
        "--grid-dim",
        "4",
        "--grid-epoch",
        "1",
        "--select-metric",
        "filtered-hit@10",
    ]);
    assert_eq!(code(&kge(&args)), 2);
}
