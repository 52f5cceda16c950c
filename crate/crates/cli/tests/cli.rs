use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsl"))
        .args(args)
        .env_remove("DSL_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Three well-separated classes named by strings, 60 rows.
fn write_csv(dir: &Path) -> PathBuf {
    let mut text = String::from("f1,f2,f3,label\n");
    for i in 0..60 {
        let c = i % 3;
        let jitter = ((i * 37) % 11) as f64 / 11.0;
        let name = ["cat", "dog", "owl"][c];
        text.push_str(&format!(
            "{},{},{},{name}\n",
            3.0 * c as f64 + jitter,
            jitter - c as f64,
            (i % 4) as f64
        ));
    }
    let path = dir.join("train.csv");
    fs::write(&path, text).unwrap();
    path
}

const QUICK: &[&str] = &["--learners", "lr,knn,gbt", "--max-iterations", "3"];

#[test]
fn help_and_usage_errors() {
    assert_eq!(dsl(&["--help"]).status.code(), Some(0));
    let bad = dsl(&["train", "--bogus"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("Usage"));
    assert_eq!(dsl(&[]).status.code(), Some(1));
}

#[test]
fn invalid_overrides_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path());
    let out = dir.path().join("m.dsl");
    let base = [
        "train",
        "--data",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    let with = |extra: &[&str]| dsl(&[&base[..], extra].concat());
    assert_eq!(with(&["--learners", "lr,svm"]).status.code(), Some(1));
    assert_eq!(with(&["--folds", "1"]).status.code(), Some(1));
    assert_eq!(with(&["--max-iterations", "0"]).status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn missing_or_malformed_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.dsl");
    let missing = dsl(&[
        "train",
        "--data",
        "/nonexistent.csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,label\n1,x\noops,y\n").unwrap();
    let o = dsl(&[
        "train",
        "--data",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3, column 1"));
}

#[test]
fn training_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tiny.csv");
    // class "b" has fewer members than folds
    fs::write(&csv, "x,label\n1,a\n2,a\n3,a\n4,b\n").unwrap();
    let out = dir.path().join("m.dsl");
    let o = dsl(&[
        "train",
        "--data",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn train_predict_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path());
    let model = dir.path().join("m.dsl");
    let t = dsl(&[
        &[
            "train",
            "--data",
            csv.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--seed",
            "42",
        ],
        QUICK,
    ]
    .concat());
    assert_eq!(
        t.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&t.stderr)
    );
    assert!(stdout(&t).contains("layer 1: train log loss"));
    assert!(model.exists());

    let probs = dir.path().join("p.csv");
    let p = dsl(&[
        "predict",
        "--model",
        model.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
        "--out",
        probs.to_str().unwrap(),
    ]);
    assert_eq!(
        p.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&p.stderr)
    );
    let text = fs::read_to_string(&probs).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cat,dog,owl"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 60);
    assert!(rows
        .iter()
        .all(|r| r.len() == 3 && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9));

    let e = dsl(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(
        e.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&e.stderr)
    );
    let out = stdout(&e);
    assert!(out.starts_with("layer,log_loss,accuracy\n1,"));
    let last = out.lines().last().unwrap();
    let acc: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!(acc > 90.0, "{out}");
}

#[test]
fn identical_runs_and_worker_counts_give_identical_archives() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path());
    let mut archives = Vec::new();
    for workers in ["1", "4", "4"] {
        let path = dir.path().join(format!("m{}.dsl", archives.len()));
        let o = dsl(&[
            &[
                "--workers",
                workers,
                "train",
                "--data",
                csv.to_str().unwrap(),
                "--out",
                path.to_str().unwrap(),
            ],
            QUICK,
        ]
        .concat());
        assert_eq!(o.status.code(), Some(0));
        archives.push(fs::read(&path).unwrap());
    }
    assert_eq!(archives[0], archives[1]);
    assert_eq!(archives[1], archives[2]);

    let env_run = Command::new(env!("CARGO_BIN_EXE_dsl"))
        .args(
            [
                &[
                    "train",
                    "--data",
                    csv.to_str().unwrap(),
                    "--out",
                    dir.path().join("env.dsl").to_str().unwrap(),
                ],
                QUICK,
            ]
            .concat(),
        )
        .env("DSL_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(env_run.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("env.dsl")).unwrap(), archives[0]);
}

#[test]
fn benchmark_prints_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path());
    let o = dsl(&[
        &[
            "benchmark",
            "--train",
            csv.to_str().unwrap(),
            "--test-size",
            "15",
            "--format",
            "csv",
        ],
        QUICK,
    ]
    .concat());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "method,log_loss,accuracy");
    // cascade, single layer, simple average, three learners
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().any(|l| l.starts_with("Deep Super Learner,")));
    let losses: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(losses.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn text_benchmark_uses_tfidf() {
    let dir = tempfile::tempdir().unwrap();
    let words = [("good great fine", "pos"), ("bad awful poor", "neg")];
    let mut train = String::from("label,text\n");
    let mut test = String::from("label,text\n");
    for i in 0..30 {
        let (w, l) = words[i % 2];
        train.push_str(&format!("{l},\"{w} movie {i}\"\n"));
        if i < 10 {
            test.push_str(&format!("{l},\"{w} film\"\n"));
        }
    }
    let (tr, te) = (dir.path().join("tr.csv"), dir.path().join("te.csv"));
    fs::write(&tr, train).unwrap();
    fs::write(&te, test).unwrap();
    let o = dsl(&[
        &[
            "benchmark",
            "--train",
            tr.to_str().unwrap(),
            "--test",
            te.to_str().unwrap(),
            "--text-col",
            "text",
            "--vocab-size",
            "20",
        ],
        QUICK,
    ]
    .concat());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("Deep Super Learner"));
}
