use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fairrank::baselines::fit_linear_regression;
use fairrank::data::{generate_simulated, write_groups, write_letor, SimulatedParams};
use fairrank::metrics::ndcg;
use fairrank::policy::argmax_ranking;
use serde_json::Value;

fn fairrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairrank"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = fairrank(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fails(args: &[&str]) -> String {
    let out = fairrank(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a small simulated dataset (with sidecar) and returns its path.
fn small_data(dir: &Path, queries: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("data-{seed}"));
    ok(&[
        "generate",
        "simulated",
        "--num-queries",
        &queries.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    out.join("train.letor")
}

#[test]
fn generate_defaults_refusal_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&["generate", "simulated", "--out", s(&a)]);
    let letor = fs::read_to_string(a.join("train.letor")).unwrap();
    assert_eq!(letor.lines().count(), 1000);
    let qids: std::collections::BTreeSet<&str> = letor.lines().map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(qids.len(), 100);
    assert_eq!(
        fs::read_to_string(a.join("train.groups"))
            .unwrap()
            .split_whitespace()
            .count(),
        1000
    );
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["params"]["num_queries"], 100);

    let err = fails(&["generate", "simulated", "--out", s(&a)]);
    assert!(err.contains("--force"), "{err}");
    ok(&["generate", "simulated", "--out", s(&a), "--force"]);

    let b = dir.path().join("b");
    ok(&["generate", "simulated", "--out", s(&b)]);
    for f in ["train.letor", "train.groups", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn generate_from_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    let mut text = String::from("age,job,sex,label\n");
    for i in 0..60 {
        let job = ["a", "b", "c"][i % 3];
        text.push_str(&format!(
            "{},{job},{},{}\n",
            20 + i,
            if i % 4 == 0 { "f" } else { "m" },
            u8::from(i % 5 == 0) + 1
        ));
    }
    fs::write(&table, text).unwrap();
    let out = dir.path().join("g");
    let common = [
        "generate",
        "from-table",
        "--input",
        s(&table),
        "--header",
        "--label-col",
        "3",
        "--positive-label",
        "1",
        "--group-col",
        "2",
        "--group-one",
        "f",
        "--categorical",
        "1",
        "--standardize",
        "--num-queries",
        "7",
        "--test-queries",
        "3",
    ];
    ok(&[&common[..], &["--out", s(&out)]].concat());
    let train = fs::read_to_string(out.join("train.letor")).unwrap();
    assert_eq!(train.lines().count(), 70);
    // age plus three one-hot job columns
    assert!(train.lines().all(|l| l.split_whitespace().count() == 2 + 4));
    // 2 relevant of 10 candidates per query
    assert_eq!(train.lines().filter(|l| l.starts_with("1")).count(), 14);
    assert_eq!(fs::read_to_string(out.join("test.letor")).unwrap().lines().count(), 30);
    assert_eq!(json(&out.join("manifest.json"))["test_seed"], 1);

    let err = fails(&[
        "generate",
        "from-table",
        "--input",
        s(&table),
        "--header",
        "--label-col",
        "1",
        "--out",
        s(&dir.path().join("bad")),
    ]);
    assert!(err.contains("not 0 or 1"), "{err}");
}

#[test]
fn train_writes_run_directory_without_disparity() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 8, 3);
    let run = dir.path().join("run");
    let args = [
        "train",
        "--train",
        s(&data),
        "--lambda",
        "0",
        "--metric",
        "ndcg@10",
        "--epochs",
        "2",
        "--out",
        s(&run),
    ];
    ok(&args);
    for f in ["config.txt", "model.ckpt", "run.json", "epochs.csv", "summary.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let record = json(&run.join("run.json"));
    assert_eq!(record["method"], "fair-pg-rank");
    assert!(record["details"]["train"].get("disparity").is_none());
    assert!(record["details"].get("delta_lambda").is_none());
    assert!(record["details"]["train"]["ndcg"].is_f64());
    let epochs = fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 3);
    assert!(fs::read_to_string(run.join("summary.csv"))
        .unwrap()
        .starts_with("lambda,seed,split,ndcg,err,disparity,delta_lambda\n"));

    let err = fails(&args);
    assert!(err.contains("already exists"), "{err}");

    // the config echo re-runs the same training
    let again = dir.path().join("again");
    ok(&["train", "--config", s(&run.join("config.txt")), "--out", s(&again)]);
    assert_eq!(
        fs::read(run.join("run.json")).unwrap(),
        fs::read(again.join("run.json")).unwrap()
    );
}

#[test]
fn group_disparity_without_groups_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 4, 1);
    fs::remove_file(data.with_extension("groups")).unwrap();
    let run = dir.path().join("run");
    let err = fails(&["train", "--train", s(&data), "--disparity", "group", "--out", s(&run)]);
    assert!(err.contains("group labels"), "{err}");
    assert!(!run.exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 4, 2);
    let cfg = dir.path().join("c.txt");
    fs::write(
        &cfg,
        format!("train = {}\nlambda = 3\nepochs = 1\ndisparity = group\n", s(&data)),
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--lambda", "0.5", "--out", s(&run)]);
    let echo = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(
        echo.contains("lambda = 0.5\n") && echo.contains("epochs = 1\n"),
        "{echo}"
    );
    fs::write(&cfg, "lamda = 3\n").unwrap();
    assert!(fails(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]).contains("unknown key"));
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn sweep_grids_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 5, 4);
    let base = ["sweep", "--train", s(&data), "--disparity", "group", "--epochs", "1"];

    let one = dir.path().join("one");
    ok(&[&base[..], &["--lambdas", "0", "--out", s(&one)]].concat());
    let agg = csv_rows(&one.join("aggregate.csv"));
    assert_eq!(agg.len(), 1);
    // ndcg_std
    assert_eq!(agg[0][4], "0.0");

    let two = dir.path().join("two");
    ok(&[
        &base[..],
        &[
            "--lambdas",
            "0,5",
            "--seeds",
            "0,1,2,3,4",
            "--jobs",
            "2",
            "--out",
            s(&two),
        ],
    ]
    .concat());
    let summary = csv_rows(&two.join("summary.csv"));
    assert_eq!(summary.len(), 10);
    let agg = csv_rows(&two.join("aggregate.csv"));
    assert_eq!(agg.len(), 2);
    for row in &agg {
        assert_eq!(row[2], "5");
        let ndcgs: Vec<f64> = summary
            .iter()
            .filter(|r| r[0] == row[0])
            .map(|r| r[3].parse().unwrap())
            .collect();
        let mean = ndcgs.iter().sum::<f64>() / 5.0;
        let std = (ndcgs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((row[4].parse::<f64>().unwrap() - std).abs() < 1e-12);
    }
    let manifest = json(&two.join("manifest.json"));
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 10);
    assert!(fails(&[&base[..], &["--out", s(&dir.path().join("empty"))]].concat()).contains("lambda grid"));
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 4, 6);
    let out = dir.path().join("sw");
    // a huge learning rate with plain SGD diverges at large lambda only
    let err = fails(&[
        "sweep",
        "--train",
        s(&data),
        "--disparity",
        "group",
        "--epochs",
        "3",
        "--optimizer",
        "sgd",
        "--lr",
        "1e300",
        "--lambdas",
        "0,1e300",
        "--out",
        s(&out),
    ]);
    let manifest = json(&out.join("manifest.json"));
    let failures = manifest["failures"].as_array().unwrap().len();
    assert!(failures >= 1, "{err}");
    assert!(err.contains("runs failed"), "{err}");
    assert_eq!(csv_rows(&out.join("summary.csv")).len(), 2 - failures);
}

#[test]
fn lp_baseline_at_zero_lambda_ranks_by_regression() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 10, 7);
    let out = dir.path().join("lp");
    ok(&[
        "baseline",
        "lp-postprocess",
        "--train",
        s(&data),
        "--lambdas",
        "0",
        "--out",
        s(&out),
    ]);
    let runs = json(&out.join("runs.json"));
    let queries = runs[0]["details"]["splits"][0]["queries"].as_array().unwrap();

    let ds = generate_simulated(&SimulatedParams {
        num_queries: 10,
        seed: 7,
        ..SimulatedParams::default()
    })
    .unwrap();
    let reg = fit_linear_regression(&ds, true).unwrap();
    for (q, row) in ds.queries().iter().zip(queries) {
        let expected = ndcg(&argmax_ranking(&reg.predict_query(q)), &q.relevances(), None).unwrap();
        assert!((row["ndcg"].as_f64().unwrap() - expected).abs() < 1e-9);
    }
    assert_eq!(json(&out.join("manifest.json"))["lambdas"], serde_json::json!([0.0]));

    let default_grid = dir.path().join("grid");
    ok(&[
        "baseline",
        "lp-postprocess",
        "--train",
        s(&data),
        "--out",
        s(&default_grid),
    ]);
    assert_eq!(
        json(&default_grid.join("manifest.json"))["lambdas"]
            .as_array()
            .unwrap()
            .len(),
        11
    );
    assert_eq!(csv_rows(&default_grid.join("summary.csv")).len(), 11);
}

#[test]
fn top1_baseline_needs_groups() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 4, 8);
    let out = dir.path().join("t1");
    ok(&[
        "baseline",
        "top1",
        "--train",
        s(&data),
        "--lambdas",
        "0,100",
        "--epochs",
        "2",
        "--eval-samples",
        "20",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        json(&out.join("manifest.json"))["lambdas"],
        serde_json::json!([0.0, 100.0])
    );
    assert!(out.join("top1-lambda-100.ckpt").is_file());
    let rows = csv_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| !r[5].is_empty()));

    fs::remove_file(data.with_extension("groups")).unwrap();
    let err = fails(&[
        "baseline",
        "top1",
        "--train",
        s(&data),
        "--out",
        s(&dir.path().join("t2")),
    ]);
    assert!(err.contains("group labels"), "{err}");
}

#[test]
fn eval_reports_per_query_and_checks_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 6, 9);
    let run = dir.path().join("run");
    ok(&["train", "--train", s(&data), "--epochs", "1", "--out", s(&run)]);
    let ckpt = run.join("model.ckpt");

    let args = |out: &Path| {
        vec![
            "eval".to_string(),
            "--checkpoint".into(),
            s(&ckpt).into(),
            "--data".into(),
            s(&data).into(),
            "--disparity".into(),
            "group".into(),
            "--out".into(),
            s(out).into(),
        ]
    };
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    ok(&args(&e1).iter().map(String::as_str).collect::<Vec<_>>());
    ok(&args(&e2).iter().map(String::as_str).collect::<Vec<_>>());
    for f in ["report.json", "report.csv"] {
        assert_eq!(fs::read(e1.join(f)).unwrap(), fs::read(e2.join(f)).unwrap());
    }
    let csv = fs::read_to_string(e1.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "qid,utility,ndcg,err,disparity");
    assert_eq!(csv.lines().count(), 1 + 6);

    // a three-feature dataset
    let ds = generate_simulated(&SimulatedParams {
        num_queries: 2,
        ..SimulatedParams::default()
    })
    .unwrap();
    let mut letor = Vec::new();
    write_letor(&ds, &mut letor).unwrap();
    let wide: String = String::from_utf8(letor)
        .unwrap()
        .lines()
        .map(|l| format!("{l} 3:1.0\n"))
        .collect();
    let wide_path = dir.path().join("wide.letor");
    fs::write(&wide_path, wide).unwrap();
    let mut groups = Vec::new();
    write_groups(&ds, &mut groups).unwrap();
    fs::write(wide_path.with_extension("groups"), groups).unwrap();
    let err = fails(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&wide_path),
        "--out",
        s(&dir.path().join("e3")),
    ]);
    assert!(err.contains("dimension mismatch"), "{err}");
}
