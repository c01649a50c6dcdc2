use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcnet::train::Checkpoint;
use mcnet_cli::exit;
use mcnet_cli::metrics::parse_csv;
use tempfile::TempDir;

fn mcnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const MINI: &str = r#"
[model]
preset = "mini_cnn"

[data]
synthetic_train = 120
synthetic_test = 60
n_classes = 4

[train]
epochs = 5
batch_size = 20

[run]
output_dir = "out"
seeds = [0]
"#;

fn workspace(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("mini.toml"), config).unwrap();
    dir
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn train_writes_two_rows_per_epoch() {
    let dir = workspace(MINI);
    let o = mcnet(&["train", "--config", "mini.toml", "--override", "epochs=2"], dir.path());
    assert_eq!(code(&o), exit::OK, "{}", stderr(&o));
    let path = dir.path().join("out/seed0/metrics.csv");
    let text = String::from_utf8(read(&path)).unwrap();
    let rows = parse_csv(&path, &text).unwrap();
    assert_eq!(rows.len(), 4);
    let splits: Vec<_> = rows.iter().map(|r| (r.epoch, r.split.as_str())).collect();
    assert_eq!(splits, [(1, "train"), (1, "test"), (2, "train"), (2, "test")]);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with('#'));
    assert_eq!(lines.next().unwrap(), "epoch,split,loss,accuracy,lr,seconds");
    assert!(dir.path().join("out/seed0/final.ckpt").is_file());
    assert!(dir.path().join("out/summary.txt").is_file());
    assert!(dir.path().join("out/config.toml").is_file());
}

#[test]
fn repeated_invocation_is_byte_identical() {
    let dir = workspace(MINI);
    let args = |out: &'static str| {
        vec!["train", "--config", "mini.toml", "-q", "--override", "epochs=3", "--override", out]
    };
    assert_eq!(code(&mcnet(&args("output_dir=a"), dir.path())), exit::OK);
    assert_eq!(code(&mcnet(&args("output_dir=b"), dir.path())), exit::OK);
    assert_eq!(
        read(dir.path().join("a/seed0/metrics.csv")),
        read(dir.path().join("b/seed0/metrics.csv"))
    );
    assert_eq!(read(dir.path().join("a/summary.txt")), read(dir.path().join("b/summary.txt")));
}

#[test]
fn repeat_summary_reports_mean_and_half_range() {
    let dir = workspace(MINI);
    let o = mcnet(
        &[
            "train", "--config", "mini.toml", "-q",
            "--override", "epochs=2",
            "--override", "run.seeds=[]",
            "--override", "run.repeat=3",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), exit::OK, "{}", stderr(&o));
    let summary = String::from_utf8(read(dir.path().join("out/summary.txt"))).unwrap();
    assert!(summary.contains("seeds 0,1,2"), "{summary}");

    let finals: Vec<f64> = (0..3)
        .map(|s| {
            let p = dir.path().join(format!("out/seed{s}/metrics.csv"));
            let rows = parse_csv(&p, &String::from_utf8(read(&p)).unwrap()).unwrap();
            rows.iter().rev().find(|r| r.split == "test").unwrap().accuracy
        })
        .collect();
    let lo = finals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = finals.iter().sum::<f64>() / 3.0;
    let expected = format!("final_test_accuracy {mean:.4}±{:.4}", (hi - lo) / 2.0);
    assert!(summary.contains(&expected), "{expected} not in\n{summary}");
    assert_eq!(summary, stdout(&o));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = workspace(MINI);
    let ok = |args: &[&str]| {
        let o = mcnet(args, dir.path());
        assert_eq!(code(&o), exit::OK, "{}", stderr(&o));
    };
    ok(&["train", "--config", "mini.toml", "-q", "--override", "epochs=4", "--override", "output_dir=full"]);
    ok(&["train", "--config", "mini.toml", "-q", "--override", "epochs=2", "--override", "output_dir=part"]);
    ok(&[
        "train", "--config", "mini.toml", "-q",
        "--override", "epochs=4",
        "--override", "output_dir=part",
        "--resume", "part/seed0/final.ckpt",
    ]);
    assert_eq!(
        read(dir.path().join("full/seed0/metrics.csv")),
        read(dir.path().join("part/seed0/metrics.csv"))
    );
    // Only the stored config text (its output_dir) may differ.
    let load = |d: &str| Checkpoint::load(&dir.path().join(d).join("seed0/final.ckpt")).unwrap();
    let (mut full, part) = (load("full"), load("part"));
    assert_ne!(full.config, part.config);
    full.config = part.config.clone();
    assert_eq!(full.to_bytes(), part.to_bytes());
}

#[test]
fn eval_reproduces_the_last_test_row() {
    let dir = workspace(MINI);
    let o = mcnet(&["train", "--config", "mini.toml", "-q", "--override", "epochs=2"], dir.path());
    assert_eq!(code(&o), exit::OK);
    let o = mcnet(
        &["eval", "--config", "mini.toml", "--checkpoint", "out/seed0/final.ckpt"],
        dir.path(),
    );
    assert_eq!(code(&o), exit::OK, "{}", stderr(&o));
    let p = dir.path().join("out/seed0/metrics.csv");
    let rows = parse_csv(&p, &String::from_utf8(read(&p)).unwrap()).unwrap();
    let last = rows.last().unwrap();
    let text = stdout(&o);
    assert!(text.starts_with("epoch 2 test"), "{text}");
    assert!(text.contains(&format!("accuracy {:.4}", last.accuracy)), "{text}");
    assert!(text.contains(&format!("loss {:.6}", last.loss)), "{text}");
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = workspace(MINI);
    std::fs::write(dir.path().join("broken.toml"), "[model\npreset = \"x\"").unwrap();
    std::fs::write(dir.path().join("unknown.toml"), "[model]\ncolour = 1\n").unwrap();
    let cases: [(&[&str], i32); 6] = [
        (&["train", "--config", "broken.toml"], exit::CONFIG),
        (&["train", "--config", "unknown.toml"], exit::CONFIG),
        (&["train", "--config", "mini.toml", "--override", "lr=-1"], exit::OVERRIDE),
        (&["train", "--config", "mini.toml", "--override", "train.nope=1"], exit::OVERRIDE),
        (
            &[
                "train", "--config", "mini.toml",
                "--override", "dataset=cifar10",
                "--override", "data.path=no/such/dir",
            ],
            exit::DATASET,
        ),
        (&["stats", "--model", "alexnet"], exit::USAGE),
    ];
    for (args, expected) in cases {
        let o = mcnet(args, dir.path());
        assert_eq!(code(&o), expected, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    let codes = [exit::CONFIG, exit::OVERRIDE, exit::DATASET, exit::USAGE];
    for (i, a) in codes.iter().enumerate() {
        assert_ne!(*a, 0);
        assert!(codes[i + 1..].iter().all(|b| b != a));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn stats_mini_cnn_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcnet(&["stats", "--model", "mini_cnn", "--both", "--json"], dir.path());
    assert_eq!(code(&o), exit::OK, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let runs = v["runs"].as_array().unwrap();
    let (orig, multi) = (&runs[0], &runs[1]);
    assert_eq!(orig["mode"], "original");
    assert_eq!(multi["mode"], "multi");

    // 3x3 conv 3->8 without bias, batchnorm(8), global pool, fc 8->10
    let conv = 27 * 8;
    let bn = 2 * 8;
    let fc = 8 * 10 + 10;
    assert_eq!(orig["params"], conv + bn + fc);
    // head: 3x3 conv 8->8 without bias, batchnorm(8), fc 8->10
    assert_eq!(multi["params"], conv + bn + (72 * 8 + 16 + fc));

    let hw = 32 * 32;
    let set_flops = hw * 8 * 27 + hw * 8 + hw * 8; // conv MACs, batchnorm, relu
    let cls_flops = 8 + 80; // pool outputs, fc MACs
    assert_eq!(orig["flops"], set_flops + cls_flops);
    for run in runs {
        let parts = run["parts"].as_array().unwrap();
        let p: u64 = parts.iter().map(|p| p["params"].as_u64().unwrap()).sum();
        let f: u64 = parts.iter().map(|p| p["flops"].as_u64().unwrap()).sum();
        assert_eq!(run["params"].as_u64().unwrap(), p);
        assert_eq!(run["flops"].as_u64().unwrap(), f);
    }
    assert_eq!(multi["parts"][1]["macs"], hw * 8 * 72 + 80);
}

#[test]
fn stats_both_prints_ratio_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcnet(&["stats", "--model", "resnet18", "--both"], dir.path());
    assert_eq!(code(&o), exit::OK);
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("ratio multi/original")).unwrap();
    assert!(line.contains("15.9M/10.2M"), "{line}");
    assert!(line.contains(&format!("{:.3}", 15.9 / 10.2)), "{line}");
    assert!(text.contains("1 MAC = 1 FLOP"));
    let o = mcnet(&["stats", "--model", "resnet18", "--flops", "2mac"], dir.path());
    assert!(stdout(&o).contains("2 FLOPs"), "{}", stdout(&o));
}

#[test]
fn gradcheck_is_deterministic_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let a = mcnet(&["gradcheck", "--scope", "layers", "--seed", "7"], dir.path());
    let b = mcnet(&["gradcheck", "--scope", "layers", "--seed", "7"], dir.path());
    assert_eq!(code(&a), exit::OK, "{}{}", stdout(&a), stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    for kind in ["conv3x3", "maxpool2x2", "batchnorm2d", "linear", "relu", "add_skip"] {
        assert!(text.lines().any(|l| l.starts_with(kind) && l.ends_with("PASS")), "{kind}\n{text}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn normcheck_lists_witnesses() {
    let dir = tempfile::tempdir().unwrap();
    let o = mcnet(&["normcheck", "--n", "2,8,10", "--samples", "2000"], dir.path());
    assert_eq!(code(&o), exit::OK, "{}", stderr(&o));
    let text = stdout(&o);
    let w2 = text.lines().find(|l| l.starts_with("witness N=2")).unwrap();
    assert!(w2.contains("condition true"), "{w2}");
    assert!(w2.contains("dL -0.1767767"), "{w2}");
    assert!(w2.contains("dS -0.2500000"), "{w2}");
    let w8 = text.lines().find(|l| l.starts_with("witness N=8")).unwrap();
    assert!(w8.contains("condition false"), "{w8}");
    assert!(text.contains("0 counterexamples"));
    assert!(!text.contains("identities: sqrt 0 norm 0 shift 0 argmax 1"));
}

fn write_metrics(dir: &Path, name: &str, accs: &[f64]) -> PathBuf {
    let mut text = String::from("# mcnet-metrics v1\nepoch,split,loss,accuracy,lr,seconds\n");
    for (e, a) in accs.iter().enumerate() {
        text += &format!("{},train,1.0,{a},0.001,0\n{},test,1.0,{a},0.001,0\n", e + 1, e + 1);
    }
    let d = dir.join(name);
    std::fs::create_dir_all(&d).unwrap();
    let p = d.join("metrics.csv");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn plot_overlays_labeled_series_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_metrics(dir.path(), "original", &[0.3, 0.5, 0.6]);
    write_metrics(dir.path(), "proposed", &[0.4, 0.6, 0.7]);
    let args = |out: &'static str| {
        vec!["plot", "original/metrics.csv", "proposed/metrics.csv", "--out", out]
    };
    assert_eq!(code(&mcnet(&args("a.svg"), dir.path())), exit::OK);
    assert_eq!(code(&mcnet(&args("b.svg"), dir.path())), exit::OK);
    let a = read(dir.path().join("a.svg"));
    assert_eq!(a, read(dir.path().join("b.svg")));
    let svg = String::from_utf8(a).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(">original/metrics<"));
    assert!(svg.contains(">proposed/metrics<"));
    let first = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
    assert_eq!(first.matches(',').count(), 3, "{first}");
}

#[test]
fn plot_rejects_bad_csv_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = mcnet(&["plot", "empty.csv", "--out", "x.svg"], dir.path());
    assert_eq!(code(&o), exit::DATASET);
    assert!(stderr(&o).contains("empty.csv:1"), "{}", stderr(&o));

    let p = write_metrics(dir.path(), "run", &[0.1, 0.2]);
    let mut text = std::fs::read_to_string(&p).unwrap();
    text += "3,test,1.0,abc,0.001,0\n";
    std::fs::write(&p, text).unwrap();
    let o = mcnet(&["plot", "run/metrics.csv", "--out", "x.svg"], dir.path());
    assert_eq!(code(&o), exit::DATASET);
    assert!(stderr(&o).contains("metrics.csv:7"), "{}", stderr(&o));
    assert!(!dir.path().join("x.svg").exists());
}
