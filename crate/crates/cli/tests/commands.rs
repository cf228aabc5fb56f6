use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use serde_json::Value;
use viact_cli::commands::sweep::read_rows;
use viact_cli::{run, Cli};

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        Self { _tmp: tmp, root }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    /// Runs a command with `--data-root <root>/data --out-dir <root>/<out>`.
    fn run(&self, out: &str, args: &[&str]) -> anyhow::Result<()> {
        let data = self.path("data");
        let out = self.path(out);
        let mut argv = vec![
            "viact".to_string(),
            "--data-root".into(),
            data.display().to_string(),
            "--out-dir".into(),
            out.display().to_string(),
        ];
        argv.extend(args.iter().map(|s| s.to_string()));
        run(Cli::try_parse_from(argv)?)
    }

    fn synth(&self) {
        self.run(
            "synth",
            &["synth", "--n-train", "12", "--n-val", "4", "--n-test", "4"],
        )
        .unwrap();
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

fn manifest(e: &Env) -> Vec<Value> {
    fs::read_to_string(e.path("data/manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_writes_balanced_splits_deterministically() {
    let (a, b) = (Env::new(), Env::new());
    a.synth();
    b.synth();
    let rows = manifest(&a);
    assert_eq!(rows, manifest(&b));
    assert_eq!(rows.len(), 20);
    for (split, n) in [("train", 12), ("val", 4), ("test", 4)] {
        let labels: Vec<_> = rows
            .iter()
            .filter(|r| r["split"] == split)
            .map(|r| r["label"].as_u64().unwrap())
            .collect();
        assert_eq!(labels.len(), n, "{split}");
        assert_eq!(labels.iter().sum::<u64>() as usize, n / 2, "{split}");
    }
    for r in &rows {
        let f = r["path"].as_str().unwrap();
        assert_eq!(
            fs::read(a.path("data").join(f)).unwrap(),
            fs::read(b.path("data").join(f)).unwrap()
        );
    }
}

#[test]
fn synth_refuses_bad_arguments() {
    let e = Env::new();
    let err = e.run("o", &["synth", "--n-train", "0"]).unwrap_err();
    assert!(err.to_string().contains("n-train"), "{err}");
    assert!(e.run("o", &["synth", "--signal", "1.5"]).is_err());
    e.synth();
    let err = e.run("o", &["synth", "--n-train", "4"]).unwrap_err();
    assert!(err.to_string().contains("--force"), "{err}");
    e.run(
        "o",
        &[
            "synth",
            "--n-train",
            "4",
            "--n-val",
            "2",
            "--n-test",
            "2",
            "--force",
        ],
    )
    .unwrap();
    assert_eq!(manifest(&e).len(), 8);
}

#[test]
fn binary_reports_errors_with_exit_code() {
    let e = Env::new();
    let out = Command::new(env!("CARGO_BIN_EXE_viact"))
        .args(["--data-root"])
        .arg(e.path("data"))
        .args(["synth", "--n-train", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n-train"));
}

#[test]
fn config_file_overrides_flags_and_is_snapshotted() {
    let e = Env::new();
    let cfg = e.path("run.toml");
    fs::write(
        &cfg,
        "seed = 5\nsynth.n_val = 2\nsynth.n_train = 6\nsynth.n_test = 2\n",
    )
    .unwrap();
    e.run(
        "o",
        &[
            "--config",
            cfg.to_str().unwrap(),
            "synth",
            "--n-train",
            "40",
        ],
    )
    .unwrap();
    assert_eq!(manifest(&e).len(), 10);
    let snap: toml::Table = fs::read_to_string(e.path("data/resolved_config.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(snap["seed"].as_integer(), Some(5));
    assert_eq!(snap["synth"]["n_train"].as_integer(), Some(6));
    assert_eq!(snap["synth"]["n_val"].as_integer(), Some(2));

    fs::write(&cfg, "[synth]\nn_trian = 6\n").unwrap();
    let err = e
        .run(
            "o",
            &["--config", cfg.to_str().unwrap(), "synth", "--force"],
        )
        .unwrap_err();
    assert!(format!("{err:#}").contains("n_trian"), "{err:#}");
    fs::write(&cfg, "[synht]\nn_train = 6\n").unwrap();
    assert!(e
        .run(
            "o",
            &["--config", cfg.to_str().unwrap(), "synth", "--force"]
        )
        .is_err());
}

#[test]
fn pretrain_finetune_eval_attend_pipeline() {
    let e = Env::new();
    e.synth();
    e.run(
        "pre",
        &[
            "pretrain",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--recon-frames",
            "2",
        ],
    )
    .unwrap();
    let report = json(&e.path("pre/run.json"));
    assert_eq!(report["tokens_per_frame"], 84);
    assert_eq!(report["visible_tokens"], 21);
    assert_eq!(lines(&e.path("pre/log.jsonl")), 2);
    assert!(e.path("pre/recon.png").exists());
    assert!(e.path("pre/resolved_config.toml").exists());

    let ckpt = e.path("pre/pretrain.ckpt");
    e.run(
        "ft",
        &[
            "finetune",
            "--repeats",
            "2",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--pretrained",
            ckpt.to_str().unwrap(),
        ],
    )
    .unwrap();
    let metrics = json(&e.path("ft/metrics.json"));
    assert_eq!(metrics["runs"].as_array().unwrap().len(), 2);
    assert_eq!(metrics["pretrained"], true);
    // one train and one val record per epoch
    assert_eq!(lines(&e.path("ft/seed_1/log.jsonl")), 4);

    let best = e.path("ft/seed_0/best.ckpt");
    e.run("ev", &["eval", "--checkpoint", best.to_str().unwrap()])
        .unwrap();
    let ev = json(&e.path("ev/eval_test.json"));
    let seed0 = &json(&e.path("ft/seed_0/metrics.json"));
    assert_eq!(ev["clips"], 4);
    assert_eq!(ev["accuracy"], seed0["accuracy"]);
    assert!(e
        .run("ev", &["eval", "--checkpoint", ckpt.to_str().unwrap()])
        .is_err());

    let clip = fs::read_dir(e.path("data/clips"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    e.run(
        "att",
        &[
            "attend",
            "--checkpoint",
            best.to_str().unwrap(),
            "--clip",
            clip.to_str().unwrap(),
        ],
    )
    .unwrap();
    let pngs = fs::read_dir(e.path("att"))
        .unwrap()
        .filter(|f| {
            f.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(pngs, 8);
    let scores = fs::read_to_string(e.path("att/scores.jsonl")).unwrap();
    for line in scores.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let n = v["normalized"].as_array().unwrap();
        assert_eq!(n.len(), 84);
        let max = n
            .iter()
            .map(|x| x.as_f64().unwrap())
            .fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
    }
    assert!(e
        .run(
            "att",
            &["attend", "--clip", clip.to_str().unwrap(), "--head", "3"]
        )
        .is_err());
}

#[test]
fn sweep_resumes_from_results() {
    let e = Env::new();
    e.synth();
    let args = [
        "sweep",
        "--mask-ratios",
        "0.5,0.75",
        "--repeats",
        "1",
        "--pretrain-epochs",
        "1",
        "--pretrain-batch",
        "8",
        "--pretrain-warmup",
        "0",
        "--finetune-epochs",
        "1",
        "--finetune-batch",
        "4",
    ];
    e.run("sw", &args).unwrap();
    let results = e.path("sw/results.jsonl");
    let first = fs::read_to_string(&results).unwrap();
    assert_eq!(first.lines().count(), 3);
    let rows = read_rows(&results).unwrap();
    assert_eq!(rows[0].pretraining, "none");
    assert_eq!(rows[2].mask_ratio, Some(0.75));

    e.run("sw", &args).unwrap();
    assert_eq!(fs::read_to_string(&results).unwrap(), first);
    let mut more = args.to_vec();
    more[2] = "0.5,0.75,0.6";
    e.run("sw", &more).unwrap();
    assert_eq!(lines(&results), 4);
    assert_eq!(lines(&e.path("sw/results.tsv")), 5);
}

#[test]
fn desk_bench_reports_ratios() {
    let e = Env::new();
    e.run("b", &["bench", "--desk", "--batch", "2", "--repeats", "1"])
        .unwrap();
    let b = json(&e.path("b/bench.json"));
    assert_eq!(b["entries"].as_array().unwrap().len(), 2);
    let r = &b["ratios"];
    assert_eq!(r["tokens_per_frame"].as_f64().unwrap(), 84.0 / 64.0);
    assert!(r["total_flops"].as_f64().unwrap() > 0.0);
    assert!(b["flop_model"].as_str().unwrap().contains("multiply-add"));
}
