//! End-to-end CLI contract tests: exit codes, byte determinism of primary
//! outputs, flag/config precedence, and checkpoint bookkeeping.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lpo_cli::checkpoint::{self, Checkpoint};
use lpo_cli::{csvio, jsonl};
use lpo_core::losses::SteWeighting;
use lpo_core::trainer::evaluate;

fn lpo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lpo"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    lpo()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Invalid tolerance.
    let out = run(&["gradcheck", "--tol", "0"], dir.path());
    assert_exit(&out, 2);

    // Missing required output path, named in the message.
    let out = run(&["simulate", "--loss", "lpo"], dir.path());
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("out"));

    // Unknown config key, named in the message.
    std::fs::write(dir.path().join("bad.cfg"), "bogus_key = 1\n").unwrap();
    let out = run(
        &["simulate", "--config", "bad.cfg", "--out", "t.csv"],
        dir.path(),
    );
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    // Absent pairs file.
    let out = run(
        &[
            "train",
            "--pairs",
            "nope.jsonl",
            "--policy",
            "nope.ckpt",
            "--out-dir",
            "run",
        ],
        dir.path(),
    );
    assert_exit(&out, 2);

    // Unknown loss name.
    let out = run(&["simulate", "--loss", "ppo", "--out", "t.csv"], dir.path());
    assert_exit(&out, 2);

    // Perturbation noise ratio out of range.
    let out = run(
        &[
            "build-pairs",
            "--method",
            "perturb",
            "--fixture",
            "corpus10k",
            "--eta",
            "1.5",
            "--out",
            "p.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 2);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // Unreachable tolerance: the check itself fails.
    let out = run(
        &[
            "gradcheck",
            "--loss",
            "dpo",
            "--points",
            "50",
            "--tol",
            "1e-18",
        ],
        dir.path(),
    );
    assert_exit(&out, 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("worst offender"));

    // Output directory already holds a run and --force is absent.
    let out = run(
        &[
            "sweep",
            "--r2-values",
            "0.5",
            "--steps",
            "20",
            "--out-dir",
            "sweepdir",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let out = run(
        &[
            "sweep",
            "--r2-values",
            "0.5",
            "--steps",
            "20",
            "--out-dir",
            "sweepdir",
        ],
        dir.path(),
    );
    assert_exit(&out, 1);
    let out = run(
        &[
            "sweep",
            "--r2-values",
            "0.5",
            "--steps",
            "20",
            "--out-dir",
            "sweepdir",
            "--force",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    // Vocabulary mismatch between corpus and policy.
    let (policy, _) = lpo_core::fixtures::lppc_demo();
    checkpoint::save(&dir.path().join("p.ckpt"), &Checkpoint::Tabular(policy)).unwrap();
    jsonl::write_dataset(
        &dir.path().join("bad.jsonl"),
        &[jsonl::DatasetRecord {
            prompt: vec![99],
            ground_truth: vec![1, 7],
        }],
    )
    .unwrap();
    let out = run(
        &[
            "build-pairs",
            "--method",
            "lppc",
            "--input",
            "bad.jsonl",
            "--policy",
            "p.ckpt",
            "--out",
            "pairs.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 1);
}

#[test]
fn primary_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = run(
            &[
                "build-pairs",
                "--method",
                "perturb",
                "--fixture",
                "corpus10k",
                "--eta",
                "0.1",
                "--seed",
                "7",
                "--out",
                &format!("{name}.jsonl"),
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);

    for name in ["t1.csv", "t2.csv"] {
        let out = run(
            &[
                "simulate", "--loss", "lpo_ste", "--r2", "0.4", "--out", name,
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let a = std::fs::read(dir.path().join("t1.csv")).unwrap();
    let b = std::fs::read(dir.path().join("t2.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn golden_lppc_bytes_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "build-pairs",
            "--method",
            "lppc",
            "--fixture",
            "lppc-demo",
            "--seed",
            "1009",
            "--out",
            "pairs.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let bytes = std::fs::read_to_string(dir.path().join("pairs.jsonl")).unwrap();
    assert_eq!(bytes, include_str!("golden/lppc_pairs.jsonl"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sim.cfg"),
        "loss = lpo\nsteps = 50\nout = from_config.csv\n",
    )
    .unwrap();

    // Config alone: 50 steps -> 51 rows + header.
    let out = run(&["simulate", "--config", "sim.cfg"], dir.path());
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(dir.path().join("from_config.csv")).unwrap();
    assert_eq!(text.lines().count(), 52);

    // Flag wins over the config's steps.
    let out = run(
        &[
            "simulate", "--config", "sim.cfg", "--steps", "10", "--out", "flag.csv",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let text = std::fs::read_to_string(dir.path().join("flag.csv")).unwrap();
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn train_outputs_and_margin_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "train",
            "--fixture",
            "case2",
            "--loss",
            "lpo",
            "--out-dir",
            "run",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    let run_dir = dir.path().join("run");
    for artifact in ["metrics.csv", "trace.csv", "policy.ckpt", "manifest.json"] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }

    // Margin bookkeeping: recomputing the dataset means from the saved
    // checkpoint reproduces the logged final row.
    let fixture = lpo_core::fixtures::case2_fixture();
    let Checkpoint::Tabular(trained) = checkpoint::load(&run_dir.join("policy.ckpt")).unwrap()
    else {
        panic!("expected tabular checkpoint");
    };
    let metrics = csvio::read_metrics(&run_dir.join("metrics.csv")).unwrap();
    let last = metrics.last().unwrap();
    let eval = evaluate(
        &trained,
        &fixture.reference,
        &fixture.pairs,
        fixture.lpo_config.loss,
        &fixture.lpo_config.params,
        SteWeighting::Quadratic,
    )
    .unwrap();
    assert!((eval.mean_x1 - last.mean_x1).abs() <= 1e-10);
    assert!((eval.mean_x2 - last.mean_x2).abs() <= 1e-10);

    // Training actually moved the policy off the frozen reference.
    assert_ne!(
        checkpoint::encode_tabular(&trained),
        checkpoint::encode_tabular(&fixture.reference),
    );

    // Second run into the same directory requires --force.
    let out = run(
        &[
            "train",
            "--fixture",
            "case2",
            "--loss",
            "lpo",
            "--out-dir",
            "run",
        ],
        dir.path(),
    );
    assert_exit(&out, 1);
}

#[test]
fn full_pipeline_files_roundtrip() {
    // build-pairs -> train -> report, all through files.
    let dir = tempfile::tempdir().unwrap();
    let (policy, _) = lpo_core::fixtures::lppc_demo();
    checkpoint::save(&dir.path().join("sft.ckpt"), &Checkpoint::Tabular(policy)).unwrap();

    let out = run(
        &[
            "build-pairs",
            "--method",
            "lppc",
            "--fixture",
            "lppc-demo",
            "--seed",
            "3",
            "--out",
            "pairs.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);

    let out = run(
        &[
            "train",
            "--pairs",
            "pairs.jsonl",
            "--policy",
            "sft.ckpt",
            "--loss",
            "lpo",
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--out-dir",
            "run1",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let digest_lpo = digest_line(&out);

    let out = run(
        &[
            "train",
            "--pairs",
            "pairs.jsonl",
            "--policy",
            "sft.ckpt",
            "--loss",
            "dpo",
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--out-dir",
            "run2",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let digest_dpo = digest_line(&out);

    // Loss-kind interchangeability: swapping the loss leaves the data
    // order byte-identical.
    assert_eq!(digest_lpo, digest_dpo);

    let out = run(
        &["report", "--runs", "run1,run2", "--out", "report.md"],
        dir.path(),
    );
    assert_exit(&out, 0);
    let report = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("| epoch | run1 | run2 |"), "{report}");
}

fn digest_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .find(|l| l.starts_with("data order digest:"))
        .expect("train prints the data-order digest")
        .split_whitespace()
        .nth(3)
        .expect("digest value present")
        .trim_end_matches(';')
        .to_string()
}

#[test]
fn train_r2_sweep_emits_per_setting_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "train",
            "--fixture",
            "case2",
            "--loss",
            "lpo_ste",
            "--r2-sweep",
            "0.1,1.0",
            "--epochs",
            "2",
            "--out-dir",
            "sweeprun",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    assert!(dir.path().join("sweeprun/metrics_r2_0.1.csv").exists());
    assert!(dir.path().join("sweeprun/metrics_r2_1.csv").exists());
}

#[test]
fn train_drives_mlp_checkpoints_too() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = lpo_core::fixtures::demo_vocab();
    let mlp = lpo_core::policy::MlpPolicy::new(vocab, 4, 777);
    checkpoint::save(&dir.path().join("mlp.ckpt"), &Checkpoint::Mlp(mlp)).unwrap();

    let out = run(
        &[
            "build-pairs",
            "--method",
            "perturb",
            "--fixture",
            "corpus10k",
            "--seed",
            "5",
            "--out",
            "pairs.jsonl",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    // Keep the training set tiny.
    let pairs = jsonl::read_pairs(&dir.path().join("pairs.jsonl")).unwrap();
    jsonl::write_pairs(&dir.path().join("small.jsonl"), &pairs[..4]).unwrap();

    let out = run(
        &[
            "train",
            "--pairs",
            "small.jsonl",
            "--policy",
            "mlp.ckpt",
            "--loss",
            "lpo",
            "--epochs",
            "2",
            "--batch-size",
            "4",
            "--out-dir",
            "mlprun",
        ],
        dir.path(),
    );
    assert_exit(&out, 0);
    let ckpt = checkpoint::load(&dir.path().join("mlprun/policy.ckpt")).unwrap();
    assert!(matches!(ckpt, Checkpoint::Mlp(_)));
}

#[test]
fn checkpoints_roundtrip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (policy, _) = lpo_core::fixtures::lppc_demo();
    let path: PathBuf = dir.path().join("p.ckpt");
    checkpoint::save(&path, &Checkpoint::Tabular(policy.clone())).unwrap();
    let Checkpoint::Tabular(back) = checkpoint::load(&path).unwrap() else {
        panic!("kind changed");
    };
    assert_eq!(policy, back);
}
