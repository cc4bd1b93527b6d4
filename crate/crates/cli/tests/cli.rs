//! Exit codes, flag validation, and the documented output contracts.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaescore"))
}

fn tmp(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("gaescore-cli-{}-{name}", std::process::id()));
    p
}

#[test]
fn missing_data_file_exits_3_with_path() {
    let o = bin()
        .args(["train", "--data", "definitely-not-here.txt", "--dim", "4"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("definitely-not-here.txt"), "{err}");
}

#[test]
fn unknown_flag_exits_2() {
    let o = bin()
        .args(["train", "--data", "synth-cov:n=10,d=4,k=2", "--bogus", "1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn invalid_numeric_flag_exits_2() {
    let o = bin()
        .args(["train", "--data", "synth-cov:n=10,d=4,k=2", "--lr", "banana"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_4() {
    let o = bin()
        .args([
            "train",
            "--kind",
            "cov-gae",
            "--data",
            "synth-cov:n=60,d=6,k=2,seed=1",
            "--lr",
            "1e8",
            "--momentum",
            "0",
            "--epochs",
            "30",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn verify_quick_mode_passes_and_break_tie_fails() {
    let o = bin().args(["verify", "--seeds", "1", "--steps", "300"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("verify=pass"));
    assert!(text.lines().filter(|l| l.starts_with("suite=")).count() >= 9);

    let o = bin()
        .args(["verify", "--seeds", "1", "--steps", "300", "--break-tie-weights"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verify=fail"));
}

#[test]
fn zero_learning_rate_archive_equals_init() {
    let out = tmp("lr0.model");
    let o = bin()
        .args([
            "train",
            "--kind",
            "cov-gae",
            "--data",
            "synth-cov:n=60,d=6,k=2,seed=2",
            "--lr",
            "0",
            "--epochs",
            "2",
            "--seed",
            "13",
            "--hidden",
            "5",
            "--factors",
            "3",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trained = gaescore::archive::load_archive(&out).unwrap().to_gae().unwrap();
    let init = gaescore::gae::GaeParams::random_covariance(6, 3, 5, 13);
    assert_eq!(trained, init, "lr=0 must leave the initialization untouched");
    std::fs::remove_file(&out).ok();
}

#[test]
fn config_file_merges_under_flags() {
    let cfg = tmp("opts.conf");
    std::fs::write(&cfg, "epochs=2\nseed=5\nhidden=4\nfactors=3\n").unwrap();
    let o = bin()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            "synth-cov:n=40,d=6,k=2,seed=1",
            "--seed",
            "9",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    // the flag wins over the file, file fills the rest
    assert!(text.contains("seed=9"), "{text}");
    assert!(text.contains("epochs=2"), "{text}");
    std::fs::remove_file(&cfg).ok();
}

#[test]
fn unknown_config_file_key_exits_2() {
    let cfg = tmp("bad.conf");
    std::fs::write(&cfg, "nonsense=1\n").unwrap();
    let o = bin()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            "synth-cov:n=40,d=6,k=2,seed=1",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_file(&cfg).ok();
}

#[test]
fn multilabel_zero_iterations_is_the_mlp_baseline() {
    let o = bin()
        .args([
            "multilabel",
            "--data",
            "synth-labels:n=400,d=8,l=4,seed=2",
            "--folds",
            "2",
            "--epochs",
            "5",
            "--mlp-hidden",
            "4",
            "--hidden",
            "4",
            "--factors",
            "4",
            "--max-iter",
            "0",
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    for line in text.lines().filter(|l| l.starts_with("fold=")) {
        let mut mlp = None;
        let mut refined = None;
        for part in line.split_whitespace() {
            if let Some(v) = part.strip_prefix("mlp_error=") {
                mlp = Some(v.to_string());
            }
            if let Some(v) = part.strip_prefix("refined_error=") {
                refined = Some(v.to_string());
            }
        }
        assert_eq!(mlp, refined, "max-iter 0 must reproduce the MLP: {line}");
    }
}

#[test]
fn classify_mc_reports_all_three_errors() {
    let o = bin()
        .args([
            "classify",
            "--kind",
            "mc",
            "--data",
            "synth-cov:n=60,d=6,k=2,seed=4",
            "--epochs",
            "2",
            "--hidden",
            "4",
            "--factors",
            "3",
            "--calib-epochs",
            "10",
            "--seed",
            "6",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("aes_error="), "{text}");
    assert!(text.contains("caes_error="), "{text}");
    assert!(text.contains("mcaes_error="), "{text}");
    assert!(text.contains("command=classify"));
    assert!(text.contains("seed=6"), "resolved config echo expected");
}

#[test]
fn train_on_text_dataset_file() {
    let data = tmp("tiny.txt");
    std::fs::write(
        &data,
        "#dims 3 2 class\n0.1 0.2 0.3 0\n0.4 0.5 0.6 1\n0.7 0.8 0.9 0\n1.0 1.1 1.2 1\n",
    )
    .unwrap();
    let o = bin()
        .args([
            "train",
            "--kind",
            "mean",
            "--data",
            data.to_str().unwrap(),
            "--dim",
            "3",
            "--label-kind",
            "class",
            "--epochs",
            "2",
            "--hidden",
            "2",
            "--batch",
            "2",
            "--val-fraction",
            "0",
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("epoch=0 train_loss="), "{text}");
    assert!(text.contains("final_train_loss="), "{text}");
    std::fs::remove_file(&data).ok();
}

#[test]
fn results_are_independent_of_thread_count() {
    let run = |threads: &str| {
        let o = bin()
            .args([
                "multilabel",
                "--data",
                "synth-labels:n=300,d=8,l=4,seed=5",
                "--folds",
                "2",
                "--epochs",
                "5",
                "--gae-epochs",
                "10",
                "--mlp-hidden",
                "4",
                "--hidden",
                "4",
                "--factors",
                "4",
                "--max-iter",
                "2",
                "--step",
                "1.0",
                "--seed",
                "4",
                "--threads",
                threads,
            ])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .filter(|l| l.starts_with("fold=") || l.contains("median"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn multilabel_writes_per_example_predictions() {
    let out = tmp("preds.txt");
    let o = bin()
        .args([
            "multilabel",
            "--data",
            "synth-labels:n=300,d=8,l=4,seed=5",
            "--folds",
            "1",
            "--epochs",
            "5",
            "--gae-epochs",
            "10",
            "--mlp-hidden",
            "4",
            "--hidden",
            "4",
            "--factors",
            "4",
            "--max-iter",
            "1",
            "--step",
            "1.0",
            "--seed",
            "4",
            "--pred-out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 30, "one line per test example (10% of 300)");
    for line in lines {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(vals.len(), 4);
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    std::fs::remove_file(&out).ok();
}

#[test]
fn classify_saves_a_loadable_ensemble_archive() {
    let out = tmp("ens.model");
    let o = bin()
        .args([
            "classify",
            "--kind",
            "cov-gae",
            "--data",
            "synth-cov:n=50,d=6,k=2,seed=8",
            "--epochs",
            "2",
            "--hidden",
            "4",
            "--factors",
            "3",
            "--calib-epochs",
            "10",
            "--seed",
            "8",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let archive = gaescore::archive::load_archive(&out).unwrap();
    let ens = gaescore::classify::ClassifierEnsemble::from_archive(&archive).unwrap();
    assert_eq!(ens.classes(), 2);
    assert_eq!(ens.input_dim(), 6);
    std::fs::remove_file(&out).ok();
}
