use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cvbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvbm")).args(args).output().expect("binary runs")
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr line");
    let v: serde_json::Value = serde_json::from_str(line).expect("stderr is json");
    assert!(v["error"].is_string() && v["detail"].is_string());
    v
}

const TINY: [&str; 18] = [
    "--set", "data.generator.height=16",
    "--set", "data.generator.width=16",
    "--set", "data.generator.unlabeled=4",
    "--set", "data.generator.test=3",
    "--set", "network.encoder_widths=[2,3,4]",
    "--set", "trainer.pretrain_steps=3",
    "--set", "trainer.train_steps=3",
    "--set", "trainer.labeled_batch=2",
    "--set", "trainer.unlabeled_batch=2",
];

fn verb(v: &str, dir: &Path, extra: &[&str]) -> Output {
    let data = dir.join("data");
    let out = dir.join("run");
    let data_set = format!("data.path={}", serde_json::Value::String(data.display().to_string()));
    let mut args = vec![v, "--out", out.to_str().unwrap(), "--seed", "5", "--set", &data_set];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    cvbm(&args)
}

#[test]
fn full_pipeline_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    for v in ["generate-data", "pretrain", "train", "evaluate"] {
        let o = verb(v, dir.path(), &[]);
        assert!(o.status.success(), "{v}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let run = dir.path().join("run");
    for f in ["config.json", "teacher.ckpt", "student.ckpt", "teacher_final.ckpt", "losses.csv", "metrics.csv", "pretrain_losses.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("id,class,dsc,jaccard,hd95,asd\n"));
    assert!(metrics.contains("\nmean,all,"));
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 5);
    assert_eq!(echo["trainer"]["train_steps"], 3);

    let losses = fs::read(run.join("losses.csv")).unwrap();
    let o = verb("plot", dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(run.join("losses.csv")).unwrap(), losses);
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap(), metrics);
    assert!(run.join("plots/losses.svg").is_file());
    assert!(run.join("plots/metrics.svg").is_file());
}

#[test]
fn ablate_emits_sixty_rows_for_three_seeds() {
    let dir = tempfile::tempdir().unwrap();
    assert!(verb("generate-data", dir.path(), &[]).status.success());
    let o = verb("ablate", dir.path(), &["--seeds", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,seed,metric,value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 60);
    for v in ["supervised", "fg_only", "plus_bg", "plus_mix", "full"] {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{v},"))).count(), 12);
    }
}

#[test]
fn verify_theory_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("th");
    let o = cvbm(&[
        "verify-theory",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "theory.scenarios=3000",
        "--set",
        "theory.counterexample_draws=3000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["descent_failures"], 0);
    assert!(summary["counterexamples"].as_u64().unwrap() >= 1);
    let report = fs::read_to_string(out.join("theory_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3001);
    let header: Vec<&str> = report.lines().next().unwrap().split(',').collect();
    let asserted = header.iter().position(|h| *h == "descent_asserted").unwrap();
    let decreased = header.iter().position(|h| *h == "entropy_decreased").unwrap();
    for line in report.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[asserted] == "true" {
            assert_eq!(f[decreased], "true");
        }
    }
    assert!(out.join("config.json").is_file());
    assert!(out.join("theory_bounds.csv").is_file());
}

#[test]
fn train_without_teacher_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert!(verb("generate-data", dir.path(), &[]).status.success());
    let o = verb("train", dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"], "not_found");
    assert!(dir.path().join("run/config.json").is_file());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    for bad in ["trainer.lr=-0.5", "trainer.unknown_key=1", "augment.beta=2"] {
        let o = cvbm(&["pretrain", "--out", out.to_str().unwrap(), "--set", bad]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        assert_eq!(error_json(&o)["error"], "config");
    }
    let f = dir.path().join("bad.json");
    fs::write(&f, "{not json").unwrap();
    let o = cvbm(&["pretrain", "--config", f.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = cvbm(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    error_json(&o);
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("y");
    let o = cvbm(&["pretrain", "--config", dir.path().join("none.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let o = cvbm(&[
        "pretrain",
        "--out",
        out.to_str().unwrap(),
        "--set",
        &format!("data.path={}", serde_json::Value::String(dir.path().join("nodata").display().to_string())),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = cvbm(&["plot", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
