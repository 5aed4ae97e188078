use std::path::Path;
use std::process::{Command, Output};

fn dimml(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimml"))
        .current_dir(dir)
        .env_remove("DIMML_OUTPUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn help_lists_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = dimml(dir.path(), &["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for key in ["plan.loss.lambda_D", "plan.loss.lambda_s", "t_lw", "recipe_preset", "output_dir"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn staged_workflow_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dimml(dir, &["gen-data", "--set", "output_dir=w", "--csv", "w/csv"]);
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(dir.join("w/dataset.dml").exists());
    assert!(dir.join("w/csv/test_modality2.csv").exists());

    let out = dimml(dir, &["train", "--data", "w/dataset.dml", "--out", "w", "--seed", "2"]);
    assert_eq!(code(&out), 0, "{out:?}");
    for f in ["encoders.ckpt", "epochs.jsonl", "dims.json", "dims.csv", "config.json"] {
        assert!(dir.join("w").join(f).exists(), "{f}");
    }

    assert_eq!(code(&dimml(dir, &["fuse", "--checkpoint", "w/encoders.ckpt"])), 0);
    assert!(dir.join("w/fused.ckpt").exists());

    let out = dimml(dir, &["dims", "--checkpoint", "w/fused.ckpt", "--out", "w/final"]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.join("w/final/dims.csv")).unwrap();
    assert!(csv.starts_with("modality,dim,score,effective\n1,0,"));

    let out = dimml(
        dir,
        &["evaluate", "--checkpoint", "w/fused.ckpt", "--mode", "weighted", "--per-sample", "w/ps.csv"],
    );
    assert_eq!(code(&out), 0);
    let record: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(record["mode"], "weighted");
    assert_eq!(record["accuracy"], record["metrics"]["weighted"]);
    let ps = std::fs::read_to_string(dir.join("w/ps.csv")).unwrap();
    assert!(ps.starts_with("sample,label,pred_uni1,pred_uni2,pred_fusion,pred_weighted,c1,c2,cf,w1,w2,wf\n"));
    assert_eq!(ps.lines().count(), 601);

    let out = dimml(dir, &["export-features", "--checkpoint", "w/fused.ckpt", "--out", "w/feat"]);
    assert_eq!(code(&out), 0);
    let rows = std::fs::read_to_string(dir.join("w/feat/modality1.csv")).unwrap();
    assert_eq!(rows.lines().count(), 601);
}

#[test]
fn run_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = Command::new(env!("CARGO_BIN_EXE_dimml"))
        .current_dir(dir)
        .env("DIMML_OUTPUT_DIR", "env_dir")
        .args(["run", "--set", "plan.mode=joint", "--set", "seeds=[1,2]"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    for s in [1, 2] {
        let seed_dir = dir.join(format!("env_dir/seed_{s}"));
        assert!(seed_dir.join("metrics.json").exists());
        assert!(!seed_dir.join("dims.csv").exists());
    }
    let out = dimml(dir, &["compare", "env_dir"]);
    assert_eq!(code(&out), 0);
    let table = stdout(&out);
    assert!(table.starts_with("run,mode,metric,mean,std,n\n"));
    assert!(table.contains(",joint,multimodal,"));
}

#[test]
fn seed_flag_overrides_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.json"), r#"{"seed": 5, "output_dir": "a"}"#).unwrap();
    assert_eq!(code(&dimml(dir, &["gen-data", "--config", "c.json", "--out", "five.dml"])), 0);
    assert_eq!(code(&dimml(dir, &["gen-data", "--config", "c.json", "--seed", "6", "--out", "six.dml"])), 0);
    assert_eq!(code(&dimml(dir, &["gen-data", "--seed", "5", "--out", "again.dml"])), 0);
    let read = |f: &str| std::fs::read(dir.join(f)).unwrap();
    assert_ne!(read("five.dml"), read("six.dml"));
    assert_eq!(read("five.dml"), read("again.dml"));
}

#[test]
fn exit_codes_separate_validation_from_runtime_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dimml(dir, &["run", "--set", "plan.loss.lambda_D=-1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_D"));
    assert_eq!(code(&dimml(dir, &["run", "--set", "no_such_key=1"])), 1);
    assert_eq!(code(&dimml(dir, &["no-such-command"])), 1);

    let out = dimml(dir, &["run", "--set", "plan.lr.initial=1e300", "--set", "output_dir=bad"]);
    assert_eq!(code(&out), 2);
    assert!(dir.join("bad/seed_0/FAILED").exists());
    assert_eq!(code(&dimml(dir, &["evaluate", "--checkpoint", "missing.ckpt"])), 2);
}
