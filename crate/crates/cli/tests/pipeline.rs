use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tiny_config(out: &Path) -> Value {
    json!({
        "scene": { "patch_size": 32 },
        "corpus": { "pretrain": 12, "finetune": 6, "test": 6, "variants": 1 },
        "data_seed": 3,
        "model": { "encoder": { "stage_widths": [4, 8], "blocks_per_stage": 1 } },
        "pretrain": { "epochs": 1, "batch_size": 4 },
        "finetune": { "epochs": 2, "batch_size": 3, "eval_interval": 1 },
        "analysis": { "samples": 4, "fisher": { "min_pixels": 2 } },
        "seeds": [0, 1],
        "output_dir": out,
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn noisylab(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisylab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("NOISYLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

/// Exit code and the parsed single-line error.
fn failure(out: &Output) -> (i32, Value) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "expected one error line, got {stderr:?}");
    (out.status.code().unwrap(), serde_json::from_str(lines[0]).expect("error line is JSON"))
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|_| panic!("missing {}", p.as_ref().display()))
}

#[test]
fn tiny_pipeline_emits_every_artifact_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = write_config(tmp.path(), "tiny.json", &tiny_config(&out));
    let commands = ["generate", "assess", "pretrain", "finetune", "analyze", "report"];
    for c in commands {
        assert_ok(&noisylab(&[c], &cfg));
    }

    assert!(out.join("corpus/manifest.json").is_file());
    let quality = String::from_utf8(read(out.join("assess/label_quality.csv"))).unwrap();
    assert!(quality.starts_with("CLASS,background,"));
    for label in ["noisy", "exact_mapped"] {
        for seed in [0, 1] {
            let dir = out.join(format!("pretrain/{label}/seed{seed}"));
            for f in ["checkpoint.nlckpt", "runlog.jsonl", "config.json", "config.sha256"] {
                assert!(dir.join(f).is_file(), "{}/{f}", dir.display());
            }
        }
    }
    let table = String::from_utf8(read(out.join("report/finetune_miou.csv"))).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 9, "{table}");
    assert!(lines[0].starts_with("init,framework,encoder_mode,background,"));
    assert!(lines[0].ends_with(",miou_median,miou_mean,miou_std,seeds"));
    let keys: Vec<String> = lines[1..].iter().map(|l| l.split(',').take(3).collect::<Vec<_>>().join("/")).collect();
    assert_eq!(keys[0], "random/unet/fixed");
    assert_eq!(keys[7], "noisy/aspp/finetuned");
    for f in ["fisher_noisy.csv", "fisher_exact_mapped_smoothed.csv", "kl.csv", "kl_smoothed.csv", "kl.svg", "summary.csv", "dominant_pc.png"] {
        assert!(out.join("analysis").join(f).is_file(), "analysis/{f}");
    }
    let grid = image::load_from_memory(&read(out.join("analysis/dominant_pc.png"))).unwrap();
    // Four models, each a row of 32 px tiles with 2 px gaps.
    assert_eq!(grid.height(), 4 * 34 + 2);
    let summary = String::from_utf8(read(out.join("report/summary.md"))).unwrap();
    assert!(summary.contains("Fine-tuning results"));

    // The resolved config and its hash sit next to every run.
    let run = out.join("finetune/noisy/aspp/fixed/seed1");
    let text = read(run.join("config.json"));
    let hash = String::from_utf8(read(run.join("config.sha256"))).unwrap();
    use sha2::Digest;
    let expect: String = sha2::Sha256::digest(&text).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hash.trim(), expect);
    let resolved: Value = serde_json::from_slice(&text).unwrap();
    assert_eq!(resolved["train"]["encoder_mode"], "fixed");
    assert_eq!(resolved["init_checkpoint"], "pretrain/noisy/seed1/checkpoint.nlckpt");

    let stable = [
        "corpus/manifest.json",
        "corpus/test_000023_v0.nlp",
        "assess/label_quality.csv",
        "pretrain/noisy/seed0/checkpoint.nlckpt",
        "finetune/random/unet/finetuned/seed1/checkpoint.nlckpt",
        "finetune/noisy/aspp/fixed/seed0/metrics.csv",
        "analysis/fisher_noisy.csv",
        "analysis/kl.csv",
        "analysis/summary.csv",
        "analysis/dominant_pc.png",
        "analysis/traces/noisy_seed1.nlckpt",
        "report/finetune_miou.csv",
        "report/summary.md",
    ];
    let before: Vec<Vec<u8>> = stable.iter().map(|f| read(out.join(f))).collect();
    for c in commands {
        assert_ok(&noisylab(&[c], &cfg));
    }
    for (f, b) in stable.iter().zip(before) {
        assert_eq!(read(out.join(f)), b, "{f} changed on re-run");
    }
}

#[test]
fn assess_of_clean_labels_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("clean");
    let mut cfg = tiny_config(&out);
    cfg["corpus"] = json!({ "pretrain": 4, "finetune": 2, "test": 2 });
    let path = write_config(tmp.path(), "clean.json", &cfg);
    assert_ok(&noisylab(&["generate"], &path));
    assert_ok(&noisylab(&["assess"], &path));
    let csv = String::from_utf8(read(out.join("assess/label_quality.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    for row in &lines[1..] {
        for cell in row.split(',').skip(1).filter(|c| !c.is_empty()) {
            assert_eq!(cell, "100.00", "{csv}");
        }
    }
}

#[test]
fn seed_and_out_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(&tmp.path().join("unused"));
    cfg["corpus"] = json!({ "pretrain": 4, "finetune": 2, "test": 2 });
    cfg["pretrain"] = json!({ "epochs": 1, "batch_size": 4 });
    let path = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("elsewhere");
    let out_s = out.to_str().unwrap();
    assert_ok(&noisylab(&["generate", "--out", out_s], &path));
    assert_ok(&noisylab(&["pretrain", "--seed", "7", "--out", out_s], &path));
    assert!(out.join("pretrain/noisy/seed7/checkpoint.nlckpt").is_file());
    assert!(!out.join("pretrain/noisy/seed0").exists());
    assert!(!tmp.path().join("unused").exists());
}

#[test]
fn exit_codes_and_error_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");

    let (code, err) = failure(&noisylab(&["generate"], &tmp.path().join("absent.json")));
    assert_eq!((code, err["error"].as_str()), (3, Some("missing_input")));
    assert_eq!(err["exit_code"], 3);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(failure(&noisylab(&["generate"], &bad)).0, 2);

    let mut unknown = tiny_config(&out);
    unknown["finetune"]["epoch"] = json!(3);
    let (code, err) = failure(&noisylab(&["generate"], &write_config(tmp.path(), "unknown.json", &unknown)));
    assert_eq!(code, 2);
    assert!(err["message"].as_str().unwrap().contains("epoch"));

    let mut invalid = tiny_config(&out);
    invalid["scene"]["patch_size"] = json!(30);
    assert_eq!(failure(&noisylab(&["generate"], &write_config(tmp.path(), "invalid.json", &invalid))).0, 2);

    let good = write_config(tmp.path(), "good.json", &tiny_config(&out));
    let (code, err) = failure(&noisylab(&["frobnicate"], &good));
    assert_eq!((code, err["error"].as_str()), (2, Some("config")));

    // Downstream commands without their inputs.
    for c in ["assess", "pretrain", "finetune", "analyze", "report"] {
        assert_eq!(failure(&noisylab(&[c], &good)).0, 3, "{c}");
    }
    assert_ok(&noisylab(&["generate"], &good));
    assert_eq!(failure(&noisylab(&["finetune"], &good)).0, 3, "finetune without pretrained encoders");

    // A corrupt checkpoint is reported as a missing (unusable) input.
    let mut small = tiny_config(&out);
    small["matrix"] = json!({ "pretrain_labels": ["noisy"], "inits": ["noisy"], "frameworks": ["unet"], "encoder_modes": ["fixed"] });
    small["seeds"] = json!([0]);
    let small = write_config(tmp.path(), "small.json", &small);
    let ckpt = out.join("pretrain/noisy/seed0/checkpoint.nlckpt");
    fs::create_dir_all(ckpt.parent().unwrap()).unwrap();
    fs::write(&ckpt, b"NLCKPT01 garbage").unwrap();
    let (code, err) = failure(&noisylab(&["finetune"], &small));
    assert_eq!(code, 3, "{err}");
}

#[test]
fn divergent_training_exits_with_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut cfg = tiny_config(&out);
    cfg["corpus"] = json!({ "pretrain": 8, "finetune": 2, "test": 2 });
    cfg["pretrain"] = json!({ "epochs": 3, "batch_size": 4, "base_lr": 1e30 });
    cfg["seeds"] = json!([0]);
    let path = write_config(tmp.path(), "diverge.json", &cfg);
    assert_ok(&noisylab(&["generate"], &path));
    let (code, err) = failure(&noisylab(&["pretrain"], &path));
    assert_eq!((code, err["error"].as_str()), (4, Some("numerical")));
}
