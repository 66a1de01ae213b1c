use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY_CONFIG: &str = r#"
seed = 11

[data]
fmri_length = 40
eeg_unified_length = 80
segment_length = 40

[encoder.spatial]
d_model = 8
n_heads = 2
n_layers = 1
d_enc = 4
d_ff = 8

[encoder.temporal]
d_model = 8
n_heads = 2
n_layers = 1
d_enc = 4
d_ff = 8

[encoder.frequency]
d_model = 8
n_heads = 2
n_layers = 1
d_enc = 4
d_ff = 8

[projector]
hidden = 8

[classifier]
hidden = 8

[train]
epochs = 2
finetune_epochs = 2
pretrain_batch = 6
finetune_batch = 4
folds = 3
repeats = 1
"#;

const TINY_SPEC: &str = "n_subjects = 12\nn_classes = 2\nn_roi = 4\nclass_effect = 1.0\nshared_latent_dim = 4\nseed = 5\neeg_min_length = 400\n";

fn mcsp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcsp"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MCSP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = mcsp(&[], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &stderr(&out);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(mcsp(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn param_count_prints_every_domain() {
    let dir = TempDir::new().unwrap();
    let text = ok(&mcsp(&["--param-count"], dir.path()));
    for key in [
        "n_roi 100",
        "spatial ",
        "temporal ",
        "frequency ",
        "classifier ",
        "total ",
    ] {
        assert!(text.contains(key), "{text}");
    }
}

#[test]
fn bad_config_is_reported_on_one_line_with_exit_1() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.toml"), "[loss]\ntau = -2\n").unwrap();
    let out = mcsp(&["--config", "bad.toml", "--param-count"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("mcsp: config: "), "{err}");
    assert!(err.contains("loss.tau"), "{err}");
}

#[test]
fn malformed_toml_is_a_format_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("bad.toml"), "[loss\n").unwrap();
    let out = mcsp(&["--config", "bad.toml", "--param-count"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).starts_with("mcsp: format: "),
        "{}",
        stderr(&out)
    );
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = mcsp(
        &["pretrain", "--data", "nowhere", "--out", "x.ckpt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("mcsp: io: "), "{}", stderr(&out));
}

#[test]
fn finetune_needs_init_or_scratch() {
    let dir = TempDir::new().unwrap();
    let out = mcsp(
        &[
            "finetune", "--data", "d", "--task", "task0", "--report", "r.txt",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let dir = TempDir::new().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../default.cfg");
    let shipped = ok(&mcsp(
        &["--config", path.to_str().unwrap(), "--param-count"],
        dir.path(),
    ));
    let builtin = ok(&mcsp(&["--param-count"], dir.path()));
    assert_eq!(shipped, builtin);
}

fn pipeline(root: &Path) -> (Vec<u8>, String, String) {
    fs::write(root.join("run.toml"), TINY_CONFIG).unwrap();
    fs::write(root.join("spec.toml"), TINY_SPEC).unwrap();
    ok(&mcsp(
        &["synth-gen", "--spec", "spec.toml", "--out", "raw"],
        root,
    ));
    ok(&mcsp(
        &[
            "--config",
            "run.toml",
            "build-data",
            "--in",
            "raw",
            "--out",
            "data",
        ],
        root,
    ));
    ok(&mcsp(
        &[
            "--config",
            "run.toml",
            "pretrain",
            "--data",
            "data",
            "--out",
            "pre/model.ckpt",
        ],
        root,
    ));
    let table = ok(&mcsp(
        &[
            "finetune",
            "--data",
            "data",
            "--init",
            "pre/model.ckpt",
            "--task",
            "task0",
            "--report",
            "ft/report.txt",
        ],
        root,
    ));
    let ckpt = fs::read(root.join("pre/model.ckpt")).unwrap();
    let report = fs::read_to_string(root.join("ft/report.txt")).unwrap();
    (ckpt, report, table)
}

#[test]
fn pipeline_is_deterministic_and_leaves_run_records() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (ck_a, rep_a, table_a) = pipeline(a.path());
    let (ck_b, rep_b, _) = pipeline(b.path());
    assert!(ck_a == ck_b, "checkpoints differ");
    assert_eq!(rep_a, rep_b);
    assert!(table_a.contains("auroc"), "{table_a}");

    for f in [
        "pre/pretrain.config.toml",
        "pre/pretrain.run.toml",
        "ft/finetune.config.toml",
        "ft/finetune.run.toml",
    ] {
        assert!(a.path().join(f).exists(), "{f} missing");
    }
    let stamp = fs::read_to_string(a.path().join("pre/pretrain.run.toml")).unwrap();
    assert!(
        stamp.contains("seed = 11") && stamp.contains("version = "),
        "{stamp}"
    );
    // finetune with no --config picks up the snapshot stored in the checkpoint
    let cfg = fs::read_to_string(a.path().join("ft/finetune.config.toml")).unwrap();
    assert!(cfg.contains("d_model = 8"), "{cfg}");

    let eval = ok(&mcsp(&["evaluate", "--report", "ft/report.txt"], a.path()));
    assert!(eval.contains("AUROC"), "{eval}");
}

#[test]
fn data_dir_falls_back_to_environment() {
    let root = TempDir::new().unwrap();
    let root = root.path();
    fs::write(root.join("run.toml"), TINY_CONFIG).unwrap();
    fs::write(root.join("spec.toml"), TINY_SPEC).unwrap();
    ok(&mcsp(
        &["synth-gen", "--spec", "spec.toml", "--out", "raw"],
        root,
    ));
    ok(&mcsp(
        &[
            "--config",
            "run.toml",
            "build-data",
            "--in",
            "raw",
            "--out",
            "data",
        ],
        root,
    ));
    let out = Command::new(env!("CARGO_BIN_EXE_mcsp"))
        .args([
            "--config",
            "run.toml",
            "finetune",
            "--scratch",
            "--task",
            "task0",
            "--report",
            "r.txt",
            "--out",
            "final.ckpt",
        ])
        .current_dir(root)
        .env("MCSP_DATA_DIR", root.join("data"))
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("final.ckpt").exists());

    let out = mcsp(
        &[
            "--config",
            "run.toml",
            "distill",
            "--data",
            "data",
            "--teacher",
            "final.ckpt",
            "--student-domain",
            "temporal",
            "--task",
            "task0",
            "--report",
            "d.txt",
        ],
        root,
    );
    let text = ok(&out);
    assert!(
        text.contains("student/temporal") && text.contains("hard-only"),
        "{text}"
    );
}

#[test]
fn unknown_task_is_a_validation_error() {
    let root = TempDir::new().unwrap();
    let root = root.path();
    fs::write(root.join("run.toml"), TINY_CONFIG).unwrap();
    fs::write(root.join("spec.toml"), TINY_SPEC).unwrap();
    ok(&mcsp(
        &["synth-gen", "--spec", "spec.toml", "--out", "raw"],
        root,
    ));
    ok(&mcsp(
        &[
            "--config",
            "run.toml",
            "build-data",
            "--in",
            "raw",
            "--out",
            "data",
        ],
        root,
    ));
    let out = mcsp(
        &[
            "--config",
            "run.toml",
            "finetune",
            "--scratch",
            "--data",
            "data",
            "--task",
            "nope",
            "--report",
            "r.txt",
        ],
        root,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).starts_with("mcsp: validation: "),
        "{}",
        stderr(&out)
    );
}
