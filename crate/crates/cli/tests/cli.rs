use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_slicescale"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
agent = "wcsac"
seed = 3
epochs = 1
episodes_per_epoch = 2
validation_episodes = 2
eval_episodes = 4

[wcsac]
hidden = [8, 8]
batch_size = 8
warmup_steps = 10

[traffic]
kind = "trace"

[finetune]
epochs = 1

[sweep]
d_values = [-1.0, 1.0]
noise_sigmas = [0.0, 0.1]
"#;

#[test]
fn end_to_end_pipeline_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, SMALL);
    run(&["--config", &cfg, "train"], d);
    let ck = d.join("checkpoints/wcsac-best.json");
    assert!(ck.exists());
    let ck = ck.to_string_lossy().into_owned();
    let out = run(&["--config", &cfg, "evaluate", "--checkpoint", &ck, "--offset", "2"], d);
    assert!(String::from_utf8_lossy(&out.stdout).contains("trace+2/stochastic"));
    run(&["--config", &cfg, "evaluate", "--checkpoint", "pred-alloc"], d);
    run(&["--config", &cfg, "sweep-conditions", "--checkpoint", &ck], d);
    run(&["--config", &cfg, "sweep-noise", "--checkpoint", &ck, "--episodes", "2"], d);
    run(&["--config", &cfg, "finetune", "--checkpoint", &ck], d);
    assert!(d.join("checkpoints/wcsac-finetuned.json").exists());

    let table = fs::read_to_string(d.join("table.csv")).unwrap();
    assert!(table.contains("pred-alloc,trace/stochastic"));
    assert!(table.contains("wcsac-finetuned,d+1"));
    for f in ["metrics.csv", "curves.csv", "summary.json", "curves/wcsac.png", "curves/sweep-conditions-wcsac-best.png"] {
        assert!(d.join(f).exists(), "{f}");
    }

    // Re-emitting from the summary reproduces the CSVs byte for byte.
    let before = fs::read(d.join("metrics.csv")).unwrap();
    let other = tempfile::tempdir().unwrap();
    let summary = d.join("summary.json").to_string_lossy().into_owned();
    run(&["report", "--summary", &summary], other.path());
    assert_eq!(fs::read(other.path().join("metrics.csv")).unwrap(), before);
}

#[test]
fn model_generation_and_fitting() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    run(&["--seed", "4", "gen-model", "--samples-per-node", "5"], d);
    let samples = d.join("samples.csv");
    assert_eq!(fs::read_to_string(&samples).unwrap().lines().count(), 1 + 40 * 5);
    let fitted = tempfile::tempdir().unwrap();
    run(&["fit-model", "--samples", samples.to_str().unwrap()], fitted.path());
    assert_eq!(
        fs::read(d.join("model.csv")).unwrap(),
        fs::read(fitted.path().join("model.csv")).unwrap()
    );
    run(&["gen-trace"], d);
    assert_eq!(fs::read_to_string(d.join("diurnal_trace.csv")).unwrap().lines().count(), 1441);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, "agent = \"wcsac\"\nbogus = 1\n");
    let out = Command::new(env!("CARGO_BIN_EXE_slicescale"))
        .args(["--config", &cfg, "train"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let out = Command::new(env!("CARGO_BIN_EXE_slicescale"))
        .args(["--out", d.to_str().unwrap(), "finetune", "--checkpoint", "missing.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
