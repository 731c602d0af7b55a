use std::path::Path;
use std::process::{Command, Output};

fn sacsvg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sacsvg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sacsvg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--preset=desk",
    "--set=warmup.steps=40",
    "--set=eval.interval=40",
    "--set=eval.episodes=1",
    "--set=step.batch=16",
    "--set=seq.batch=8",
    "--set=val.batch=8",
    "--set=actor.hidden=8",
    "--set=critic.hidden=8",
    "--set=model.hidden=8",
    "--set=model.gru_hidden=4",
];

fn train(dir: &Path, extra: &[&str]) -> String {
    let out = dir.to_str().unwrap();
    let mut args = vec!["train", "--out-dir", out, "--env", "linear", "--steps", "80", "--horizon", "1"];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args)
}

#[test]
fn train_writes_logs_and_a_checkpoint_that_eval_reads() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = train(dir.path(), &[]);
    assert!(stdout.contains("step 80"), "{stdout}");
    for f in ["metrics.jsonl", "metrics.csv", "config.txt", "checkpoint/params.bin", "checkpoint/meta.json", "checkpoint/replay.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let rows = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 3);

    let run = dir.path().to_str().unwrap();
    let first = ok(&["eval", run, "--episodes", "3", "--seed", "5"]);
    let second = ok(&["eval", run, "--episodes", "3", "--seed", "5"]);
    assert_eq!(first, second);
    assert!(first.contains("over 3 episodes"));
}

#[test]
fn flags_override_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.cfg");
    std::fs::write(&file, "# comment\nenv = pendulum\nsteps = 5000\nseed = 3\n").unwrap();
    let out = dir.path().join("out");
    train(&out, &["--config", file.to_str().unwrap(), "--seed", "9"]);
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("env = linear"));
    assert!(echoed.contains("steps = 80"));
    assert!(echoed.contains("seed = 9"));
}

#[test]
fn bad_configuration_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = sacsvg(&["train", "--out-dir", dir.path().to_str().unwrap(), "--set", "actor.lr=-1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("actor.lr"));
    let out = sacsvg(&["train", "--out-dir", dir.path().to_str().unwrap(), "--env", "cartpole"]);
    assert!(!out.status.success());
}

#[test]
fn plot_aggregates_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&a, &["--seed", "1"]);
    train(&b, &["--seed", "2"]);
    let plots = dir.path().join("plots");
    let stdout = ok(&["plot", a.to_str().unwrap(), b.to_str().unwrap(), "--out-dir", plots.to_str().unwrap()]);
    assert!(stdout.contains("3 points over 2 runs"), "{stdout}");
    assert!(plots.join("returns.svg").exists() && plots.join("returns.csv").exists());
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path(), &["--set=checkpoint.interval=40"]);
    let run = dir.path().to_str().unwrap();
    // The finished run resumes to no further steps and leaves the log intact.
    ok(&["train", "--out-dir", run, "--resume"]);
    let rows = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn search_and_ablations_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let search = dir.path().join("search");
    let mut args = vec!["search-entropy", "--trials", "2", "--env", "linear", "--steps", "80", "--out-dir"];
    args.push(search.to_str().unwrap());
    args.extend(SMALL);
    let stdout = ok(&args);
    assert_eq!(stdout.lines().count(), 2);
    assert!(search.join("ranking.json").exists());

    let expansion = dir.path().join("expansion");
    let mut args = vec!["ablate-expansion", "--seeds", "0", "--model-noise", "0.1", "--env", "linear", "--steps", "80"];
    args.extend(["--out-dir", expansion.to_str().unwrap()]);
    args.extend(SMALL);
    let stdout = ok(&args);
    assert!(stdout.contains("critic-mve below actor-svg on"), "{stdout}");
    assert!(expansion.join("model_error.csv").exists());

    let corpus_run = dir.path().join("corpus");
    let out = corpus_run.to_str().unwrap();
    let mut args = vec!["train", "--out-dir", out, "--env", "linear", "--steps", "600"];
    args.extend(SMALL);
    args.push("--set=warmup.steps=600");
    ok(&args);
    let corpus = corpus_run.join("checkpoint").join("replay.bin");
    let arch = dir.path().join("arch");
    let stdout = ok(&[
        "ablate-arch",
        "--corpus",
        corpus.to_str().unwrap(),
        "--phases",
        "2",
        "--updates",
        "20",
        "--out-dir",
        arch.to_str().unwrap(),
    ]);
    assert_eq!(stdout.lines().count(), 2 * 3 * 2);
    assert!(arch.join("architecture.csv").exists());
}
