use std::path::Path;
use std::process::{Command, Output};

fn kiras(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kiras"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KIRAS_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn error_json(o: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let last = err.trim().lines().last().unwrap_or("");
    assert_eq!(err.trim().lines().count(), 1, "stderr must be one line: {err}");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not JSON ({e}): {last}"))
}

const TINY: &str = r#"
t1 = 2
t2 = 4
num_envs = 4
horizon = 8
episode_steps = 60
premium_horizon = 20
discriminator_batch = 16
checkpoint_every = 2
out_dir = "run"
actor_hidden = [16]
critic_hidden = [16]
encoder_hidden = [16]
decoder_hidden = [16]
discriminator_hidden = [16]
add_skill_t1 = 1
add_skill_t2 = 1
"#;

fn trained(dir: &Path) -> std::path::PathBuf {
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let o = kiras(&["train", "--config", "tiny.toml"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(stdout(&o))
}

#[test]
fn train_eval_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    assert!(ckpt.exists());
    assert!(dir.path().join("run/ckpt_000002.kira").exists());
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);

    let c = ckpt.to_str().unwrap();
    let o = kiras(&["eval", "--ckpt", c, "--skill", "crawl", "--terrain", "stairs", "--level", "3", "--episodes", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["skill"], "crawl");
    assert_eq!(report["terrain"], "stairs");

    std::fs::write(dir.path().join("s.txt"), "0 0 0.4\n0.5 1 0.0\n").unwrap();
    for out in ["a.csv", "b.csv"] {
        let o = kiras(&["replay", "--ckpt", c, "--script", "s.txt", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.csv")).unwrap());

    std::fs::write(dir.path().join("bad.txt"), "0 0 0.4\n1.0 zero 0\n").unwrap();
    let o = kiras(&["replay", "--ckpt", c, "--script", "bad.txt", "--out", "x.csv"], dir.path());
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"], "script");
    assert!(e["message"].as_str().unwrap().contains("line 2"));
}

#[test]
fn resume_continues_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let full = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    std::fs::write(dir.path().join("resume.toml"), TINY.replace("\"run\"", "\"resumed\"")).unwrap();
    let o = kiras(&["train", "--config", "resume.toml", "--resume", "run/ckpt_000002.kira"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let tail = std::fs::read_to_string(dir.path().join("resumed/metrics.csv")).unwrap();
    let expected: Vec<&str> = full.lines().skip(3).collect();
    let got: Vec<&str> = tail.lines().skip(1).collect();
    assert_eq!(got, expected);
}

#[test]
fn add_skill_widens_and_trains() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    std::fs::write(
        dir.path().join("new.toml"),
        "[[skill]]\nname = \"low_walk\"\nbase_height = 0.15\npitch_deg = 0.0\n",
    )
    .unwrap();
    let o = kiras(&["add-skill", "--ckpt", ckpt.to_str().unwrap(), "--keyframe", "new.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let header = std::fs::read_to_string(dir.path().join("run/add_low_walk/metrics.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("prob_low_walk"));
    let rows = header.lines().count() - 1;
    assert_eq!(rows, 2);
}

#[test]
fn export_terrain_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = kiras(&["export-terrain", "--type", "stairs", "--level", "5", "--out", "t.csv"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("x,height"));
    assert!(csv.lines().count() > 100);

    let o = kiras(&["export-terrain", "--type", "lava", "--level", "5", "--out", "t.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"], "usage");

    let o = kiras(&["export-terrain", "--type", "flat", "--level", "12", "--out", "t.csv"], dir.path());
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "invalid_argument");

    std::fs::write(dir.path().join("bad.toml"), "t1 = 9000\nt2 = 100\n").unwrap();
    let o = kiras(&["train", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "config");

    std::fs::write(dir.path().join("bad.kira"), b"KIRA\x09\x00\x00\x00\x00\x00\x00\x00").unwrap();
    let o = kiras(&["eval", "--ckpt", "bad.kira", "--skill", "walk", "--terrain", "flat", "--level", "0", "--episodes", "1"], dir.path());
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "checkpoint_version");

    let o = Command::new(env!("CARGO_BIN_EXE_kiras"))
        .args(["export-terrain", "--type", "flat", "--level", "0", "--out", "t.csv"])
        .current_dir(dir.path())
        .env("KIRAS_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(error_json(&o)["message"].as_str().unwrap().contains("KIRAS_THREADS"));
}
