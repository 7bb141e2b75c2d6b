use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kljn(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kljn"))
        .args(args)
        .env("KLJN_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("kljn-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_a_report_and_plot_reads_it() {
    let dir = scratch("run");
    let o = kljn(&dir, &["run", "honest_protocol_c"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("[PASS] t0_est"));
    let report = dir.join("honest_protocol_c.json");
    assert!(report.exists());

    let o = kljn(&dir, &["plot", report.to_str().unwrap(), "--series", "residual"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("# honest_protocol_c / residual"));
    assert_eq!(text.lines().count(), 202);

    let o = kljn(&dir, &["plot", report.to_str().unwrap(), "--series", "nope"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("available"));
}

#[test]
fn run_accepts_a_file_path() {
    let dir = scratch("file");
    let path = dir.join("mine.toml");
    let text = kljn_sync::harness::bundled_text("honest_protocol_b").unwrap().replace("honest_protocol_b", "mine");
    fs::write(&path, text).unwrap();
    let o = kljn(&dir, &["run", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(dir.join("mine.json").exists());
}

#[test]
fn failing_expectation_gives_nonzero_exit() {
    let dir = scratch("fail");
    let path = dir.join("wrong.toml");
    let text = kljn_sync::harness::bundled_text("honest_protocol_a")
        .unwrap()
        .replace("t0_est = 0.005", "t0_est = 0.004");
    fs::write(&path, text).unwrap();
    let o = kljn(&dir, &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("[FAIL] t0_est"));
}

#[test]
fn bad_inputs_are_errors() {
    let dir = scratch("bad");
    let o = kljn(&dir, &["run", "no_such_scenario"]);
    assert_eq!(o.status.code(), Some(2));
    let o = kljn(&dir, &["sweep", "honest_protocol_a", "--param", "clock.nope", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown parameter"));
}

#[test]
fn sweep_prints_one_row_per_value() {
    let dir = scratch("sweep");
    let o = kljn(&dir, &["sweep", "delay_attack_a", "--param", "attack.0.delta", "--values", "0.004,0.004"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
    assert!(dir.join("delay_attack_a.sweep.1.json").exists());
}

#[test]
fn list_and_single_criterion_verify() {
    let dir = scratch("verify");
    let o = kljn(&dir, &["list"]);
    assert!(stdout(&o).lines().any(|l| l == "honest_combined"));
    let o = kljn(&dir, &["verify", "--criterion", "2"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("criterion  2 PASS"));
    let o = kljn(&dir, &["verify", "--criterion", "11"]);
    assert!(!o.status.success());
}
