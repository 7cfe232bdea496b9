use std::path::Path;
use std::process::{Command, Output};

use texfilter::{load_image, save_image, Image};

const BIN: &str = env!("CARGO_BIN_EXE_texfilter");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("TEXFILTER_CONFIG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write_input(dir: &Path, name: &str, size: usize) {
    let img = Image::from_fn(size, size, 3, |y, x, c| {
        let base = if x < size / 2 { 0.3 } else { 0.7 };
        let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
        base + 0.1 * sign + 0.02 * c as f64
    });
    save_image(&img, dir.join(name)).unwrap();
}

#[test]
fn reward_prints_one_json_line_with_four_fields() {
    let d = tempfile::tempdir().unwrap();
    write_input(d.path(), "a.png", 32);
    let o = run(d.path(), &["reward", "a.png", "a.png"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), 4);
    for key in ["texture", "structure", "fidelity", "total"] {
        assert!(obj[key].is_f64(), "{key} missing in {out}");
    }
    assert_eq!(obj["structure"].as_f64(), Some(1.0));
    assert_eq!(obj["fidelity"].as_f64(), Some(1.0));
}

#[test]
fn filter_writes_output_and_trace() {
    let d = tempfile::tempdir().unwrap();
    write_input(d.path(), "in.png", 32);
    let o = run(d.path(), &["filter", "in.png", "out.png", "--steps", "50", "--trace", "t.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    assert_eq!(load_image(d.path().join("out.png")).unwrap().dims(), (32, 32, 3));
    let trace = std::fs::read_to_string(d.path().join("t.csv")).unwrap();
    assert_eq!(trace.lines().count(), 51);
}

#[test]
fn missing_input_is_an_io_error_naming_the_path() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["filter", "nope.png", "out.png"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.png"));
    assert!(!d.path().join("out.png").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    write_input(d.path(), "a.png", 32);
    assert_eq!(run(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["reward", "a.png"]).status.code(), Some(2));
    let o = run(d.path(), &["reward", "a.png", "a.png", "--weights", "0.5,-1,0.2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(d.path(), &["filter", "a.png", "b.png", "--steps", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn computation_errors_exit_with_four() {
    let d = tempfile::tempdir().unwrap();
    write_input(d.path(), "small.png", 8);
    let o = run(d.path(), &["reward", "small.png", "small.png"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn verbose_echoes_version_and_config_on_stderr_only() {
    let d = tempfile::tempdir().unwrap();
    write_input(d.path(), "a.png", 32);
    let o = run(d.path(), &["--verbose", "reward", "a.png", "a.png"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains(env!("CARGO_PKG_VERSION")));
    assert!(stderr(&o).contains("\"optimize\""));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.json"), r#"{"policy": {"epochs": 2, "group_size": 4}}"#).unwrap();
    let rows = |o: &Output| stdout(o).lines().count() - 1;

    let o = run(d.path(), &["toy-rft", "--config", "cfg.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rows(&o), 2);

    let o = run(d.path(), &["toy-rft", "--config", "cfg.json", "--epochs", "3"]);
    assert_eq!(rows(&o), 3);

    let o = Command::new(BIN)
        .args(["toy-rft"])
        .current_dir(d.path())
        .env("TEXFILTER_CONFIG", "cfg.json")
        .output()
        .unwrap();
    assert_eq!(rows(&o), 2);

    std::fs::write(d.path().join("bad.json"), r#"{"policy": {"epochs": 2, "typo": 1}}"#).unwrap();
    let o = run(d.path(), &["toy-rft", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn external_upsampler_hook_runs_a_subprocess() {
    let d = tempfile::tempdir().unwrap();
    write_input(d.path(), "a.png", 16);
    let direct = run(d.path(), &["upsample", "a.png", "direct.png", "--factor", "4"]);
    assert!(direct.status.success());
    let hook = format!("external:{BIN} upsample {{in}} {{out}} --factor {{scale}}");
    let o = run(
        d.path(),
        &["upsample", "a.png", "hooked.png", "--factor", "4", "--upsampler", &hook],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = load_image(d.path().join("direct.png")).unwrap();
    let b = load_image(d.path().join("hooked.png")).unwrap();
    assert_eq!(a.dims(), (64, 64, 3));
    assert_eq!(a, b);

    let o = run(
        d.path(),
        &["upsample", "a.png", "bad.png", "--upsampler", "external:false {in} {out}"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("exited"));
}

#[test]
fn synth_then_eval_reports_every_method() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["synth", "suite", "--count", "2", "--height", "32", "--width", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).trim().ends_with("manifest.jsonl"));
    let o = run(
        d.path(),
        &[
            "eval", "suite/manifest.jsonl", "--method", "identity", "--method", "gt", "--method",
            "broken=false {in} {out}", "--no-timing", "--csv", "r.csv",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("failed"));
    let csv = std::fs::read_to_string(d.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("pair,method,psnr,ssim"));
    // two pairs times three methods, then one mean row per method
    assert_eq!(lines.len(), 1 + 6 + 3);
    assert!(lines.last().unwrap().starts_with("mean,broken,,"));
    assert!(lines.iter().any(|l| l.starts_with("pair_0000,gt,inf,")));
}

#[test]
fn help_exits_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["pyramid", "metric", "upsample", "reward", "filter", "enhance", "synth", "eval", "toy-rft"] {
        assert!(stdout(&o).contains(sub), "{sub} missing from help");
    }
}
