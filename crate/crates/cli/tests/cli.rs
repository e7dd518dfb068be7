use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use pomdp_design::discretize::{adversarial, morris_lecar, pcr, six_state, MorrisLecarParam, MorrisLecarParams, PcrParams};
use pomdp_design::io::load_model;
use pomdp_design::{HistoryWindow, WindowCodec};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pomdp-design"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn run_with_stdin(config: &Path, seed: &str, stdin: &str) -> Output {
    let mut child = bin()
        .args(["play", "--seed", seed, "--config"])
        .arg(config)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

const SIX_POFI: &str = r#"
horizon = 40
[model]
builtin = "six-state"
[theta]
value = 0.37
[solver]
kind = "pofi"
m = 1
"#;

#[test]
fn solve_reproduces_six_state_window_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SIX_POFI);
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("policy.json")).unwrap()).unwrap();
    let table: Vec<usize> = serde_json::from_value(meta["long_run"].clone()).unwrap();
    let codec = WindowCodec::new(2, 2, 1).unwrap();
    // (y_t, y_{t-1}, u_{t-1}) -> u_t, control 0 is +1
    let expected = [
        ((0, 0, 0), 0),
        ((1, 0, 0), 1),
        ((0, 1, 0), 1),
        ((1, 1, 0), 0),
        ((0, 0, 1), 1),
        ((1, 0, 1), 0),
        ((0, 1, 1), 0),
        ((1, 1, 1), 1),
    ];
    for ((y_t, y_prev, u_prev), u) in expected {
        let w = HistoryWindow::new(vec![y_prev, y_t], vec![u_prev]).unwrap();
        assert_eq!(table[codec.encode(&w).unwrap()], u);
    }
    let csv = std::fs::read_to_string(out.join("policy.csv")).unwrap();
    assert!(csv.starts_with("t,window_index,control_index,value\n"));
    // t = 0 has 2 windows, every later time 8
    assert_eq!(csv.lines().count(), 1 + 2 + 39 * 8);
}

#[test]
fn solve_full_observation_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SIX_POFI.replace("kind = \"pofi\"\nm = 1", "kind = \"fofi\""));
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(out.join("policy.json")).unwrap()).unwrap();
    let lr: Vec<usize> = serde_json::from_value(meta["long_run"].clone()).unwrap();
    assert_eq!((lr[0], lr[1], lr[4], lr[5]), (0, 0, 1, 1));
    assert!(std::fs::read_to_string(out.join("policy.csv")).unwrap().starts_with("t,state_index,"));
}

#[test]
fn missing_horizon_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SIX_POFI.replace("horizon = 40", ""));
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
    assert!(!out.exists(), "no output on failure");
}

#[test]
fn zero_reps_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SIX_POFI}[study]\nreps = 0\n[study.estimator]\nkind = \"grid\"\ngrid = [0.1, 0.2]\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run("study", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("study.reps"));
}

#[test]
fn unknown_key_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{SIX_POFI}colour = 1\n"));
    let o = run("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn budget_overrun_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SIX_POFI.replace("m = 1", "m = 1\nbudget = 10.0"));
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn study_output_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let grid: Vec<String> = (0..=50).map(|i| format!("{}", i as f64 / 100.0)).collect();
    let text = format!(
        "{SIX_POFI}[study]\nreps = 6\nbase_seed = 9\nvariants = [{{ kind = \"pofi\", lag = 1 }}, {{ kind = \"random\" }}]\n\
         [study.estimator]\nkind = \"grid\"\ngrid = [{}]\n",
        grid.join(", ")
    )
    .replace("horizon = 40", "horizon = 200");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run("study", &cfg, &a, &[]).status.success());
    assert!(run("study", &cfg, &b, &["--threads", "1"]).status.success());
    for f in ["study.csv", "study_detail.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let summary = std::fs::read_to_string(a.join("study.csv")).unwrap();
    assert!(summary.starts_with("variant,n,bias,sd,mse\npofi-m1,6,"));
    let c = dir.path().join("c");
    assert!(run("study", &cfg, &c, &["--seed", "10"]).status.success());
    assert_ne!(std::fs::read(a.join("study_detail.csv")).unwrap(), std::fs::read(c.join("study_detail.csv")).unwrap());
}

#[test]
fn exported_models_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("six-state", "", 0.37, six_state()),
        ("adversarial", "", 0.7, adversarial()),
        (
            "pcr",
            "[model.pcr]\nx_cells = 30\ny_cells = 10\n",
            4.2,
            pcr(PcrParams {
                x_cells: 30,
                y_cells: 10,
                ..Default::default()
            })
            .unwrap(),
        ),
        (
            "morris-lecar",
            "parameter = \"g_ca\"\n[model.morris_lecar]\nv_cells = 6\nn_cells = 5\nobs_cells = 7\n",
            4.4,
            morris_lecar(
                MorrisLecarParams {
                    v_cells: 6,
                    n_cells: 5,
                    obs_cells: 7,
                    ..Default::default()
                },
                MorrisLecarParam::GCa,
            )
            .unwrap(),
        ),
    ];
    for (name, extra, theta, family) in cases {
        let text = format!("horizon = 5\n[theta]\nvalue = {theta}\n[model]\nbuiltin = \"{name}\"\n{extra}");
        let cfg = write_config(dir.path(), &format!("{name}.toml"), &text);
        let out = dir.path().join(name);
        let o = run("export-model", &cfg, &out, &[]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let loaded = load_model(&out.join("model.txt")).unwrap();
        assert_eq!(loaded, family.eval(theta).unwrap(), "{name}");

        // the exported file drives the solver like the builtin does
        let file_cfg = write_config(
            dir.path(),
            &format!("{name}-file.toml"),
            &format!(
                "horizon = 3\n[theta]\nvalue = 0.0\n[model]\nfile = \"{}\"\n",
                out.join("model.txt").display()
            ),
        );
        let o = run("validate", &file_cfg, &out, &[]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn corrupted_model_file_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "horizon = 5\n[theta]\nvalue = 0.7\n[model]\nbuiltin = \"adversarial\"\n");
    let out = dir.path().join("m");
    assert!(run("export-model", &cfg, &out, &[]).status.success());
    let text = std::fs::read_to_string(out.join("model.txt")).unwrap();
    let bad = text.replacen("0.5", "0.5x", 1);
    let offset = bad.find("0.5x").unwrap();
    std::fs::write(out.join("bad.txt"), &bad).unwrap();
    let file_cfg = write_config(
        dir.path(),
        "f.toml",
        &format!("horizon = 3\n[theta]\nvalue = 0.0\n[model]\nfile = \"{}\"\n", out.join("bad.txt").display()),
    );
    let o = run("validate", &file_cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    assert!(err.contains(&format!("byte offset {offset}")), "{err}");
}

#[test]
fn stochasticity_violation_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "horizon = 5\n[theta]\nvalue = 0.7\n[model]\nbuiltin = \"adversarial\"\n");
    let out = dir.path().join("m");
    assert!(run("export-model", &cfg, &out, &[]).status.success());
    let text = std::fs::read_to_string(out.join("model.txt")).unwrap();
    let bad = text.replace("initial-state\n0.25 0.25 0.25 0.25", "initial-state\n0.5 0.5 0.5 0.5");
    assert_ne!(bad, text);
    std::fs::write(out.join("bad.txt"), bad).unwrap();
    let file_cfg = write_config(
        dir.path(),
        "f.toml",
        &format!("horizon = 3\n[theta]\nvalue = 0.0\n[model]\nfile = \"{}\"\n", out.join("bad.txt").display()),
    );
    let o = run("validate", &file_cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("initial"));
}

const PLAY: &str = r#"
horizon = 6
[model]
builtin = "adversarial"
[theta]
grid = [-3.0, -1.5, 0.0, 1.5, 3.0]
[solver]
kind = "via"
"#;

#[test]
fn scripted_play_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.toml", PLAY);
    let script = "left\nright\nright\nbogus\nleft\nl\nr\nleft\n";
    let a = run_with_stdin(&cfg, "4", script);
    let b = run_with_stdin(&cfg, "4", script);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.matches("Row plays").count(), 6);
    assert!(text.contains("unrecognized play \"bogus\""));
    assert!(text.contains("6 rounds played; estimated theta"));
}

#[test]
fn play_with_fixed_theta_uses_window_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.toml",
        "horizon = 4\n[model]\nbuiltin = \"adversarial\"\n[theta]\nvalue = 0.7\n",
    );
    let o = run_with_stdin(&cfg, "1", "right\nleft\n");
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    // opening play, then one answered round before input runs out
    assert_eq!(text.matches("Row plays").count(), 2);
    assert!(text.contains("1 rounds played"));
}

#[test]
fn play_ends_cleanly_on_immediate_eof() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.toml", PLAY);
    let o = run_with_stdin(&cfg, "4", "");
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("no data; no estimate"));
}

#[test]
fn via_run_writes_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "v.toml", &format!("{PLAY}\n").replace("horizon = 6", "horizon = 10\n"));
    let cfg_text = std::fs::read_to_string(&cfg).unwrap().replace("grid = [", "value = 0.7\ngrid = [");
    std::fs::write(&cfg, cfg_text).unwrap();
    let out = dir.path().join("v");
    let o = run("via-run", &cfg, &out, &["--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(out.join("run_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "t,control,observation,sweeps,posterior_w1,posterior_w2,posterior_w3,posterior_w4,posterior_w5");
    assert_eq!(lines.count(), 10);
}
