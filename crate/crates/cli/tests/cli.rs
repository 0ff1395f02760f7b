use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ieee123")
}

fn dsse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_convert_prior_frames_update() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    let out = dsse(&["convert-feeder", "--in", s(&data_dir()), "--out", s(&net)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("123 buses"));

    let pf = dsse(&["pf", "--network", s(&net)]);
    assert_eq!(pf.status.code(), Some(0));
    let text = String::from_utf8(pf.stdout).unwrap();
    assert!(text.starts_with("bus,phase,re_v,im_v,abs_v\n"));
    assert_eq!(text.lines().count(), 1 + 256);

    let prior = dir.path().join("prior.json");
    let plan = data_dir().join("plan.json");
    assert_eq!(dsse(&["prior", "--network", s(&net), "--out", s(&prior)]).status.code(), Some(0));
    let frames = dir.path().join("frames.csv");
    let out = dsse(&[
        "frames", "--network", s(&net), "--plan", s(&plan), "--steps", "3", "--seed", "4", "--out", s(&frames),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    for method in ["post", "postNL"] {
        let est = dir.path().join(format!("est_{method}.csv"));
        let out = dsse(&[
            "update", "--network", s(&net), "--prior", s(&prior), "--plan", s(&plan), "--frames", s(&frames),
            "--method", method, "--out", s(&est),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let rows = std::fs::read_to_string(&est).unwrap();
        assert!(rows.starts_with("t,bus,phase,re_v,im_v,std_v\n"));
        assert_eq!(rows.lines().count(), 1 + 3 * 256);
    }
}

#[test]
fn missing_config_is_a_config_error() {
    let out = dsse(&["run", "--config", "/nonexistent/scenario.json", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn prior_for_another_network_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let net = data_dir().join("network.json");
    let prior = dir.path().join("prior.json");
    assert_eq!(dsse(&["prior", "--network", s(&net), "--out", s(&prior)]).status.code(), Some(0));
    let mut other: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&net).unwrap()).unwrap();
    other["s_base_va"] = serde_json::json!(1.0e6);
    let other_path = dir.path().join("other.json");
    std::fs::write(&other_path, other.to_string()).unwrap();
    let frames = dir.path().join("frames.csv");
    let plan = data_dir().join("plan.json");
    dsse(&["frames", "--network", s(&net), "--plan", s(&plan), "--out", s(&frames)]);
    let out = dsse(&[
        "update", "--network", s(&other_path), "--prior", s(&prior), "--plan", s(&plan), "--frames", s(&frames),
        "--out", s(&dir.path().join("e.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different network"));
}

/// A magnitude-only current sensor at a zero-injection bus reads exactly zero,
/// where the magnitude gradient is undefined.
fn zero_current_plan(dir: &Path) -> PathBuf {
    let plan = dir.join("plan.json");
    std::fs::write(
        &plan,
        r#"{"sigma_meas": 0.01, "sensors": [
            {"kind": "voltage", "bus": "79", "phase": "a", "sync": true},
            {"kind": "current", "bus": "3", "phase": "c", "sync": false}
        ]}"#,
    )
    .unwrap();
    plan
}

#[test]
fn numerical_failure_and_partial_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let net = data_dir().join("network.json");
    let prior = dir.path().join("prior.json");
    dsse(&["prior", "--network", s(&net), "--out", s(&prior)]);
    let plan = zero_current_plan(dir.path());
    let run = |steps: &str| {
        let frames = dir.path().join(format!("f{steps}.csv"));
        dsse(&["frames", "--network", s(&net), "--plan", s(&plan), "--steps", steps, "--out", s(&frames)]);
        dsse(&[
            "update", "--network", s(&net), "--prior", s(&prior), "--plan", s(&plan), "--frames", s(&frames),
            "--out", s(&dir.path().join("e.csv")),
        ])
    };
    let single = run("1");
    assert_eq!(single.status.code(), Some(2), "{}", String::from_utf8_lossy(&single.stderr));
    assert!(String::from_utf8_lossy(&single.stderr).contains("current 3.c"));
    assert_eq!(run("2").status.code(), Some(3));
}

#[test]
fn small_scenario_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"network": "{}", "plan": "{}", "steps": 2, "trials": 1, "seed": 3, "methods": ["post", "WLS"]}}"#,
            s(&data_dir().join("network.json")),
            s(&data_dir().join("plan.json"))
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = dsse(&["run", "--config", s(&cfg), "--out", s(&out_dir), "--sequential"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("nrmse.csv")).unwrap();
    assert!(csv.starts_with("t,trial,post,WLS\n"));
    assert_eq!(csv.lines().count(), 3);
    for f in ["timing.csv", "summary.json", "nrmse.svg", "timing.svg"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}
