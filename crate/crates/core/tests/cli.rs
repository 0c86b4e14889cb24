//! CLI contract tests: flag handling, exit codes, config round-trips.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nonsmooth-nh"))
}

#[test]
fn negative_step_is_a_usage_error_naming_the_field() {
    let out = bin()
        .args(["--scenario", "free_billiard", "--dt", "-0.001"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains('h'), "stderr: {stderr}");
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = bin().args(["--scenario", "warp_drive"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_scenario_and_config_is_a_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn list_prints_all_scenarios() {
    let out = bin().arg("--list").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for name in [
        "rolling_disk",
        "spherical_pendulum",
        "reduced_pendulum",
        "free_billiard",
        "rigid_body_suslov",
    ] {
        assert!(stdout.contains(name), "missing {name} in: {stdout}");
    }
}

#[test]
fn config_file_drives_a_run_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("artifacts");
    let config = serde_json::json!({
        "schema_version": 1,
        "scenario": {"name": "free_billiard", "params": {"t_final": 9.0}},
        "mode": "full",
        "t_final": 1.5,
        "out_dir": out_dir.to_str().unwrap(),
        "audit": true,
    });
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let out = bin()
        .args(["--config", cfg_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("trajectory.csv").exists());
    assert!(out_dir.join("events.jsonl").exists());
    assert!(out_dir.join("audit.json").exists());
    // t_final override (1.5) wins over scenario params (9.0): one impact only.
    let events = std::fs::read_to_string(out_dir.join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 1);
}

#[test]
fn reduced_and_eps_modes_run_from_flags() {
    for (scenario, mode) in [
        ("reduced_pendulum", "reduced"),
        ("rigid_body_suslov", "eps"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let out = bin()
            .args([
                "--scenario",
                scenario,
                "--mode",
                mode,
                "--t-final",
                "0.5",
                "--audit",
                "--out-dir",
            ])
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "{scenario}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(dir.path().join("trajectory.csv").exists());
    }
}

#[test]
fn paper_literal_vertical_coincides_on_the_registered_reduced_pendulum() {
    // The registered reduced pendulum has no vertical annihilator rows, so
    // both vertical modes solve the same system; outputs must be identical.
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, literal) in dirs.iter().zip([false, true]) {
        let mut cmd = bin();
        cmd.args([
            "--scenario",
            "reduced_pendulum",
            "--mode",
            "reduced",
            "--t-final",
            "1.0",
            "--out-dir",
        ])
        .arg(dir.path());
        if literal {
            cmd.arg("--paper-literal-vertical");
        }
        assert!(cmd.status().unwrap().success());
    }
    let a = std::fs::read(dirs[0].path().join("trajectory.csv")).unwrap();
    let b = std::fs::read(dirs[1].path().join("trajectory.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trajectory_header_matches_the_column_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "--scenario",
            "free_billiard",
            "--t-final",
            "0.1",
            "--out-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,q_1,q_2,v_1,v_2,p_1,p_2,energy,constraint_residual"
    );
}

#[test]
fn compare_mode_rejects_non_reducible_scenarios() {
    let out = bin()
        .args(["--scenario", "rolling_disk", "--mode", "compare"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn events_file_lists_strictly_increasing_times() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "--scenario",
            "free_billiard",
            "--t-final",
            "10.0",
            "--out-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    let mut prev = f64::NEG_INFINITY;
    let mut count = 0;
    for line in events.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let t = v["t_impact"].as_f64().unwrap();
        assert!(t > prev);
        prev = t;
        count += 1;
        for field in [
            "q", "v_minus", "v_plus", "p_minus", "p_plus", "lambda0", "lambda", "e_minus", "e_plus",
        ] {
            assert!(v.get(field).is_some(), "missing field {field}");
        }
    }
    assert!(count >= 2);
}
