use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dipolar-sim"))
        .args(args)
        .env("DIPOLAR_SIM_WORKERS", workers)
        .output()
        .expect("binary runs")
}

fn read_all(dir: &Path, prefix: &str) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().replacen(prefix, "", 1);
            let mut bytes = std::fs::read(&p).unwrap();
            if name == "manifest.json" {
                // the manifest lists files under their own prefix
                bytes = String::from_utf8(bytes).unwrap().replace(prefix, "").into_bytes();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn sweep_output_independent_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let args = |tag: &str| {
        vec![
            "--scenario".to_string(),
            "gate_map".into(),
            "--set".into(),
            "sweep=epsilon:0.02:0.1:3".into(),
            "--set".into(),
            "sweep2=b_over_a:0.7:0.9:3".into(),
            "--out".into(),
            dir.path().join(tag).to_string_lossy().into_owned(),
        ]
    };
    let a = args("one");
    let b = args("many");
    let one = sim(&a.iter().map(String::as_str).collect::<Vec<_>>(), "1");
    let many = sim(&b.iter().map(String::as_str).collect::<Vec<_>>(), "8");
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    assert!(many.status.success());
    let x = read_all(dir.path(), "one_");
    let y = read_all(dir.path(), "many_");
    assert_eq!(x.len(), 4);
    assert_eq!(x, y);
}

#[test]
fn manifest_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = sim(
        &["--scenario", "marker_local_modes", "--set", "n_molecules=20", "--set", "b_over_a=0.85", "--out", first.to_str().unwrap()],
        "2",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = dir.path().join("first_manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["schema"], 1);
    assert_eq!(json["params"]["n_molecules"], "20");
    assert_eq!(json["files"].as_array().unwrap().len(), 3);

    let second = dir.path().join("second");
    let out = sim(&["--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()], "2");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_all(dir.path(), "first_"), read_all(dir.path(), "second_"));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# tweezer scan\nscenario = tweezer_window\nr_d = 30\nsweep = sigma_tw_nm:500:2000:4\n").unwrap();
    let prefix = dir.path().join("tw");
    let out = sim(
        &["--config", cfg.to_str().unwrap(), "--set", "tweezer_safety=5", "--out", prefix.to_str().unwrap()],
        "1",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("tw_points.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("sigma_tw_nm,tweezer_safety,sigma_tw_a,"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok") && l.contains(",5,")));
}

#[test]
fn errors_are_single_machine_readable_lines() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("x");
    for (args, kind) in [
        (vec!["--scenario", "gate_map", "--set", "epsilon=0.7"], "invalid_parameter"),
        (vec!["--scenario", "nope"], "invalid_parameter"),
        (vec!["--scenario", "gate_map", "--set", "colour=red"], "invalid_parameter"),
        (vec!["--set", "epsilon=0.1"], "config"),
    ] {
        let mut full = args.clone();
        full.extend(["--out", prefix.to_str().unwrap()]);
        let out = sim(&full, "1");
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error: kind={kind} msg=\"")), "{err}");
    }
}

#[test]
fn mostly_failing_sweep_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("pmi");
    // a single point sitting exactly on the breathing resonance
    let w_r = format!("{:?}", 5f64.sqrt() * (6.0f64 / 30.0).sqrt());
    let out = sim(
        &["--scenario", "pmi_two_molecule", "--set", &format!("sweep=omega0:{w_r}:{w_r}:1"), "--out", prefix.to_str().unwrap()],
        "1",
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: kind=sweep_failure"), "{err}");
    let csv = std::fs::read_to_string(dir.path().join("pmi_points.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",resonance"));
}
