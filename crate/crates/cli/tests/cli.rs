use std::path::Path;
use std::process::{Command, Output};

fn colnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colnav")).args(args).output().unwrap()
}

fn small(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = vec![
        "--set", "camera.width=64",
        "--set", "camera.height=48",
        "--set", "tube.length=60",
        "--set", "trajectory.step=2",
    ];
    v.extend_from_slice(extra);
    v
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path) {
    let mut args = vec!["simulate", "--out", dir.to_str().unwrap()];
    args.extend(small(&[]));
    let o = colnav(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("wrote 30 frames"));
}

#[test]
fn simulate_then_replay_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("clip");
    simulate(&input);
    assert!(input.join("manifest").exists() && input.join("oracle.bin").exists());

    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = colnav(&[
            "replay",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--compass",
            "--omit-timing",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("quadrant 4"));
        assert!(out.join("flattened.png").exists());
        reports.push((
            std::fs::read(out.join("report.json")).unwrap(),
            std::fs::read(out.join("compass.jsonl")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn input_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let o = colnav(&["replay", tmp.path().to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no frames"), "{}", stderr(&o));

    let o = colnav(&["simulate", "--out", out.to_str().unwrap(), "--set", "trajectory.s_end=0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = colnav(&["config", "--set", "no.such.key=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = colnav(&["replay"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_prints_and_writes_the_kappa_table() {
    let tmp = tempfile::tempdir().unwrap();
    let ann = tmp.path().join("ann.csv");
    let pred = tmp.path().join("pred.csv");
    // Six items with labels 0,0,1,1,2,2 against 0,1,1,2,2,2.
    let rows = |labels: [u8; 6]| -> String {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("c{},{},{l}\n", i / 4, i % 4 + 1))
            .collect()
    };
    std::fs::write(&ann, rows([0, 0, 1, 1, 2, 2])).unwrap();
    std::fs::write(&pred, rows([0, 1, 1, 2, 2, 2])).unwrap();
    let out = tmp.path().join("k");
    let o = colnav(&[
        "eval",
        "--annotations",
        ann.to_str().unwrap(),
        "--predictions",
        pred.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("kappa.json")).unwrap()).unwrap();
    let kappas: Vec<f64> = table.as_array().unwrap().iter().map(|r| r["kappa"].as_f64().unwrap()).collect();
    assert!(kappas.iter().any(|k| (k - 0.625).abs() < 1e-12), "{kappas:?}");
    assert!(kappas.iter().any(|k| (k - 0.75).abs() < 1e-12), "{kappas:?}");
}

#[test]
fn config_echo_applies_overrides() {
    let o = colnav(&["config", "--set", "unfold.stride=3"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).lines().any(|l| l.replace(' ', "") == "unfold.stride=3"));
}
