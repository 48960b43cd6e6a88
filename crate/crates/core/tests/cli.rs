use std::path::Path;
use std::process::Command;

fn acsg(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_acsg"))
        .args(args)
        .env_remove("ACSG_REMOTE_URL")
        .env_remove("ACSG_REMOTE_TOKEN")
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_run_eval_replay() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scen");
    let out = dir.path().join("out");
    assert_eq!(acsg(&["gen", "--family", "door_only", "--count", "2", "--out", p(&scen)]).0, 0);
    let file = scen.join("door_only/door_only_00.json");
    assert!(file.exists());

    let (code, stdout) =
        acsg(&["run", "--scenario", p(&scen), "--policy", "oracle,heuristic-open", "--seed", "1", "--out", p(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("heuristic-open"));
    assert!(out.join("report.csv").exists() && out.join("aggregate.json").exists());

    let (code, stdout) = acsg(&["eval", "--report", p(&out.join("report.csv"))]);
    assert_eq!(code, 0);
    assert!(stdout.contains("\"groups\""));

    let graph = out.join("graphs/door_only_00__oracle.json");
    let (code, stdout) = acsg(&["eval", "--scenario", p(&file), "--graph", p(&graph)]);
    assert_eq!((code, stdout.trim()), (0, "success 1 ged 0"));

    let trace = out.join("traces/door_only_00__oracle.jsonl");
    assert_eq!(acsg(&["replay", "--trace", p(&trace), "--scenario", p(&file)]).0, 0);
    let other = scen.join("door_only/door_only_01.json");
    assert_eq!(acsg(&["replay", "--trace", p(&trace), "--scenario", p(&other)]).0, 2);

    let (code, dot) = acsg(&["export-dot", "--scenario", p(&file)]);
    assert_eq!(code, 0);
    assert!(dot.starts_with("digraph"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scen");
    acsg(&["gen", "--family", "recursive", "--count", "1", "--out", p(&scen)]);
    let out = p(&dir.path().join("out")).to_string();

    let step_limited = acsg(&["run", "--scenario", p(&scen), "--policy", "oracle", "--max-steps", "2", "--out", &out]);
    assert_eq!(step_limited.0, 4);

    let remote = acsg(&["run", "--scenario", p(&scen), "--policy", "remote,oracle", "--out", &out]);
    assert_eq!(remote.0, 3);

    assert_eq!(acsg(&["run", "--scenario", p(&dir.path().join("missing")), "--out", &out]).0, 2);
    assert_eq!(acsg(&["run", "--scenario", p(&scen), "--policy", "bogus", "--out", &out]).0, 2);
}
