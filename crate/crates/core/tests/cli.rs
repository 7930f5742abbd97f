use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn eqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqa"))
        .args(args)
        .env_remove("EQA_ORACLE_ENDPOINT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_the_golden_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("out/lamp.jsonl");
    let scene = fixture("apartment_small.json");
    let task = fixture("lamp_task.json");
    let out = eqa(&["run", "--scene", s(&scene), "--task", s(&task), "--seed", "11", "--log", s(&log)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(&log).unwrap(),
        fs::read_to_string(fixture("golden/lamp_episode.jsonl")).unwrap()
    );
    assert!(stderr(&out).contains("answer 'on'"));
}

#[test]
fn run_without_seed_is_a_usage_error() {
    let scene = fixture("apartment_small.json");
    let task = fixture("lamp_task.json");
    let out = eqa(&["run", "--scene", s(&scene), "--task", s(&task)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let scene = fixture("apartment_small.json");

    let wall = eqa(&["run", "--scene", s(&scene), "--task", s(&fixture("wall_start_tasks.json")), "--seed", "1"]);
    assert_eq!(code(&wall), 1, "{}", stderr(&wall));

    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"stop": {"z_treshold": 2}}"#).unwrap();
    let typo = eqa(&[
        "run",
        "--scene",
        s(&scene),
        "--task",
        s(&fixture("lamp_task.json")),
        "--config",
        s(&config),
        "--seed",
        "1",
    ]);
    assert_eq!(code(&typo), 1);
    assert!(stderr(&typo).contains("z_treshold"), "{}", stderr(&typo));

    let bad_policy = eqa(&[
        "run",
        "--scene",
        s(&scene),
        "--task",
        s(&fixture("lamp_task.json")),
        "--seed",
        "1",
        "--min-steps",
        "1",
    ]);
    assert_eq!(code(&bad_policy), 1);

    let empty = eqa(&[
        "eval",
        "--tasks",
        s(&fixture("empty_tasks.json")),
        "--seed",
        "1",
        "--out",
        s(&dir.path().join("r.csv")),
    ]);
    assert_eq!(code(&empty), 1);
}

#[test]
fn unreachable_oracle_exits_2_and_keeps_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("remote.json");
    fs::write(
        &config,
        r#"{"oracles": {"answer": {"mode": "remote", "endpoint": "http://example.invalid/"}, "retry": {"retries": 0}}}"#,
    )
    .unwrap();
    let log = dir.path().join("lamp.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_eqa"))
        .args([
            "run",
            "--scene",
            s(&fixture("apartment_small.json")),
            "--task",
            s(&fixture("lamp_task.json")),
        ])
        .args(["--config", s(&config), "--seed", "3", "--log", s(&log)])
        // the environment wins over the configured endpoint
        .env("EQA_ORACLE_ENDPOINT", "http://127.0.0.1:9/")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let text = fs::read_to_string(&log).unwrap();
    assert!(text.lines().last().unwrap().contains("\"kind\":\"oracle\""), "{text}");
    // refused by the local port, not a lookup failure for the configured host
    assert!(text.contains("Connection refused"), "{text}");
}

#[test]
fn gen_eval_and_sweep_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("suite");
    let out = eqa(&["gen-scenes", "--count", "4", "--seed", "9", "--out", s(&suite)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(suite.join("scene_003.json").is_file());

    let report = |name: &str, par: &str| {
        let path = dir.path().join(name);
        let logs = dir.path().join(format!("{name}-logs"));
        let out = eqa(&[
            "eval",
            "--tasks",
            s(&suite),
            "--seed",
            "4",
            "--out",
            s(&path),
            "--parallelism",
            par,
            "--logs",
            s(&logs),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let log = fs::read_to_string(logs.join("task-002.jsonl")).unwrap();
        (
            fs::read_to_string(&path).unwrap(),
            fs::read_to_string(path.with_extension("json")).unwrap(),
            log,
        )
    };
    let a = report("a.csv", "1");
    let b = report("b.csv", "3");
    assert_eq!(a, b);
    assert!(a.0.starts_with("task_id,steps,stop_reason,z_at_stop,sigma,llm_match_contrib\n"));
    assert_eq!(a.0.lines().count(), 5);
    assert!(a.1.contains("\"llm_match\""));

    let table = dir.path().join("table.csv");
    let detail = dir.path().join("detail.csv");
    let out = eqa(&[
        "sweep",
        "--tasks",
        s(&suite),
        "--seed",
        "4",
        "--axis",
        "k=1,3",
        "--out",
        s(&table),
        "--detail",
        s(&detail),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 3);
    assert_eq!(fs::read_to_string(&detail).unwrap().lines().count(), 1 + 2 * 4);

    let bad = eqa(&["sweep", "--tasks", s(&suite), "--seed", "4", "--axis", "w=1", "--out", s(&table)]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn replay_prints_the_golden_transcript() {
    let out = eqa(&["replay", "--log", s(&fixture("golden/lamp_episode.jsonl"))]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        fs::read_to_string(fixture("golden/lamp_transcript.txt")).unwrap()
    );
}

#[test]
fn replay_of_a_corrupt_log_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("golden/lamp_episode.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{not json";
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, lines.join("\n")).unwrap();
    let out = eqa(&["replay", "--log", s(&path)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains(":4:"), "{}", stderr(&out));
}

#[test]
fn help_exits_0() {
    let out = eqa(&["--help"]);
    assert_eq!(code(&out), 0);
    for sub in ["run", "eval", "sweep", "gen-scenes", "replay"] {
        assert!(String::from_utf8_lossy(&out.stdout).contains(sub));
    }
}
