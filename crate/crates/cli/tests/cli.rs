use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn programs(sub: &str, file: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/programs")
        .join(sub)
        .join(file)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn run_writes_stats_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let stats = dir.path().join("stats.json");
    let trace = dir.path().join("trace.log");
    let o = sim(&[
        "run",
        &programs("bench", "arith.s"),
        "--policy",
        "okapi",
        "--stats",
        stats.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(report["command"], "run");
    assert_eq!(report["programs"][0]["policy"], "okapi");
    assert!(report["programs"][0]["stats"]["cycles"].as_u64().unwrap() > 0);
    assert!(fs::read_to_string(&trace).unwrap().lines().count() > 10);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"max_cycles": 10, "rob_entries": 8}"#).unwrap();
    let prog = programs("bench", "arith.s");
    let o = sim(&["run", &prog, "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "10 cycles cannot finish: {o:?}");
    let o = sim(&[
        "run",
        &prog,
        "--config",
        cfg.to_str().unwrap(),
        "--max-cycles",
        "1000000",
    ]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["config"]["rob_entries"], 8);
    assert_eq!(report["config"]["max_cycles"], 1_000_000);
}

#[test]
fn run_exit_codes() {
    assert_eq!(code(&sim(&["run", &programs("corpus", "load_fault.s")])), 2);
    assert_eq!(code(&sim(&["run", "does-not-exist.s"])), 1);
    assert_eq!(
        code(&sim(&["run", &programs("bench", "arith.s"), "--policy", "bogus"])),
        1
    );
    assert_eq!(code(&sim(&["frobnicate"])), 1);
    assert_eq!(code(&sim(&["--help"])), 0);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"cache_sets": 3}"#).unwrap();
    let o = sim(&["run", &programs("bench", "arith.s"), "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let o = sim(&["run", &programs("bench", "arith.s"), "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn pht_leaks_only_under_baseline() {
    let o = sim(&["attack", "pht", "--policy", "all"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5);
    for line in lines {
        assert_eq!(line.contains("LEAKED"), line.contains("baseline"), "{line}");
    }
}

#[test]
fn documented_residual_and_reset_cases() {
    let o = sim(&["attack", "vault-sameline", "--policy", "okapi", "--hardening", "none"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("LEAKED"));
    let o = sim(&[
        "attack",
        "mutual",
        "--policy",
        "okapi",
        "--hardening",
        "okapireset_on_transition",
    ]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("safe"));
}

#[test]
fn attack_exits_3_when_a_required_block_leaks() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("vault.json");
    fs::write(
        &file,
        r#"{"name": "strict-vault", "variant": "vault", "secret": [7, 2], "must_block": true, "trials": 1}"#,
    )
    .unwrap();
    let json = dir.path().join("out.json");
    let o = sim(&[
        "attack",
        file.to_str().unwrap(),
        "--policy",
        "okapi",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{o:?}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["verdicts"][0]["leaked"], true);
}

#[test]
fn attack_usage_errors() {
    assert_eq!(code(&sim(&["attack", "no-such-scenario"])), 1);
    assert_eq!(code(&sim(&["attack", "pht", "--hardening", "okapiload_secrets"])), 1);
    assert_eq!(code(&sim(&["attack", "pht", "--trials", "0"])), 1);
}

#[test]
fn compare_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cmp.csv");
    let bench = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/programs/bench");
    let o = sim(&[
        "compare",
        bench.to_str().unwrap(),
        "--policies",
        "okapi,eager,naive",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("program,policy,cycles,baseline_cycles,overhead_pct\n"));
    assert_eq!(text.lines().count(), 1 + 6 * 4);
}

#[test]
fn compare_timeout_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spin.s"), "spin:\n    JMP spin\n").unwrap();
    let o = sim(&["compare", dir.path().to_str().unwrap(), "--max-cycles", "500"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn locality_prints_intervals() {
    let o = sim(&["locality", &programs("corpus", "syscall_roundtrip.s")]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.lines().filter(|l| l.starts_with("interval ")).count() >= 3);
    assert!(out.contains("touched "));
}
