mod common;

use std::fs;

use okapi_core::attacks::{builtin, Hardening};
use okapi_core::harness::{cmd_attack, cmd_compare, cmd_locality, cmd_run, HarnessError, Report};
use okapi_core::pipeline::{repeat_delay_violations, ExitReason};
use okapi_core::{PolicyKind, SimConfig};

fn write(dir: &tempfile::TempDir, name: &str, src: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, src).unwrap();
    path
}

fn without_timestamp(mut r: Report) -> String {
    r.timestamp = 0;
    r.to_json()
}

#[test]
fn halt_alone_finishes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "halt.s", "HALT\n");
    for policy in PolicyKind::ALL {
        let (report, r) = cmd_run(&path, &SimConfig::default().with_policy(policy)).unwrap();
        assert_eq!(r.exit, ExitReason::Halted);
        assert!(r.stats.cycles < 20, "{policy}: {} cycles", r.stats.cycles);
        assert_eq!(r.stats.committed_instructions, 1);
        assert_eq!(r.stats.dispatched_loads, 0);
        assert_eq!(report.programs[0].program, "halt");
    }
}

#[test]
fn streaming_blocks_each_page_only_until_its_bit_is_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut src = String::from(
        "_start:\n    LI r9, 2\nagain:\n    LI r1, 0x40000\n    LI r2, 256\nloop:\n    LD r3, [r1]\n    ADD r4, r4, r3\n    ADDI r1, r1, 128\n    ADDI r2, r2, -1\n    BNE r2, r0, loop\n    ADDI r9, r9, -1\n    BNE r9, r0, again\n    HALT\n",
    );
    for page in 0..8 {
        src += &format!(".word {:#x} {}\n", 0x40000 + page * 0x1000, page);
    }
    let path = write(&dir, "stream.s", &src);
    let cfg = SimConfig {
        record_events: true,
        ..SimConfig::default().with_policy(PolicyKind::Okapi)
    };
    let (_, r) = cmd_run(&path, &cfg).unwrap();
    assert_eq!(r.exit, ExitReason::Halted);
    // Only the first word of each page is non-zero.
    assert_eq!(r.state.regs[4], 2 * (0..8).sum::<u64>());
    assert!(repeat_delay_violations(&r.events).is_empty());
    assert!(r.stats.first_issue_safe_bit_hits > 0);
    assert!(r.stats.loads_blocked_no_safe_bit <= 8 * cfg.lq_entries as u64);
    let (_, base) = cmd_run(&path, &SimConfig::default()).unwrap();
    assert!(base.state.same_architecture(&r.state));
    assert!(r.stats.cycles <= base.stats.cycles + base.stats.cycles / 100);
}

#[test]
fn reports_are_deterministic_apart_from_the_timestamp() {
    let cfg = SimConfig::default();
    let bench = common::programs_dir("bench");
    let a = cmd_compare(&bench, &PolicyKind::ALL, &cfg).unwrap();
    let b = cmd_compare(&bench, &PolicyKind::ALL, &cfg).unwrap();
    assert_eq!(without_timestamp(a), without_timestamp(b));

    let scenarios = [builtin("pht").unwrap(), builtin("vault").unwrap()];
    let a = cmd_attack(&scenarios, &PolicyKind::ALL, &cfg, None, None).unwrap();
    let b = cmd_attack(&scenarios, &PolicyKind::ALL, &cfg, None, None).unwrap();
    assert_eq!(without_timestamp(a), without_timestamp(b));
}

#[test]
fn report_json_round_trips() {
    let cfg = SimConfig::default();
    let report = cmd_attack(&[builtin("stl").unwrap()], &[PolicyKind::Okapi], &cfg, None, Some(2)).unwrap();
    let back: Report = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.verdicts[0].trials, 2);
}

#[test]
fn compare_reports_every_policy_against_baseline() {
    let report = cmd_compare(
        &common::programs_dir("bench"),
        &[PolicyKind::Okapi],
        &SimConfig::default(),
    )
    .unwrap();
    let csv = report.comparison_csv();
    assert_eq!(csv.lines().count(), 1 + 6 * 2);
    for row in report.comparison.iter().filter(|r| r.policy == PolicyKind::Baseline) {
        assert_eq!(row.cycles, row.baseline_cycles);
        assert_eq!(row.overhead_pct, 0.0);
    }
}

#[test]
fn compare_fails_on_a_program_that_never_halts() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "spin.s", "spin:\n    JMP spin\n");
    let cfg = SimConfig {
        max_cycles: 2_000,
        ..SimConfig::default()
    };
    let err = cmd_compare(dir.path(), &[PolicyKind::Okapi], &cfg).unwrap_err();
    assert!(err.is_run_failure(), "{err}");
}

#[test]
fn compare_rejects_an_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        cmd_compare(dir.path(), &PolicyKind::ALL, &SimConfig::default()),
        Err(HarnessError::EmptySuite(_))
    ));
}

#[test]
fn attack_overrides_apply_and_are_validated() {
    let cfg = SimConfig::default();
    let vault = builtin("vault").unwrap();
    let r = cmd_attack(
        std::slice::from_ref(&vault),
        &[PolicyKind::Okapi],
        &cfg,
        Some(Hardening::OkapiloadSecrets),
        None,
    )
    .unwrap();
    assert_eq!(r.verdicts[0].hardening, Hardening::OkapiloadSecrets);
    assert!(!r.verdicts[0].leaked);
    assert!(cmd_attack(
        &[vault],
        &[PolicyKind::Okapi],
        &cfg,
        Some(Hardening::OkapiresetOnTransition),
        None
    )
    .is_err());
    assert!(cmd_attack(&[builtin("pht").unwrap()], &[PolicyKind::Okapi], &cfg, None, Some(0)).is_err());
}

#[test]
fn locality_counts_syscall_intervals_separately() {
    let path = common::programs_dir("corpus").join("syscall_roundtrip.s");
    let report = cmd_locality(&path, &SimConfig::default()).unwrap();
    let loc = &report.locality[0];
    assert!(loc.intervals.len() >= 3, "{:?}", loc.intervals);
    assert!(loc.intervals.iter().all(|i| i.code >= 1));
    assert!(loc.code_fraction > 0.0 && loc.code_fraction <= 1.0);
}

#[test]
fn faults_surface_in_the_run_report() {
    let path = common::programs_dir("corpus").join("load_fault.s");
    let (report, r) = cmd_run(&path, &SimConfig::default().with_policy(PolicyKind::Okapi)).unwrap();
    assert!(matches!(r.exit, ExitReason::Fault(_)));
    assert_eq!(report.programs[0].exit, r.exit);
}
