//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Limits and tolerances are the constants below.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use okapi_core::attacks::{builtin, run_attack, AttackScenario, Hardening, Layout, Placement};
use okapi_core::harness::{cmd_compare, cmd_locality, locality_report};
use okapi_core::isa::{run_sequential, run_sequential_with, AccessKind, CycleSource, MemAccess, Program};
use okapi_core::pipeline::{repeat_delay_violations, simulate, ExitReason, PageCounts, Pipeline, SimEvent};
use okapi_core::policy::BlockReason;
use okapi_core::{PolicyKind, SimConfig};

const AC1_LIMIT: Duration = Duration::from_secs(10);
const AC2_LIMIT: Duration = Duration::from_secs(30);
const AC6_LIMIT: Duration = Duration::from_secs(60);
/// Okapi cycles over Baseline, per suite program.
const OKAPI_OVERHEAD_LIMIT_PCT: f64 = 15.0;
const ORACLE_STEPS: u64 = 5_000_000;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))?;
    Ok(t)
}

fn ac1_equivalence() -> Outcome {
    let start = Instant::now();
    let corpus = common::corpus();
    ensure(corpus.len() >= 20, || {
        format!("corpus has only {} programs", corpus.len())
    })?;
    let mut runs = 0;
    for (name, p) in &corpus {
        for policy in PolicyKind::ALL {
            let r = simulate(p, &SimConfig::default().with_policy(policy));
            ensure(r.exit != ExitReason::Timeout, || {
                format!("{name} under {policy} timed out")
            })?;
            let oracle = run_sequential_with(p, ORACLE_STEPS, CycleSource::Replay(&r.rdcycle_log));
            ensure(r.state.same_architecture(&oracle.state), || {
                format!("{name} under {policy}: {:?}", r.state.diff(&oracle.state))
            })?;
            runs += 1;
        }
    }
    let t = within(AC1_LIMIT, start)?;
    Ok(format!(
        "{} programs, {runs} runs bit-identical to the oracle in {t:.2?}",
        corpus.len()
    ))
}

fn ac2_breakout() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for name in ["pht", "btb", "rsb", "stl"] {
        let s = builtin(name).unwrap();
        for policy in PolicyKind::ALL {
            let v = run_attack(&s, &SimConfig::default().with_policy(policy)).map_err(|e| e.to_string())?;
            ensure(v.error.is_none(), || format!("{name}/{policy}: {:?}", v.error))?;
            let want_leak = policy == PolicyKind::Baseline;
            ensure(v.leaked == want_leak, || {
                format!("{name}/{policy}: leaked={} recovered={:?}", v.leaked, v.recovered_bytes)
            })?;
            if v.leaked {
                let exact: Vec<Option<u8>> = s.secret.iter().map(|&b| Some(b)).collect();
                ensure(v.recovered_bytes == exact, || {
                    format!("{name}: recovered {:?}", v.recovered_bytes)
                })?;
            }
        }
        lines.push(name);
    }
    let t = within(AC2_LIMIT, start)?;
    Ok(format!(
        "{} leak under baseline only; blocked by okapi, naive, eager, dift ({t:.2?})",
        lines.join("/")
    ))
}

fn ac3_thread_reset() -> Outcome {
    let cfg = SimConfig {
        record_events: true,
        ..SimConfig::default().with_policy(PolicyKind::Okapi)
    };
    let s = builtin("syscall").unwrap();
    let program = s.program(&cfg, 0).map_err(|e| e.to_string())?;
    let roundtrip = common::files("corpus")
        .into_iter()
        .find(|(n, _, _)| n == "syscall_roundtrip")
        .map(|(_, _, p)| p)
        .ok_or("syscall_roundtrip missing")?;
    let mut switches = 0;
    for (p, min_switches) in [(&program, 2 * s.secret.len() as u64), (&roundtrip, 2)] {
        let mut pl = Pipeline::new(p, &cfg);
        let mut seen = 0;
        let mut bits_before_switch = 0;
        while !pl.is_done() {
            let before = pl.tlb().count_safe_bits();
            pl.step_cycle();
            if pl.stats().privilege_switches != seen {
                seen = pl.stats().privilege_switches;
                bits_before_switch = bits_before_switch.max(before);
                let left = pl.tlb().count_safe_bits();
                ensure(left == 0, || format!("{left} safe bits survive switch {seen}"))?;
            }
        }
        ensure(seen >= min_switches, || format!("only {seen} switches"))?;
        ensure(bits_before_switch > 0, || {
            "no safe bit was ever set before a switch".into()
        })?;
        switches += seen;
    }

    let layout = Layout::new(&cfg);
    let secret_vpn = layout.secret / cfg.page_size;
    let handler_vpn = layout.handler / cfg.page_size;
    let r = simulate(&program, &cfg);
    let blocked = r
        .events
        .iter()
        .filter(|e| {
            matches!(e.event, SimEvent::LoadBlocked { reason: BlockReason::NotSafeBit, vpn, pc, .. }
                if vpn == secret_vpn && pc / cfg.page_size != handler_vpn)
        })
        .count();
    // The handler reads the secret legally; only user-mode loads count.
    let spec_issued = r.events.iter().any(|e| {
        matches!(e.event, SimEvent::LoadIssued { vpn, pc, speculative: true, .. }
            if vpn == secret_vpn && pc / cfg.page_size != handler_vpn)
    });
    ensure(blocked > 0, || {
        "attacker load to the kernel secret page never blocked".into()
    })?;
    ensure(!spec_issued, || {
        "attacker load to the kernel secret page issued speculatively".into()
    })?;
    let v = run_attack(&s, &cfg).map_err(|e| e.to_string())?;
    ensure(!v.leaked, || format!("syscall scenario leaked {:?}", v.recovered_bytes))?;
    Ok(format!(
        "0 safe bits after each of {switches} switches; {blocked} attacker loads blocked on the secret page"
    ))
}

fn ac4_mutual_distrust() -> Outcome {
    let cfg = SimConfig::default().with_policy(PolicyKind::Okapi);
    let plain = run_attack(&builtin("mutual").unwrap(), &cfg).map_err(|e| e.to_string())?;
    let reset = run_attack(&builtin("mutual-reset").unwrap(), &cfg).map_err(|e| e.to_string())?;
    ensure(plain.leaked, || {
        "mutual distrust without OKRESET did not leak under okapi".into()
    })?;
    ensure(!reset.leaked, || {
        "mutual distrust with OKRESET leaked under okapi".into()
    })?;
    Ok("okapi: leaks without OKRESET at transitions, blocked with it".into())
}

/// `vpn` had its safe bit set when some load to it was blocked as suspicious.
fn suspicious_block_with_bit_set(events: &[okapi_core::pipeline::TimedEvent], vpn: u64) -> bool {
    let mut set = BTreeSet::new();
    for e in events {
        match e.event {
            SimEvent::SafeBitSet { vpn } => {
                set.insert(vpn);
            }
            SimEvent::SafeBitsCleared { .. } => set.clear(),
            SimEvent::TlbEvicted { vpn, .. } => {
                set.remove(&vpn);
            }
            SimEvent::LoadBlocked {
                reason: BlockReason::SuspiciousPending,
                vpn: v,
                ..
            } if v == vpn && set.contains(&vpn) => return true,
            _ => {}
        }
    }
    false
}

fn ac5_poisoning() -> Outcome {
    let cfg = SimConfig::default().with_policy(PolicyKind::Okapi);
    let vault = |h: Hardening, placement: Placement| AttackScenario {
        hardening: h,
        placement,
        ..builtin("vault").unwrap()
    };
    let run = |s: &AttackScenario| run_attack(s, &cfg).map_err(|e| e.to_string());
    ensure(run(&vault(Hardening::None, Placement::SamePage))?.leaked, || {
        "same-page gadget with no hardening did not leak".into()
    })?;
    for h in [Hardening::OkapiloadSecrets, Hardening::ResetAfterSecret] {
        ensure(!run(&vault(h, Placement::SamePage))?.leaked, || {
            format!("same-page gadget leaked under {h}")
        })?;
    }
    let cross = vault(Hardening::None, Placement::CrossPage);
    ensure(!run(&cross)?.leaked, || "cross-page gadget leaked".into())?;

    let ev_cfg = SimConfig {
        record_events: true,
        ..cfg.clone()
    };
    let r = simulate(&cross.program(&ev_cfg, 0).map_err(|e| e.to_string())?, &ev_cfg);
    let secret_vpn = Layout::new(&ev_cfg).secret / ev_cfg.page_size;
    ensure(suspicious_block_with_bit_set(&r.events, secret_vpn), || {
        "no suspicious_load block on the secret page while its bit was set".into()
    })?;
    Ok("same-page leaks with none, blocked by okapiload_secrets and reset_after_secret; cross-page blocked by suspicious_load with the bit set".into())
}

fn ac6_performance() -> Outcome {
    let start = Instant::now();
    let report = cmd_compare(&common::programs_dir("bench"), &PolicyKind::ALL, &SimConfig::default())
        .map_err(|e| e.to_string())?;
    ensure(report.ordering_violations.is_empty(), || {
        format!("{:?}", report.ordering_violations)
    })?;
    let cycles = |prog: &str, p: PolicyKind| {
        report
            .comparison
            .iter()
            .find(|r| r.program == prog && r.policy == p)
            .map(|r| r.cycles)
            .unwrap_or_else(|| panic!("{prog}/{p} missing"))
    };
    let programs: BTreeSet<&str> = report.comparison.iter().map(|r| r.program.as_str()).collect();
    let expected: BTreeSet<&str> = ["arith", "branchy", "mixed", "page_local", "pointer_chase", "streaming"]
        .into_iter()
        .collect();
    ensure(programs == expected, || format!("suite is {programs:?}"))?;
    ensure(
        cycles("page_local", PolicyKind::Okapi) < cycles("page_local", PolicyKind::Eager),
        || "okapi not faster than eager on page_local".into(),
    )?;
    let naive = cycles("pointer_chase", PolicyKind::Naive);
    ensure(
        PolicyKind::ALL
            .iter()
            .filter(|&&p| p != PolicyKind::Naive)
            .all(|&p| cycles("pointer_chase", p) < naive),
        || "naive not strictly slowest on pointer_chase".into(),
    )?;
    for prog in &expected {
        let chain = [
            PolicyKind::Baseline,
            PolicyKind::Okapi,
            PolicyKind::Eager,
            PolicyKind::Naive,
        ];
        for w in chain.windows(2) {
            ensure(cycles(prog, w[0]) <= cycles(prog, w[1]), || {
                format!(
                    "{prog}: {} {} > {} {}",
                    w[0],
                    cycles(prog, w[0]),
                    w[1],
                    cycles(prog, w[1])
                )
            })?;
        }
    }
    let arith: BTreeSet<u64> = PolicyKind::ALL.iter().map(|&p| cycles("arith", p)).collect();
    ensure(arith.len() == 1, || format!("arith cycles differ: {arith:?}"))?;
    let overhead = |p: PolicyKind| {
        report
            .comparison
            .iter()
            .filter(|r| r.policy == p)
            .map(|r| r.overhead_pct)
            .fold(f64::MIN, f64::max)
    };
    let okapi = overhead(PolicyKind::Okapi);
    ensure(okapi < OKAPI_OVERHEAD_LIMIT_PCT, || {
        format!("okapi overhead {okapi:.2}%")
    })?;
    let t = within(AC6_LIMIT, start)?;
    Ok(format!(
        "ordering holds on 6 programs; max overhead okapi {okapi:.2}%, eager {:.2}%, naive {:.2}%, dift {:.2}% (reported) ({t:.2?})",
        overhead(PolicyKind::Eager),
        overhead(PolicyKind::Naive),
        overhead(PolicyKind::Dift)
    ))
}

fn ac7_no_repeat_delay() -> Outcome {
    let cfg = SimConfig {
        record_events: true,
        ..SimConfig::default().with_policy(PolicyKind::Okapi)
    };
    let mut runs = 0;
    let mut blocks = 0;
    for (name, p) in common::corpus() {
        let r = simulate(&p, &cfg);
        let bad = repeat_delay_violations(&r.events);
        ensure(bad.is_empty(), || {
            format!("{name}: {} repeat delays, first {:?}", bad.len(), bad[0])
        })?;
        blocks += r.stats.loads_blocked_no_safe_bit;
        runs += 1;
    }
    Ok(format!(
        "{runs} okapi runs, {blocks} not_safe_bit blocks, none on a page whose bit was set"
    ))
}

fn ac8_reset_cost() -> Outcome {
    let cfg = SimConfig::default().with_policy(PolicyKind::Okapi);
    let cycles = |h: Hardening| {
        let s = AttackScenario {
            hardening: h,
            ..builtin("vault").unwrap()
        };
        run_attack(&s, &cfg).map(|v| v.cycles).map_err(|e| e.to_string())
    };
    let after = cycles(Hardening::ResetAfterSecret)?;
    let ret = cycles(Hardening::ResetOnReturn)?;
    let none = cycles(Hardening::None)?;
    let okld = cycles(Hardening::OkapiloadSecrets)?;
    ensure(after > ret && ret > none, || {
        format!("reset_after_secret {after}, reset_on_return {ret}, none {none}")
    })?;
    Ok(format!(
        "cycles reset_after_secret {after} > reset_on_return {ret} > none {none} (okapiload_secrets {okld})"
    ))
}

/// Straightforward recount: cut the trace wherever the privilege changes,
/// then count distinct pages per slice by sorting.
fn recount(trace: &[MemAccess], page: u64) -> Vec<PageCounts> {
    let mut cuts = vec![0];
    for i in 1..trace.len() {
        if trace[i].privilege != trace[i - 1].privilege {
            cuts.push(i);
        }
    }
    cuts.push(trace.len());
    let distinct = |slice: &[MemAccess], fetch: bool| {
        let mut pages: Vec<u64> = slice
            .iter()
            .filter(|a| (a.kind == AccessKind::Ifetch) == fetch)
            .map(|a| a.vaddr / page)
            .collect();
        pages.sort_unstable();
        pages.dedup();
        pages.len()
    };
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| PageCounts {
            code: distinct(&trace[w[0]..w[1]], true),
            data: distinct(&trace[w[0]..w[1]], false),
        })
        .collect()
}

fn ac9_locality() -> Outcome {
    let cfg = SimConfig::default();
    let check = |name: &str, p: &Program, report: &okapi_core::harness::LocalityReport| {
        let run = run_sequential(p, ORACLE_STEPS);
        let expect = recount(&run.trace, p.page_size);
        ensure(report.intervals == expect, || {
            format!("{name}: {:?} vs recount {:?}", report.intervals, expect)
        })?;
        let data: BTreeSet<u64> = run
            .trace
            .iter()
            .filter(|a| a.kind != AccessKind::Ifetch)
            .map(|a| a.vaddr / p.page_size)
            .collect();
        ensure(report.touched_data_pages == data.len(), || {
            format!("{name}: touched data pages")
        })?;
        ensure(
            report.data_fraction * p.data_pages.len() as f64 == data.len() as f64,
            || format!("{name}: data fraction"),
        )
    };
    let mut n = 0;
    for (name, path, p) in common::files("corpus").into_iter().chain(common::files("bench")) {
        let report = cmd_locality(&path, &cfg).map_err(|e| e.to_string())?;
        check(&name, &p, &report.locality[0])?;
        n += 1;
    }
    for s in common::scenarios() {
        let p = s.program(&cfg, 0).map_err(|e| e.to_string())?;
        check(&s.name, &p, &locality_report(&s.name, &p, ORACLE_STEPS))?;
        n += 1;
    }
    Ok(format!("{n} programs match the brute-force recount"))
}

fn ac10_taint() -> Outcome {
    let cfg = SimConfig {
        check_invariants: true,
        ..SimConfig::default().with_policy(PolicyKind::Dift)
    };
    let mut runs = 0;
    for (name, p) in common::corpus() {
        let r = simulate(&p, &cfg);
        ensure(r.invariant_violations.is_empty(), || {
            format!(
                "{name}: {:?}",
                &r.invariant_violations[..r.invariant_violations.len().min(3)]
            )
        })?;
        runs += 1;
    }
    Ok(format!(
        "{runs} dift runs, shadow replay found no untainted speculative data"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("AC1", "architectural equivalence", ac1_equivalence),
        ("AC2", "breakout matrix", ac2_breakout),
        ("AC3", "thread-level reset", ac3_thread_reset),
        ("AC4", "sub-thread sandboxing", ac4_mutual_distrust),
        ("AC5", "poisoning defenses", ac5_poisoning),
        ("AC6", "performance ordering", ac6_performance),
        ("AC7", "no repeat delay", ac7_no_repeat_delay),
        ("AC8", "reset cost ordering", ac8_reset_cost),
        ("AC9", "locality metric", ac9_locality),
        ("AC10", "taint soundness", ac10_taint),
    ];
    let mut failed = 0;
    for (id, title, f) in criteria {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("{id} PASS {title}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("{id} FAIL {title}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("{id} FAIL {title}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
