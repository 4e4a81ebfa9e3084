//! Randomised checks over generated programs and gate inputs.

use proptest::prelude::*;

use okapi_core::isa::{assemble, run_sequential_with, CycleSource};
use okapi_core::pipeline::{simulate, ExitReason};
use okapi_core::policy::{gate, LoadView};
use okapi_core::{PolicyKind, SimConfig};

const DATA: u64 = 0x20000;
/// Word-aligned offset mask covering the four data pages.
const MASK: u64 = 0x3ff8;

/// One generated statement; registers r1..r8 hold data, r9 is the data
/// base, r10 the loop counter, r11 scratch and r12 the offset mask.
#[derive(Debug, Clone)]
enum Op {
    Alu(&'static str, u8, u8, u8),
    Addi(u8, u8, i16),
    Li(u8, u32),
    Load(bool, u8, u8),
    Store(u8, u8),
    Flush(u8),
    Skip(&'static str, u8, u8, u8),
    Rdcycle(u8),
    Fence,
    Okreset,
    Call,
    Unmapped(u8),
}

fn reg() -> impl Strategy<Value = u8> {
    1u8..=8
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (prop::sample::select(vec!["ADD", "SUB", "AND", "OR", "XOR", "SHL", "SHR"]), reg(), reg(), reg())
            .prop_map(|(m, d, a, b)| Op::Alu(m, d, a, b)),
        3 => (reg(), reg(), any::<i16>()).prop_map(|(d, a, i)| Op::Addi(d, a, i)),
        2 => (reg(), any::<u32>()).prop_map(|(d, v)| Op::Li(d, v)),
        5 => (any::<bool>(), reg(), reg()).prop_map(|(ok, d, a)| Op::Load(ok, d, a)),
        3 => (reg(), reg()).prop_map(|(v, a)| Op::Store(v, a)),
        1 => reg().prop_map(Op::Flush),
        3 => (prop::sample::select(vec!["BEQ", "BNE", "BLT"]), reg(), reg(), 1u8..4)
            .prop_map(|(m, a, b, n)| Op::Skip(m, a, b, n)),
        1 => reg().prop_map(Op::Rdcycle),
        1 => Just(Op::Fence),
        1 => Just(Op::Okreset),
        1 => Just(Op::Call),
        1 => (0u8..40).prop_map(Op::Unmapped),
    ]
}

fn render(body: &[Op], iterations: u8, init: &[u64]) -> String {
    let mut s = format!("_start:\n    LI r9, {DATA}\n    LI r12, {MASK}\n    LI r10, {iterations}\n");
    for (i, v) in init.iter().enumerate() {
        s += &format!("    LI r{}, {}\n", i + 1, v);
    }
    s += "top:\n";
    let addr = |a: u8| format!("    AND r11, r{a}, r12\n    ADD r11, r11, r9\n");
    for (i, op) in body.iter().enumerate() {
        s += &format!("l{i}:\n");
        s += &match *op {
            Op::Alu(m, d, a, b) => format!("    {m} r{d}, r{a}, r{b}\n"),
            Op::Addi(d, a, imm) => format!("    ADDI r{d}, r{a}, {imm}\n"),
            Op::Li(d, v) => format!("    LI r{d}, {v}\n"),
            Op::Load(ok, d, a) => format!("{}    {} r{d}, [r11]\n", addr(a), if ok { "OKLD" } else { "LD" }),
            Op::Store(v, a) => format!("{}    ST r{v}, [r11+0]\n", addr(a)),
            Op::Flush(a) => format!("{}    FLUSH [r11]\n", addr(a)),
            Op::Skip(m, a, b, n) => {
                let target = (i + n as usize).min(body.len());
                format!("    {m} r{a}, r{b}, l{target}\n")
            }
            Op::Rdcycle(d) => format!("    RDCYCLE r{d}\n"),
            Op::Fence => "    FENCE\n".into(),
            Op::Okreset => "    OKRESET\n".into(),
            Op::Call => "    CALL leaf\n".into(),
            Op::Unmapped(0) => "    LD r1, [r0+0x100]\n".into(),
            Op::Unmapped(_) => "    NOP\n".into(),
        };
    }
    s += &format!(
        "l{}:\n    ADDI r10, r10, -1\n    BNE r10, r0, top\n    HALT\n",
        body.len()
    );
    s += "leaf:\n    ADDI r8, r8, 3\n    RET\n";
    for page in 0..4 {
        s += &format!(".word {:#x} {}\n", DATA + page * 0x1000, page + 1);
    }
    s
}

fn program() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(op(), 1..40),
        1u8..6,
        prop::collection::vec(any::<u64>(), 8),
    )
        .prop_map(|(body, n, init)| render(&body, n, &init))
}

fn small_config(policy: PolicyKind) -> SimConfig {
    SimConfig {
        rob_entries: 16,
        tlb_entries: 2,
        cache_sets: 8,
        cache_ways: 1,
        ..SimConfig::default().with_policy(policy)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pipeline_matches_oracle(src in program()) {
        let p = assemble(&src).unwrap();
        for policy in PolicyKind::ALL {
            for cfg in [SimConfig::default().with_policy(policy), small_config(policy)] {
                let r = simulate(&p, &cfg);
                prop_assert_ne!(r.exit, ExitReason::Timeout);
                let oracle = run_sequential_with(&p, 1_000_000, CycleSource::Replay(&r.rdcycle_log));
                prop_assert!(r.state.same_architecture(&oracle.state), "{policy}: {:?}\n{src}", r.state.diff(&oracle.state));
            }
        }
    }

    #[test]
    fn load_counters_balance(src in program()) {
        let p = assemble(&src).unwrap();
        for policy in PolicyKind::ALL {
            let s = simulate(&p, &small_config(policy)).stats;
            prop_assert_eq!(s.dispatched_loads, s.committed_loads + s.squashed_loads, "{}", policy);
            prop_assert_eq!(s.blocked_total(), s.load_block_events);
        }
    }

    #[test]
    fn dift_taint_is_sound(src in program()) {
        let p = assemble(&src).unwrap();
        let cfg = SimConfig { check_invariants: true, ..small_config(PolicyKind::Dift) };
        let r = simulate(&p, &cfg);
        prop_assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    }

    /// Any consistent load view admitted by a stricter gate is admitted by
    /// every looser one: naive, then eager, then okapi, then baseline.
    #[test]
    fn gates_nest(head in 0u64..50, ahead in 0u64..20, behind in 0u64..20,
                  okapi_load: bool, suspicious: bool, okreset: bool) {
        let v = head + ahead;
        let seq = head + behind;
        let view = LoadView {
            seq,
            is_okapi_load: okapi_load,
            unsafe_: seq > v,
            suspicious_load: suspicious && seq > v,
            at_rob_head: seq == head,
            older_okreset: okreset,
        };
        let allowed = |p| gate(p, &view, v).allowed();
        let chain = [PolicyKind::Naive, PolicyKind::Eager, PolicyKind::Okapi, PolicyKind::Baseline];
        for w in chain.windows(2) {
            prop_assert!(!allowed(w[0]) || allowed(w[1]), "{} admits but {} denies {view:?}", w[0], w[1]);
        }
    }
}
