//! Cycle-stepped speculative out-of-order engine.
//!
//! Each cycle runs, in order: writeback (completions, branch resolution,
//! store-address resolution and their squashes), visibility-point and flag
//! update, commit, issue, then fetch/dispatch. Speculation gating is
//! delegated to [`crate::policy`].

mod issue;
pub mod predictors;
pub mod rob;
pub mod stats;
pub mod uop;

use crate::config::SimConfig;
use crate::isa::{ArchState, Fault, Opcode, Program, Reg, INSTR_BYTES, WORD_BYTES};
use crate::mem::{monitor_privilege, PageTable, Privilege, PrivilegeChange, TimedCache, Tlb, TlbAccessKind, TlbEvent};
use crate::policy::{BlockReason, PolicyKind, Taint};

pub use predictors::{Btb, Mdp, Pht, PredictorState, Rsb};
pub use rob::{overlaps, propagate_suspicious, update_visibility_point, Dependence, Rob, Source, StoreBuffer};
pub use stats::{repeat_delay_violations, ClearCause, ExitReason, PageCounts, RunStats, SimEvent, TimedEvent};
pub use uop::{MicroOp, OpFlags, OpStatus, Operand};

use stats::LocalityTracker;

/// Everything a finished simulation leaves behind.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub exit: ExitReason,
    pub state: ArchState,
    pub stats: RunStats,
    pub events: Vec<TimedEvent>,
    pub trace: Vec<String>,
    /// Values returned by committed RDCYCLEs, in program order.
    pub rdcycle_log: Vec<u64>,
    pub invariant_violations: Vec<String>,
}

pub struct Pipeline<'p> {
    program: &'p Program,
    page_table: PageTable,
    cfg: SimConfig,
    /// Committed architectural state.
    arch: ArchState,
    rob: Rob,
    store_buffer: StoreBuffer,
    tlb: Tlb,
    cache: TimedCache,
    predictors: PredictorState,
    cycle: u64,
    next_seq: u64,
    last_committed: u64,
    fetch_pc: u64,
    /// Pc whose successor `fetch_pc` is; drives page-crossing detection.
    fetch_prev_pc: Option<u64>,
    /// Re-fetch after a memory-order squash keeps the original flag.
    fetch_force_suspicious: bool,
    fetch_stalled: bool,
    exit: Option<ExitReason>,
    stats: RunStats,
    locality: LocalityTracker,
    events: Vec<TimedEvent>,
    trace: Vec<String>,
    rdcycle_log: Vec<u64>,
    violations: Vec<String>,
}

impl<'p> Pipeline<'p> {
    pub fn new(program: &'p Program, cfg: &SimConfig) -> Self {
        let arch = program.initial_state();
        Pipeline {
            program,
            page_table: program.page_table(),
            arch,
            rob: Rob::new(cfg.rob_entries),
            store_buffer: StoreBuffer::default(),
            tlb: Tlb::new(cfg.tlb_entries, cfg.walk_latency),
            cache: TimedCache::new(
                cfg.cache_sets,
                cfg.cache_ways,
                cfg.line_bytes,
                cfg.cache_hit_latency,
                cfg.cache_miss_latency,
            ),
            predictors: PredictorState::new(cfg.pht_entries, cfg.btb_entries, cfg.rsb_depth, cfg.mdp_entries),
            cycle: 0,
            next_seq: 1,
            last_committed: 0,
            fetch_pc: program.entry_pc,
            fetch_prev_pc: None,
            fetch_force_suspicious: false,
            fetch_stalled: false,
            exit: None,
            stats: RunStats::default(),
            locality: LocalityTracker::default(),
            events: Vec::new(),
            trace: Vec::new(),
            rdcycle_log: Vec::new(),
            violations: Vec::new(),
            cfg: cfg.clone(),
        }
    }

    pub fn policy(&self) -> PolicyKind {
        self.cfg.policy
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn rob(&self) -> &Rob {
        &self.rob
    }

    pub fn tlb(&self) -> &Tlb {
        &self.tlb
    }

    pub fn cache(&self) -> &TimedCache {
        &self.cache
    }

    pub fn predictors(&self) -> &PredictorState {
        &self.predictors
    }

    pub fn arch(&self) -> &ArchState {
        &self.arch
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn events(&self) -> &[TimedEvent] {
        &self.events
    }

    pub fn exit(&self) -> Option<ExitReason> {
        self.exit
    }

    pub fn visibility_point(&self) -> u64 {
        self.rob.visibility_point
    }

    pub fn is_done(&self) -> bool {
        self.exit.is_some()
    }

    /// Runs until HALT, a committed fault, or `max_cycles`.
    pub fn run(mut self) -> RunResult {
        while self.exit.is_none() {
            if self.cycle >= self.cfg.max_cycles {
                self.exit = Some(ExitReason::Timeout);
                break;
            }
            self.step_cycle();
        }
        self.finish()
    }

    fn finish(mut self) -> RunResult {
        // Whatever is still in flight never commits.
        let remaining = self.rob.iter().filter(|op| op.is_load()).count() as u64;
        self.stats.squashed_loads += remaining;
        self.stats.cycles = self.cycle;
        self.stats.pages_touched_between_switches = std::mem::take(&mut self.locality).finish();
        self.arch.cycle = self.cycle;
        RunResult {
            exit: self.exit.unwrap_or(ExitReason::Timeout),
            state: self.arch,
            stats: self.stats,
            events: self.events,
            trace: self.trace,
            rdcycle_log: self.rdcycle_log,
            invariant_violations: self.violations,
        }
    }

    pub fn step_cycle(&mut self) {
        if self.exit.is_some() {
            return;
        }
        self.writeback();
        self.update_flags();
        if self.cfg.check_invariants {
            self.check_invariants();
        }
        self.commit_step();
        if self.exit.is_none() {
            self.issue_step();
            self.fetch_step();
        }
        self.cycle += 1;
    }

    fn page(&self, addr: u64) -> u64 {
        addr / self.cfg.page_size
    }

    fn log(&mut self, event: SimEvent) {
        if self.cfg.record_events {
            self.events.push(TimedEvent {
                cycle: self.cycle,
                event,
            });
        }
    }

    fn trace_line(&mut self, level: u8, seq: u64, pc: u64, what: &str, detail: &str) {
        if self.cfg.trace_verbosity >= level {
            let line = format!("{} {} {:#x} {} {}", self.cycle, seq, pc, what, detail);
            self.trace.push(line.trim_end().to_string());
        }
    }

    fn drain_tlb_events(&mut self) {
        for e in self.tlb.drain_events() {
            match e {
                TlbEvent::SafeBitSet { vpn } => self.log(SimEvent::SafeBitSet { vpn }),
                TlbEvent::Evicted { vpn, had_safe_bit } => self.log(SimEvent::TlbEvicted { vpn, had_safe_bit }),
                TlbEvent::Filled { .. } => {}
            }
        }
    }

    pub(crate) fn translate(&mut self, vaddr: u64, kind: TlbAccessKind) -> crate::mem::TlbOutcome {
        let out = self
            .tlb
            .translate(vaddr, WORD_BYTES, kind, &self.page_table, self.cycle);
        self.drain_tlb_events();
        out
    }

    fn clear_safe_bits(&mut self, cause: ClearCause) {
        let count = self.tlb.clear_safe_bits();
        self.stats.safe_bit_clears += 1;
        self.log(SimEvent::SafeBitsCleared { count, cause });
    }

    // ---- fetch / dispatch ------------------------------------------------

    /// Fetches and dispatches up to `fetch_width` ops along the predicted path.
    pub fn fetch_step(&mut self) {
        for _ in 0..self.cfg.fetch_width {
            if self.fetch_stalled || self.rob.is_full() || !self.backend_has_room() {
                break;
            }
            let pc = self.fetch_pc;
            let crossed = self.fetch_prev_pc.is_some_and(|prev| self.page(prev) != self.page(pc));
            let suspicious = crossed || std::mem::take(&mut self.fetch_force_suspicious);
            let seq = self.next_seq;
            self.next_seq += 1;

            let instr = match self.program.fetch(pc) {
                Ok(i) => i,
                Err(kind) => {
                    let mut op = MicroOp::fetch_fault(seq, pc, kind);
                    op.flags.suspicious = suspicious;
                    self.rob.push(op);
                    self.fetch_stalled = true;
                    self.trace_line(2, seq, pc, "fetch_fault", "");
                    break;
                }
            };

            let fall_through = pc.wrapping_add(INSTR_BYTES);
            let predicted = match instr.opcode {
                Opcode::Beq | Opcode::Bne | Opcode::Blt => {
                    if self.predictors.pht.predict_taken(pc) {
                        instr.imm as u64
                    } else {
                        fall_through
                    }
                }
                Opcode::Jmp => instr.imm as u64,
                Opcode::Call => {
                    self.predictors.rsb.push(fall_through);
                    instr.imm as u64
                }
                Opcode::Jmpr => self.predictors.btb.predict(pc).unwrap_or(fall_through),
                Opcode::Ret => self
                    .predictors
                    .rsb
                    .pop()
                    .or_else(|| self.predictors.btb.predict(pc))
                    .unwrap_or(fall_through),
                _ => fall_through,
            };

            let mut op = MicroOp::new(seq, pc, instr, predicted);
            op.flags.suspicious = suspicious;
            let [s1, s2] = instr.sources();
            op.srcs = [s1.map(|r| self.rename(r)), s2.map(|r| self.rename(r))];
            match instr.opcode {
                Opcode::Nop | Opcode::Fence | Opcode::Okreset | Opcode::Syscall | Opcode::Sysret | Opcode::Halt => {
                    op.status = OpStatus::Executed;
                }
                _ => {}
            }
            if op.is_load() {
                self.stats.dispatched_loads += 1;
            }
            if op.is_store() {
                self.store_buffer.push(seq);
            }
            self.rob.push(op);
            self.trace_line(2, seq, pc, "dispatch", &instr.to_string());

            self.fetch_prev_pc = Some(pc);
            self.fetch_pc = predicted;
            if matches!(instr.opcode, Opcode::Syscall | Opcode::Sysret | Opcode::Halt) {
                self.fetch_stalled = true;
                break;
            }
        }
    }

    fn backend_has_room(&self) -> bool {
        let waiting = self.rob.iter().filter(|op| op.waiting()).count();
        let loads = self.rob.iter().filter(|op| op.is_load()).count();
        waiting < self.cfg.iq_entries && loads < self.cfg.lq_entries && self.store_buffer.len() < self.cfg.sq_entries
    }

    /// Youngest in-flight producer of `r`, else the committed value.
    fn rename(&self, r: Reg) -> Operand {
        if r.is_zero() {
            return Operand::Value(0);
        }
        self.rob
            .iter()
            .rev()
            .find(|op| op.fetch_fault.is_none() && op.instr.dest() == Some(r))
            .map_or(Operand::Value(self.arch.reg(r)), |op| Operand::Producer(op.seq))
    }

    // ---- writeback / resolution -------------------------------------------

    fn writeback(&mut self) {
        let now = self.cycle;
        let mut idx = 0;
        while idx < self.rob.len() {
            let op = self.rob.get_mut(idx).expect("index in range");
            if op.status == OpStatus::Issued && op.done_at <= now {
                op.status = OpStatus::Executed;
                let seq = op.seq;
                let pc = op.pc;
                self.trace_line(2, seq, pc, "complete", "");
                self.resolve_and_squash(idx);
            }
            idx += 1;
        }
    }

    /// Handles a freshly completed op: checks a control op's prediction and a
    /// store's address against younger loads. Returns the squash point, if any.
    pub fn resolve_and_squash(&mut self, idx: usize) -> Option<u64> {
        let op = self.rob.get(idx)?.clone();
        if op.instr.is_predicted_control() {
            let actual = op.actual_next_pc.expect("resolved control op has a target");
            if actual != op.predicted_next_pc {
                self.stats.branch_mispredicts += 1;
                self.squash(op.seq + 1, actual, Some(op.pc), false);
                return Some(op.seq + 1);
            }
            return None;
        }
        if op.is_store() && op.mem_fault.is_none() {
            let addr = op.addr.expect("executed store has an address");
            let value = op.store_value.expect("executed store has data");
            self.store_buffer.resolve(op.seq, addr, value);
            let victim = self.rob.iter().find(|l| {
                l.seq > op.seq
                    && l.is_load()
                    && matches!(l.status, OpStatus::Issued | OpStatus::Executed)
                    && l.mem_fault.is_none()
                    && l.addr.is_some_and(|a| overlaps(a, addr))
                    && l.forwarded_from.is_none_or(|s| s < op.seq)
            });
            if let Some(l) = victim {
                let (first, pc, suspicious) = (l.seq, l.pc, l.flags.suspicious);
                let prev = self.rob.iter().rev().find(|o| o.seq < first).map(|o| o.pc);
                self.stats.memory_order_violations += 1;
                self.predictors.mdp.train_violation(pc);
                self.squash(first, pc, prev, suspicious);
                return Some(first);
            }
        } else if op.is_store() {
            // Faulting store: its address is known, it just cannot commit.
            self.store_buffer.resolve(op.seq, op.addr.unwrap_or(0), 0);
        }
        None
    }

    fn squash(&mut self, first: u64, redirect: u64, prev_pc: Option<u64>, force_suspicious: bool) {
        let gone = self.rob.squash_from(first);
        self.stats.squashed_loads += gone.iter().filter(|op| op.is_load()).count() as u64;
        self.store_buffer.truncate_from(first);
        self.fetch_pc = redirect;
        self.fetch_prev_pc = prev_pc;
        self.fetch_force_suspicious = force_suspicious;
        self.fetch_stalled = false;
        self.log(SimEvent::Squash {
            from_seq: first,
            redirect,
        });
        self.trace_line(1, first, redirect, "squash", &format!("{} ops", gone.len()));
    }

    fn update_flags(&mut self) {
        let v = update_visibility_point(&mut self.rob, &self.store_buffer, self.last_committed);
        propagate_suspicious(&mut self.rob);
        let dift = self.cfg.policy == PolicyKind::Dift;
        for op in self.rob.iter_mut() {
            op.flags.tainted = dift && op.taint.is_tainted(v);
        }
    }

    // ---- commit ----------------------------------------------------------

    /// Retires up to `commit_width` executed, non-speculative ops from the head.
    pub fn commit_step(&mut self) {
        for _ in 0..self.cfg.commit_width {
            let Some(head) = self.rob.head() else { break };
            if !head.is_executed() || head.seq > self.rob.visibility_point {
                break;
            }
            let op = self.rob.pop_head().expect("head exists");
            if self.cfg.check_invariants && op.flags.unsafe_ {
                self.violations
                    .push(format!("cycle {}: unsafe op {} committed", self.cycle, op.seq));
            }
            self.retire(op);
            if self.exit.is_some() {
                break;
            }
        }
    }

    fn raise(&mut self, fault: Fault) {
        self.arch.raise(fault);
        self.arch.pc = fault.pc;
        self.exit = Some(ExitReason::Fault(fault));
    }

    fn retire(&mut self, mut op: MicroOp) {
        let pc = op.pc;
        self.last_committed = op.seq;
        op.status = OpStatus::Committed;
        self.trace_line(1, op.seq, pc, "commit", &op.instr.to_string());

        if let Some(kind) = op.fetch_fault {
            self.raise(Fault { kind, addr: pc, pc });
            return;
        }
        if let Some(kind) = op.mem_fault {
            // A faulting load is discarded, never committed.
            if op.is_load() {
                self.stats.squashed_loads += 1;
            }
            let addr = op.addr.unwrap_or(0);
            self.raise(Fault { kind, addr, pc });
            return;
        }

        self.stats.committed_instructions += 1;
        self.locality.code(self.page(pc));
        let mut next_pc = op.actual_next_pc.unwrap_or(pc.wrapping_add(INSTR_BYTES));
        let i = op.instr;
        match i.opcode {
            Opcode::Ld | Opcode::Okld => {
                let addr = op.addr.expect("committed load has an address");
                self.stats.committed_loads += 1;
                self.locality.data(self.page(addr));
                self.predictors.mdp.on_commit(pc);
                if i.opcode == Opcode::Ld {
                    // A legal access puts the page in the trust domain even if
                    // its entry was evicted since issue.
                    self.translate(addr, TlbAccessKind::SafeLoad);
                }
            }
            Opcode::St => {
                let addr = op.addr.expect("committed store has an address");
                let value = op.store_value.expect("committed store has data");
                let drained = self.store_buffer.pop_oldest();
                debug_assert_eq!(drained.map(|e| e.seq), Some(op.seq));
                self.translate(addr, TlbAccessKind::StoreCommitted);
                self.arch.mem.write_u64(addr, value);
                self.cache.access(addr);
                self.locality.data(self.page(addr));
            }
            Opcode::Flush => {
                if let Some(paddr) = op.paddr {
                    self.cache.flush(paddr);
                }
            }
            Opcode::Beq | Opcode::Bne | Opcode::Blt => {
                self.predictors.pht.update(pc, next_pc != pc.wrapping_add(INSTR_BYTES));
            }
            Opcode::Jmpr => self.predictors.btb.update(pc, next_pc),
            Opcode::Rdcycle => self.rdcycle_log.push(op.result.unwrap_or(0)),
            Opcode::Okreset => {
                if self.cfg.policy == PolicyKind::Okapi {
                    self.stats.okresets_executed += 1;
                    self.clear_safe_bits(ClearCause::OkReset);
                }
            }
            Opcode::Syscall => match self.program.syscall_handler {
                Some(handler) => {
                    self.arch.sepc = pc.wrapping_add(INSTR_BYTES);
                    self.switch_privilege(Privilege::Supervisor);
                    next_pc = handler;
                    self.redirect_after_serializing(handler, pc);
                }
                None => {
                    self.stats.committed_instructions -= 1;
                    self.raise(Fault {
                        kind: crate::mem::FaultKind::NoHandler,
                        addr: pc,
                        pc,
                    });
                    return;
                }
            },
            Opcode::Sysret => {
                next_pc = self.arch.sepc;
                self.switch_privilege(Privilege::User);
                self.redirect_after_serializing(next_pc, pc);
            }
            Opcode::Halt => {
                next_pc = pc;
                self.arch.halted = true;
                self.exit = Some(ExitReason::Halted);
            }
            _ => {}
        }
        if let (Some(rd), Some(v)) = (i.dest(), op.result) {
            self.arch.set_reg(rd, v);
        }
        self.arch.pc = next_pc;

        // Consumers of this op now read the committed value.
        if let Some(v) = op.result {
            for younger in self.rob.iter_mut() {
                for src in younger.srcs.iter_mut() {
                    if *src == Some(Operand::Producer(op.seq)) {
                        *src = Some(Operand::Value(v));
                    }
                }
            }
        }
    }

    fn switch_privilege(&mut self, new: Privilege) {
        let old = self.arch.privilege;
        self.arch.privilege = new;
        self.stats.privilege_switches += 1;
        self.locality.switch();
        if monitor_privilege(old, new) == PrivilegeChange::Switch {
            self.clear_safe_bits(ClearCause::PrivilegeSwitch);
        }
    }

    fn redirect_after_serializing(&mut self, target: u64, from: u64) {
        debug_assert!(self.rob.is_empty());
        self.fetch_pc = target;
        self.fetch_prev_pc = Some(from);
        self.fetch_stalled = false;
    }

    // ---- invariant checks ------------------------------------------------

    fn check_invariants(&mut self) {
        let v = self.rob.visibility_point;
        for op in self.rob.iter() {
            if op.flags.unsafe_ != (op.seq > v) {
                self.violations.push(format!(
                    "cycle {}: op {} unsafe flag disagrees with V={v}",
                    self.cycle, op.seq
                ));
            }
            if op.flags.suspicious_load && !op.is_load() {
                self.violations.push(format!(
                    "cycle {}: non-load {} marked suspicious_load",
                    self.cycle, op.seq
                ));
            }
        }
        if self.cfg.policy == PolicyKind::Dift {
            self.check_taint_shadow();
        }
    }

    /// Independent dataflow walk: an executed value that depends on a load
    /// still beyond the visibility point must carry a live taint.
    fn check_taint_shadow(&mut self) {
        let v = self.rob.visibility_point;
        let mut depends: Vec<(u64, bool)> = Vec::with_capacity(self.rob.len());
        let lookup = |deps: &[(u64, bool)], seq: u64| {
            deps.binary_search_by_key(&seq, |&(s, _)| s)
                .map(|i| deps[i].1)
                .unwrap_or(false)
        };
        let mut bad = Vec::new();
        for op in self.rob.iter() {
            let from_sources = op.srcs.iter().flatten().any(|s| match *s {
                Operand::Producer(p) => lookup(&depends, p),
                Operand::Value(_) => false,
            });
            let executed_value = op.result.is_some() && matches!(op.status, OpStatus::Issued | OpStatus::Executed);
            let own = op.is_load() && executed_value && op.seq > v;
            let dep = executed_value && (own || from_sources);
            depends.push((op.seq, dep));
            if dep && op.status == OpStatus::Executed && !op.taint.is_tainted(v) {
                bad.push(format!(
                    "cycle {}: op {} at {:#x} holds speculative data untainted",
                    self.cycle, op.seq, op.pc
                ));
            }
        }
        self.violations.extend(bad);
    }

    pub(crate) fn note_block(&mut self, idx: usize, reason: BlockReason) {
        let op = self.rob.get_mut(idx).expect("index in range");
        op.status = OpStatus::Blocked(reason);
        let first_time = op.blocked_mask & reason.bit() == 0;
        op.blocked_mask |= reason.bit();
        let (seq, pc, addr, is_load) = (op.seq, op.pc, op.addr, op.is_load());
        if is_load && first_time {
            self.stats.count_block(reason);
            let vpn = self.page(addr.unwrap_or(0));
            self.log(SimEvent::LoadBlocked { seq, pc, reason, vpn });
            self.trace_line(1, seq, pc, "blocked", reason.name());
        }
    }

    pub(crate) fn operand(&self, src: Option<Operand>) -> Option<(u64, Taint)> {
        match src {
            None => Some((0, Taint::CLEAN)),
            Some(Operand::Value(v)) => Some((v, Taint::CLEAN)),
            Some(Operand::Producer(seq)) => {
                let p = self.rob.find(seq)?;
                if p.status == OpStatus::Executed {
                    p.result.map(|v| (v, p.taint))
                } else {
                    None
                }
            }
        }
    }
}

/// Convenience: simulate `program` under `cfg` to completion.
pub fn simulate(program: &Program, cfg: &SimConfig) -> RunResult {
    Pipeline::new(program, cfg).run()
}
