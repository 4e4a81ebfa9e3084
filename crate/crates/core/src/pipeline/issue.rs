use crate::isa::{Opcode, INSTR_BYTES, WORD_BYTES};
use crate::mem::{Access, TlbAccessKind, TlbOutcome};
use crate::policy::{gate, gate_transmitter, taint_propagate, BlockReason, GateDecision, LoadView, PolicyKind, Taint};

use super::rob::Source;
use super::uop::OpStatus;
use super::{Pipeline, SimEvent};

/// Outcome of one issue attempt.
enum Attempt {
    Issued,
    /// Waiting for operands or a structural resource; not a policy block.
    NotReady,
    Blocked(BlockReason),
}

impl Pipeline<'_> {
    /// Oldest-first scan. Issued ops consume slots; blocked loads are
    /// re-evaluated every cycle.
    pub fn issue_step(&mut self) {
        let mut slots = self.cfg.issue_width;
        let mut older_okreset = false;
        let mut idx = 0;
        while idx < self.rob.len() {
            let op = self.rob.get(idx).expect("index in range");
            let opcode = op.opcode();
            let fetch_fault = op.fetch_fault.is_some();
            if op.waiting() && slots > 0 {
                match self.try_issue(idx, older_okreset) {
                    Attempt::Issued => slots -= 1,
                    Attempt::Blocked(reason) => self.note_block(idx, reason),
                    Attempt::NotReady => {
                        let op = self.rob.get_mut(idx).expect("index in range");
                        op.status = OpStatus::Dispatched;
                    }
                }
            }
            if fetch_fault {
                break;
            }
            let op = self.rob.get(idx).expect("index in range");
            match opcode {
                // Serializing: nothing younger issues until these are done.
                Opcode::Fence => break,
                Opcode::Rdcycle if !op.is_executed() => break,
                Opcode::Okreset if self.cfg.policy == PolicyKind::Okapi => older_okreset = true,
                _ => {}
            }
            idx += 1;
        }
    }

    fn try_issue(&mut self, idx: usize, older_okreset: bool) -> Attempt {
        let op = self.rob.get(idx).expect("index in range");
        let (Some((a, ta)), Some((b, tb))) = (self.operand(op.srcs[0]), self.operand(op.srcs[1])) else {
            return Attempt::NotReady;
        };
        let instr = op.instr;
        let pc = op.pc;
        let seq = op.seq;
        let now = self.cycle;
        let v = self.rob.visibility_point;
        let policy = self.cfg.policy;
        let dift = policy == PolicyKind::Dift;

        match instr.opcode {
            Opcode::Ld | Opcode::Okld => return self.issue_load(idx, a, ta, older_okreset),
            Opcode::Rdcycle if idx != 0 => return Attempt::NotReady,
            _ => {}
        }

        // Transmitters under DIFT: addresses, store data, branch operands.
        let transmits = instr.is_predicted_control() || matches!(instr.opcode, Opcode::St | Opcode::Flush);
        if transmits {
            if let Err(reason) = gate_transmitter(policy, &[ta, tb], v) {
                return Attempt::Blocked(reason);
            }
        }

        let fall_through = pc.wrapping_add(INSTR_BYTES);
        let op = self.rob.get_mut(idx).expect("index in range");
        let mut latency = 1;
        match instr.opcode {
            Opcode::Add
            | Opcode::Sub
            | Opcode::And
            | Opcode::Or
            | Opcode::Xor
            | Opcode::Shl
            | Opcode::Shr
            | Opcode::Addi
            | Opcode::Li => {
                op.result = instr.eval_alu(a, b);
                if dift {
                    op.taint = taint_propagate(&[ta, tb], None, v);
                }
            }
            Opcode::Beq | Opcode::Bne | Opcode::Blt => {
                let taken = instr.branch_taken(a, b).expect("branch");
                op.actual_next_pc = Some(if taken { instr.imm as u64 } else { fall_through });
                latency = self.cfg.branch_resolve_latency;
            }
            Opcode::Jmpr | Opcode::Ret => {
                op.actual_next_pc = Some(a);
                latency = self.cfg.branch_resolve_latency;
            }
            Opcode::Jmp => op.actual_next_pc = Some(instr.imm as u64),
            Opcode::Call => {
                op.actual_next_pc = Some(instr.imm as u64);
                op.result = Some(fall_through);
            }
            Opcode::St => {
                let addr = instr.effective_address(a);
                op.addr = Some(addr);
                op.store_value = Some(b);
                op.mem_fault = self.page_table.check(addr, WORD_BYTES, Access::Write).err();
                op.translated = true;
            }
            Opcode::Flush => {
                let addr = instr.effective_address(a);
                op.addr = Some(addr);
                // FLUSH never faults: an untranslatable line is simply not flushed.
                match self.translate(addr, TlbAccessKind::Flush) {
                    TlbOutcome::Translated {
                        paddr, latency: walk, ..
                    } => {
                        latency += walk;
                        let op = self.rob.get_mut(idx).expect("index in range");
                        op.paddr = Some(paddr);
                    }
                    TlbOutcome::Blocked | TlbOutcome::Fault(_) => {}
                }
                let op = self.rob.get_mut(idx).expect("index in range");
                op.translated = true;
            }
            Opcode::Rdcycle => op.result = Some(now),
            _ => unreachable!("{:?} never waits to issue", instr.opcode),
        }
        let op = self.rob.get_mut(idx).expect("index in range");
        op.status = OpStatus::Issued;
        op.done_at = now + latency;
        self.trace_line(2, seq, pc, "issue", "");
        Attempt::Issued
    }

    /// Load issue: DIFT address check, policy gate, memory-dependence
    /// prediction, TLB translation (which may block), then forwarding or a
    /// cache access. The cache is filled here, so a later squash leaves the
    /// footprint behind.
    fn issue_load(&mut self, idx: usize, base: u64, base_taint: Taint, older_okreset: bool) -> Attempt {
        let v = self.rob.visibility_point;
        let policy = self.cfg.policy;
        let now = self.cycle;
        let op = self.rob.get_mut(idx).expect("index in range");
        let addr = op.instr.effective_address(base);
        op.addr = Some(addr);
        let first_attempt = !op.issue_attempted;
        op.issue_attempted = true;
        let view = LoadView {
            seq: op.seq,
            is_okapi_load: op.instr.opcode == Opcode::Okld,
            unsafe_: op.flags.unsafe_,
            suspicious_load: op.flags.suspicious_load,
            at_rob_head: idx == 0,
            older_okreset,
        };
        let (seq, pc) = (op.seq, op.pc);

        if let Err(reason) = gate_transmitter(policy, &[base_taint], v) {
            return Attempt::Blocked(reason);
        }
        let kind = match gate(policy, &view, v) {
            GateDecision::Allow(kind) => kind,
            GateDecision::Deny(reason) => return Attempt::Blocked(reason),
        };

        let dep = self.store_buffer.dependence(seq, addr);
        if let Source::PartialOverlap { .. } = dep.source {
            return Attempt::NotReady;
        }
        if dep.unresolved_between && self.predictors.mdp.predict_wait(pc) {
            return Attempt::Blocked(BlockReason::VisibilityPending);
        }

        let (paddr, walk, bit_was_set) = match self.translate(addr, kind) {
            TlbOutcome::Blocked => return Attempt::Blocked(BlockReason::NotSafeBit),
            TlbOutcome::Fault(f) => {
                let op = self.rob.get_mut(idx).expect("index in range");
                op.mem_fault = Some(f);
                op.translated = true;
                op.status = OpStatus::Issued;
                op.done_at = now + 1;
                return Attempt::Issued;
            }
            TlbOutcome::Translated {
                paddr,
                latency,
                safe_bit_was_set,
                ..
            } => (paddr, latency, safe_bit_was_set),
        };
        if first_attempt && bit_was_set {
            self.stats.first_issue_safe_bit_hits += 1;
        }

        let (value, forwarded_from, mem_latency) = match dep.source {
            Source::Forward { seq, value } => (value, Some(seq), 0),
            _ => {
                let value = self.arch.mem.read_u64(addr).unwrap_or(0);
                (value, None, self.cache.access(paddr))
            }
        };
        let speculative = view.unsafe_;
        let op = self.rob.get_mut(idx).expect("index in range");
        op.paddr = Some(paddr);
        op.translated = true;
        op.result = Some(value);
        op.forwarded_from = forwarded_from;
        op.bypassed = dep.unresolved_between;
        if policy == PolicyKind::Dift {
            op.taint = taint_propagate(&[base_taint], speculative.then_some(seq), v);
        }
        op.status = OpStatus::Issued;
        op.done_at = now + 1 + walk + mem_latency;
        let vpn = addr / self.cfg.page_size;
        self.log(SimEvent::LoadIssued {
            seq,
            pc,
            vpn,
            speculative,
        });
        self.trace_line(2, seq, pc, "issue", if speculative { "speculative" } else { "" });
        Attempt::Issued
    }
}
