//! Strictly sequential reference interpreter. It defines the architectural
//! result every pipeline policy must reproduce.

use serde::{Deserialize, Serialize};

use crate::mem::{Access, FaultKind, PageTable, Privilege};

use super::instr::{Opcode, INSTR_BYTES, WORD_BYTES};
use super::program::Program;
use super::state::{ArchState, Fault};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessKind {
    Load,
    Store,
    Ifetch,
}

/// One architectural memory access, in program order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemAccess {
    pub kind: AccessKind,
    pub vaddr: u64,
    pub privilege: Privilege,
    /// Instruction performing the access.
    pub pc: u64,
}

/// Where RDCYCLE values come from.
#[derive(Debug, Clone, Copy)]
pub enum CycleSource<'a> {
    /// The retired-instruction count held in `ArchState::cycle`.
    Retired,
    /// Values observed by another execution of the same program, consumed in
    /// order. Lets a timing-accurate run be replayed architecturally.
    Replay(&'a [u64]),
}

#[derive(Debug, Clone)]
pub struct SequentialRun {
    pub state: ArchState,
    pub trace: Vec<MemAccess>,
    pub steps: u64,
    /// True if `max_steps` ran out before HALT or a fault.
    pub timed_out: bool,
}

/// Executes one instruction. `rdcycle` supplies the value an RDCYCLE writes.
pub fn step(
    state: &mut ArchState,
    program: &Program,
    page_table: &PageTable,
    rdcycle: u64,
    trace: &mut Vec<MemAccess>,
) {
    if state.halted {
        return;
    }
    let pc = state.pc;
    let instr = match program.fetch(pc) {
        Ok(i) => i,
        Err(kind) => {
            state.raise(Fault { kind, addr: pc, pc });
            return;
        }
    };
    let privilege = state.privilege;
    trace.push(MemAccess {
        kind: AccessKind::Ifetch,
        vaddr: pc,
        privilege,
        pc,
    });

    let [s1, s2] = instr.sources();
    let a = s1.map_or(0, |r| state.reg(r));
    let b = s2.map_or(0, |r| state.reg(r));
    let mut next_pc = pc.wrapping_add(INSTR_BYTES);

    use Opcode::*;
    match instr.opcode {
        Add | Sub | And | Or | Xor | Shl | Shr | Addi | Li => {
            let v = instr.eval_alu(a, b).expect("alu opcode");
            state.set_reg(instr.rd, v);
        }
        Ld | Okld => {
            let addr = instr.effective_address(a);
            if let Err(kind) = page_table.check(addr, WORD_BYTES, Access::Read) {
                state.raise(Fault { kind, addr, pc });
                return;
            }
            let v = state.mem.read_u64(addr).expect("mapped data page is backed");
            trace.push(MemAccess {
                kind: AccessKind::Load,
                vaddr: addr,
                privilege,
                pc,
            });
            state.set_reg(instr.rd, v);
        }
        St => {
            let addr = instr.effective_address(a);
            if let Err(kind) = page_table.check(addr, WORD_BYTES, Access::Write) {
                state.raise(Fault { kind, addr, pc });
                return;
            }
            state.mem.write_u64(addr, b);
            trace.push(MemAccess {
                kind: AccessKind::Store,
                vaddr: addr,
                privilege,
                pc,
            });
        }
        Beq | Bne | Blt => {
            if instr.branch_taken(a, b).expect("branch opcode") {
                next_pc = instr.imm as u64;
            }
        }
        Jmp => next_pc = instr.imm as u64,
        Call => {
            state.set_reg(super::instr::Reg::LINK, next_pc);
            next_pc = instr.imm as u64;
        }
        Jmpr | Ret => next_pc = a,
        Syscall => match program.syscall_handler {
            Some(handler) => {
                state.sepc = next_pc;
                state.privilege = Privilege::Supervisor;
                next_pc = handler;
            }
            None => {
                state.raise(Fault {
                    kind: FaultKind::NoHandler,
                    addr: pc,
                    pc,
                });
                return;
            }
        },
        Sysret => {
            state.privilege = Privilege::User;
            next_pc = state.sepc;
        }
        Rdcycle => state.set_reg(instr.rd, rdcycle),
        Flush | Fence | Okreset | Nop => {}
        Halt => {
            state.halted = true;
            next_pc = pc;
        }
    }
    state.pc = next_pc;
    state.cycle += 1;
}

/// Executes one instruction on a clone of `state`.
pub fn step_sequential(state: &ArchState, program: &Program) -> ArchState {
    let mut next = state.clone();
    let rdcycle = next.cycle;
    step(&mut next, program, &program.page_table(), rdcycle, &mut Vec::new());
    next
}

pub fn run_sequential(program: &Program, max_steps: u64) -> SequentialRun {
    run_sequential_with(program, max_steps, CycleSource::Retired)
}

/// Runs until HALT, a fault, or `max_steps` retired instructions. With a
/// replay source that runs dry, RDCYCLE falls back to the retired count.
pub fn run_sequential_with(program: &Program, max_steps: u64, cycles: CycleSource) -> SequentialRun {
    let page_table = program.page_table();
    let mut state = program.initial_state();
    let mut trace = Vec::new();
    let mut replay_idx = 0;
    let mut steps = 0;
    while !state.halted && steps < max_steps {
        let rdcycle = match cycles {
            CycleSource::Retired => state.cycle,
            CycleSource::Replay(values) => {
                let is_rdcycle = program
                    .instruction_at(state.pc)
                    .is_some_and(|i| i.opcode == Opcode::Rdcycle);
                if is_rdcycle && replay_idx < values.len() {
                    replay_idx += 1;
                    values[replay_idx - 1]
                } else {
                    state.cycle
                }
            }
        };
        step(&mut state, program, &page_table, rdcycle, &mut trace);
        steps += 1;
    }
    SequentialRun {
        timed_out: !state.halted,
        state,
        trace,
        steps,
    }
}
