use serde::Serialize;

use crate::isa::{Instruction, Opcode};
use crate::mem::FaultKind;
use crate::policy::{BlockReason, Taint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpStatus {
    Dispatched,
    Blocked(BlockReason),
    /// Executing; the result is available at `done_at`.
    Issued,
    Executed,
    Squashed,
    Committed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpFlags {
    /// Younger than the visibility point.
    pub unsafe_: bool,
    /// Fetched across a page boundary.
    pub suspicious: bool,
    /// Load at or behind an unsafe suspicious op.
    pub suspicious_load: bool,
    /// Result derives from a still-speculative load (DIFT).
    pub tainted: bool,
}

/// A source operand: either captured at dispatch or produced by an in-flight op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Value(u64),
    Producer(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroOp {
    pub seq: u64,
    pub pc: u64,
    pub instr: Instruction,
    pub predicted_next_pc: u64,
    pub flags: OpFlags,
    pub status: OpStatus,
    pub srcs: [Option<Operand>; 2],
    pub result: Option<u64>,
    pub done_at: u64,
    /// Effective address of a memory op once computed.
    pub addr: Option<u64>,
    pub paddr: Option<u64>,
    /// Memory op has completed (or, for FLUSH, skipped) its translation.
    pub translated: bool,
    pub mem_fault: Option<FaultKind>,
    /// Set on the placeholder injected when fetch itself faulted.
    pub fetch_fault: Option<FaultKind>,
    /// Resolved successor pc of a control op.
    pub actual_next_pc: Option<u64>,
    pub taint: Taint,
    /// Loads: seq of the store the value was forwarded from.
    pub forwarded_from: Option<u64>,
    pub store_value: Option<u64>,
    /// Loads: issued past at least one unresolved older store.
    pub bypassed: bool,
    /// Block reasons already counted for this op.
    pub blocked_mask: u8,
    pub issue_attempted: bool,
}

impl MicroOp {
    pub fn new(seq: u64, pc: u64, instr: Instruction, predicted_next_pc: u64) -> Self {
        MicroOp {
            seq,
            pc,
            instr,
            predicted_next_pc,
            flags: OpFlags::default(),
            status: OpStatus::Dispatched,
            srcs: [None, None],
            result: None,
            done_at: 0,
            addr: None,
            paddr: None,
            translated: false,
            mem_fault: None,
            fetch_fault: None,
            actual_next_pc: None,
            taint: Taint::CLEAN,
            forwarded_from: None,
            store_value: None,
            bypassed: false,
            blocked_mask: 0,
            issue_attempted: false,
        }
    }

    pub fn fetch_fault(seq: u64, pc: u64, kind: FaultKind) -> Self {
        let mut op = MicroOp::new(seq, pc, Instruction::new(Opcode::Nop), pc);
        op.fetch_fault = Some(kind);
        op.status = OpStatus::Executed;
        op
    }

    pub fn is_load(&self) -> bool {
        self.fetch_fault.is_none() && self.instr.is_load()
    }

    pub fn is_store(&self) -> bool {
        self.fetch_fault.is_none() && self.instr.is_store()
    }

    pub fn is_executed(&self) -> bool {
        self.status == OpStatus::Executed
    }

    pub fn waiting(&self) -> bool {
        matches!(self.status, OpStatus::Dispatched | OpStatus::Blocked(_))
    }

    pub fn opcode(&self) -> Opcode {
        self.instr.opcode
    }
}
