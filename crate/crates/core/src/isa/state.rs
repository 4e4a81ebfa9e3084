use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mem::{FaultKind, Privilege};

use super::instr::{Reg, NUM_REGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fault {
    pub kind: FaultKind,
    /// Faulting data address, or the pc for fetch faults.
    pub addr: u64,
    /// Instruction that raised the fault.
    pub pc: u64,
}

/// Sparse byte-addressed memory, stored as zero-initialised page frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    page_size: u64,
    pages: BTreeMap<u64, Vec<u8>>,
}

impl Memory {
    pub fn new(page_size: u64) -> Self {
        Memory {
            page_size,
            pages: BTreeMap::new(),
        }
    }

    pub fn map_page(&mut self, base: u64) {
        let size = self.page_size as usize;
        self.pages.entry(base).or_insert_with(|| vec![0; size]);
    }

    pub fn pages(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.pages.iter().map(|(b, p)| (*b, p.as_slice()))
    }

    pub fn read_byte(&self, addr: u64) -> Option<u8> {
        let base = addr - addr % self.page_size;
        self.pages.get(&base).map(|p| p[(addr - base) as usize])
    }

    pub fn write_byte(&mut self, addr: u64, value: u8) -> bool {
        let base = addr - addr % self.page_size;
        match self.pages.get_mut(&base) {
            Some(p) => {
                p[(addr - base) as usize] = value;
                true
            }
            None => false,
        }
    }

    /// Little-endian 8-byte read; `None` if any byte is outside mapped frames.
    pub fn read_u64(&self, addr: u64) -> Option<u64> {
        let mut bytes = [0u8; 8];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = self.read_byte(addr.wrapping_add(i as u64))?;
        }
        Some(u64::from_le_bytes(bytes))
    }

    pub fn write_u64(&mut self, addr: u64, value: u64) -> bool {
        value
            .to_le_bytes()
            .iter()
            .enumerate()
            .all(|(i, &b)| self.write_byte(addr.wrapping_add(i as u64), b))
    }
}

/// Architectural (committed) machine state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub regs: [u64; NUM_REGS],
    pub mem: Memory,
    pub pc: u64,
    pub privilege: Privilege,
    /// Return address saved by SYSCALL.
    pub sepc: u64,
    pub cycle: u64,
    pub halted: bool,
    pub fault: Option<Fault>,
}

impl ArchState {
    pub fn new(pc: u64, mem: Memory) -> Self {
        ArchState {
            regs: [0; NUM_REGS],
            mem,
            pc,
            privilege: Privilege::User,
            sepc: 0,
            cycle: 0,
            halted: false,
            fault: None,
        }
    }

    pub fn reg(&self, r: Reg) -> u64 {
        if r.is_zero() {
            0
        } else {
            self.regs[r.index()]
        }
    }

    pub fn set_reg(&mut self, r: Reg, value: u64) {
        if !r.is_zero() {
            self.regs[r.index()] = value;
        }
    }

    pub fn raise(&mut self, fault: Fault) {
        self.fault = Some(fault);
        self.halted = true;
    }

    /// Compares everything except the cycle counter, which is timing, not
    /// architecture.
    pub fn same_architecture(&self, other: &ArchState) -> bool {
        self.regs == other.regs
            && self.mem == other.mem
            && self.pc == other.pc
            && self.privilege == other.privilege
            && self.sepc == other.sepc
            && self.halted == other.halted
            && self.fault == other.fault
    }

    /// Human-readable list of architectural differences, for test failures.
    pub fn diff(&self, other: &ArchState) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..NUM_REGS {
            if self.regs[i] != other.regs[i] {
                out.push(format!("r{i}: {:#x} != {:#x}", self.regs[i], other.regs[i]));
            }
        }
        if self.pc != other.pc {
            out.push(format!("pc: {:#x} != {:#x}", self.pc, other.pc));
        }
        if self.privilege != other.privilege {
            out.push(format!("privilege: {:?} != {:?}", self.privilege, other.privilege));
        }
        if self.sepc != other.sepc {
            out.push(format!("sepc: {:#x} != {:#x}", self.sepc, other.sepc));
        }
        if self.halted != other.halted || self.fault != other.fault {
            out.push(format!(
                "halt: {}/{:?} != {}/{:?}",
                self.halted, self.fault, other.halted, other.fault
            ));
        }
        for ((a_base, a), (b_base, b)) in self.mem.pages().zip(other.mem.pages()) {
            if a_base != b_base {
                out.push(format!("page sets differ at {a_base:#x}/{b_base:#x}"));
                break;
            }
            if let Some(off) = a.iter().zip(b).position(|(x, y)| x != y) {
                out.push(format!("mem differs at {:#x}", a_base + off as u64));
            }
        }
        out
    }
}
