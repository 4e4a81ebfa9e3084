use std::collections::{BTreeMap, BTreeSet};

use crate::mem::{FaultKind, PageTable, Perms};

use super::instr::Instruction;
use super::state::{ArchState, Memory};

/// Default address of the first text page when no `.page` directive precedes
/// the first instruction.
pub const DEFAULT_TEXT_BASE: u64 = 0x1000;

/// Name of the label SYSCALL transfers control to.
pub const SYSCALL_HANDLER_LABEL: &str = "syscall_handler";

/// An assembled program: page-aligned text and data, labels and annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub page_size: u64,
    pub text: BTreeMap<u64, Instruction>,
    /// Base addresses of pages holding instructions.
    pub text_pages: BTreeSet<u64>,
    /// Base addresses of mapped data pages (secret pages included).
    pub data_pages: BTreeSet<u64>,
    /// Explicitly initialised bytes; everything else in a data page is zero.
    pub data: BTreeMap<u64, u8>,
    pub entry_pc: u64,
    pub labels: BTreeMap<String, u64>,
    /// `(first address, sandbox id)` for each `.sandbox` directive.
    pub sandbox_marks: Vec<(u64, u32)>,
    /// Sandbox id of every annotated instruction.
    pub sandbox_of: BTreeMap<u64, u32>,
    /// `(start, length)` of every high (confidential) region.
    pub secret_regions: Vec<(u64, u64)>,
    pub syscall_handler: Option<u64>,
}

impl Program {
    pub fn page_base(&self, addr: u64) -> u64 {
        addr - addr % self.page_size
    }

    pub fn instruction_at(&self, pc: u64) -> Option<&Instruction> {
        self.text.get(&pc)
    }

    /// Instruction fetch as the hardware sees it: text pages are execute-only,
    /// so a pc on a data page is a permission fault and a pc on a text page
    /// with no instruction is illegal.
    pub fn fetch(&self, pc: u64) -> Result<Instruction, FaultKind> {
        let base = self.page_base(pc);
        if self.text_pages.contains(&base) {
            self.text.get(&pc).copied().ok_or(FaultKind::IllegalInstruction)
        } else if self.data_pages.contains(&base) {
            Err(FaultKind::Permission)
        } else {
            Err(FaultKind::Unmapped)
        }
    }

    pub fn label(&self, name: &str) -> Option<u64> {
        self.labels.get(name).copied()
    }

    pub fn sandbox_at(&self, pc: u64) -> Option<u32> {
        self.sandbox_of.get(&pc).copied()
    }

    pub fn is_secret(&self, addr: u64) -> bool {
        self.secret_regions
            .iter()
            .any(|&(start, len)| addr >= start && addr - start < len)
    }

    pub fn page_table(&self) -> PageTable {
        let mut pt = PageTable::new(self.page_size);
        for &base in &self.text_pages {
            pt.map(base / self.page_size, Perms::TEXT);
        }
        for &base in &self.data_pages {
            pt.map(base / self.page_size, Perms::DATA);
        }
        pt
    }

    /// Architectural state at reset: zeroed registers, user mode, data
    /// pages populated, pc at the entry point.
    pub fn initial_state(&self) -> ArchState {
        let mut mem = Memory::new(self.page_size);
        for &base in &self.data_pages {
            mem.map_page(base);
        }
        for (&addr, &byte) in &self.data {
            mem.write_byte(addr, byte);
        }
        ArchState::new(self.entry_pc, mem)
    }
}
