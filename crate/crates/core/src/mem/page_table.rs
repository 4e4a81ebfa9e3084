use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Perms {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
}

impl Perms {
    pub const TEXT: Perms = Perms {
        read: false,
        write: false,
        execute: true,
    };
    pub const DATA: Perms = Perms {
        read: true,
        write: true,
        execute: false,
    };

    pub fn allows(&self, access: Access) -> bool {
        match access {
            Access::Read => self.read,
            Access::Write => self.write,
            Access::Execute => self.execute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
    Execute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Unmapped,
    Permission,
    IllegalInstruction,
    NoHandler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageTableEntry {
    pub ppn: u64,
    pub perms: Perms,
}

/// Flat single-level page table. Physical frames are identity mapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTable {
    page_size: u64,
    entries: BTreeMap<u64, PageTableEntry>,
}

impl PageTable {
    pub fn new(page_size: u64) -> Self {
        assert!(page_size.is_power_of_two(), "page size must be a power of two");
        PageTable {
            page_size,
            entries: BTreeMap::new(),
        }
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn vpn(&self, vaddr: u64) -> u64 {
        vaddr / self.page_size
    }

    pub fn map(&mut self, vpn: u64, perms: Perms) {
        self.entries.insert(vpn, PageTableEntry { ppn: vpn, perms });
    }

    pub fn lookup(&self, vpn: u64) -> Option<&PageTableEntry> {
        self.entries.get(&vpn)
    }

    pub fn mapped_pages(&self) -> impl Iterator<Item = (u64, &PageTableEntry)> {
        self.entries.iter().map(|(vpn, e)| (*vpn, e))
    }

    /// Checks every page touched by `[vaddr, vaddr + len)` and returns the
    /// physical address of `vaddr`.
    pub fn check(&self, vaddr: u64, len: u64, access: Access) -> Result<u64, FaultKind> {
        let first = self.vpn(vaddr);
        let last = self.vpn(vaddr.wrapping_add(len.max(1) - 1));
        if last < first {
            return Err(FaultKind::Unmapped);
        }
        for vpn in first..=last {
            let entry = self.entries.get(&vpn).ok_or(FaultKind::Unmapped)?;
            if !entry.perms.allows(access) {
                return Err(FaultKind::Permission);
            }
        }
        let entry = &self.entries[&first];
        Ok(entry.ppn * self.page_size + vaddr % self.page_size)
    }
}
