use serde::{Deserialize, Serialize};

use super::page_table::{Access, FaultKind, PageTable, Perms};

/// How a translation request reaches the data TLB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlbAccessKind {
    /// Non-speculative load: translates and sets the safe access bit.
    SafeLoad,
    /// Speculative load: translates only if the safe access bit is already set.
    UnsafeLoad,
    /// Non-speculative OKLD: translates, leaves the bit alone.
    OkapiLoadSafe,
    /// Speculative OKLD: same gate as `UnsafeLoad`, never sets the bit.
    OkapiLoadUnsafe,
    /// Store reaching commit: translates and sets the bit.
    StoreCommitted,
    /// Instruction fetch: no safe-bit involvement at all.
    Ifetch,
    /// Cache-line flush: translates without touching the bit.
    Flush,
    /// Ungated translation used by policies that do not consult the bit.
    Unchecked,
}

impl TlbAccessKind {
    pub fn is_speculative(self) -> bool {
        matches!(self, TlbAccessKind::UnsafeLoad | TlbAccessKind::OkapiLoadUnsafe)
    }

    pub fn sets_safe_bit(self) -> bool {
        matches!(self, TlbAccessKind::SafeLoad | TlbAccessKind::StoreCommitted)
    }

    fn access(self) -> Access {
        match self {
            TlbAccessKind::StoreCommitted => Access::Write,
            TlbAccessKind::Ifetch => Access::Execute,
            _ => Access::Read,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlbOutcome {
    Translated {
        paddr: u64,
        /// Cycles until the translation is usable (outstanding walk time).
        latency: u64,
        hit: bool,
        /// State of the safe access bit before this request.
        safe_bit_was_set: bool,
    },
    Blocked,
    Fault(FaultKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TlbEvent {
    Filled { vpn: u64 },
    Evicted { vpn: u64, had_safe_bit: bool },
    SafeBitSet { vpn: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: u64,
    pub ppn: u64,
    pub perms: Perms,
    pub safe_access_bit: bool,
    ready_at: u64,
    last_use: u64,
}

/// Fully associative data TLB with LRU replacement and one safe access bit
/// per entry.
#[derive(Debug, Clone)]
pub struct Tlb {
    capacity: usize,
    walk_latency: u64,
    entries: Vec<TlbEntry>,
    clock: u64,
    events: Vec<TlbEvent>,
}

impl Tlb {
    pub fn new(capacity: usize, walk_latency: u64) -> Self {
        assert!(capacity > 0);
        Tlb {
            capacity,
            walk_latency,
            entries: Vec::with_capacity(capacity),
            clock: 0,
            events: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[TlbEntry] {
        &self.entries
    }

    pub fn safe_bit(&self, vpn: u64) -> Option<bool> {
        self.entries.iter().find(|e| e.vpn == vpn).map(|e| e.safe_access_bit)
    }

    pub fn count_safe_bits(&self) -> usize {
        self.entries.iter().filter(|e| e.safe_access_bit).count()
    }

    pub fn drain_events(&mut self) -> Vec<TlbEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn translate(
        &mut self,
        vaddr: u64,
        len: u64,
        kind: TlbAccessKind,
        page_table: &PageTable,
        now: u64,
    ) -> TlbOutcome {
        self.clock += 1;
        let page_size = page_table.page_size();
        let vpn = vaddr / page_size;

        let (idx, hit) = match self.entries.iter().position(|e| e.vpn == vpn) {
            Some(i) => (i, true),
            None => match page_table.lookup(vpn) {
                Some(pte) => {
                    let entry = TlbEntry {
                        vpn,
                        ppn: pte.ppn,
                        perms: pte.perms,
                        safe_access_bit: false,
                        ready_at: now + self.walk_latency,
                        last_use: self.clock,
                    };
                    (self.insert(entry), false)
                }
                None => return self.fail(kind, FaultKind::Unmapped),
            },
        };

        let clock = self.clock;
        let entry = &mut self.entries[idx];
        entry.last_use = clock;
        let latency = entry.ready_at.saturating_sub(now);
        let was_set = entry.safe_access_bit;

        // Permissions (including a possible second page) come from the page table.
        let paddr = match page_table.check(vaddr, len, kind.access()) {
            Ok(p) => p,
            Err(f) => return self.fail(kind, f),
        };

        if kind.is_speculative() && !was_set {
            return TlbOutcome::Blocked;
        }
        if kind.sets_safe_bit() && !was_set {
            entry.safe_access_bit = true;
            self.events.push(TlbEvent::SafeBitSet { vpn });
        }
        TlbOutcome::Translated {
            paddr,
            latency,
            hit,
            safe_bit_was_set: was_set,
        }
    }

    /// Resets every safe access bit; translations stay cached.
    pub fn clear_safe_bits(&mut self) -> usize {
        let mut cleared = 0;
        for e in &mut self.entries {
            if e.safe_access_bit {
                e.safe_access_bit = false;
                cleared += 1;
            }
        }
        cleared
    }

    fn fail(&self, kind: TlbAccessKind, fault: FaultKind) -> TlbOutcome {
        // A speculative request never raises: it waits until it is bound to commit.
        if kind.is_speculative() {
            TlbOutcome::Blocked
        } else {
            TlbOutcome::Fault(fault)
        }
    }

    fn insert(&mut self, entry: TlbEntry) -> usize {
        let vpn = entry.vpn;
        let idx = if self.entries.len() < self.capacity {
            self.entries.push(entry);
            self.entries.len() - 1
        } else {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.last_use)
                .map(|(i, _)| i)
                .expect("non-empty TLB");
            let old = std::mem::replace(&mut self.entries[victim], entry);
            self.events.push(TlbEvent::Evicted {
                vpn: old.vpn,
                had_safe_bit: old.safe_access_bit,
            });
            victim
        };
        self.events.push(TlbEvent::Filled { vpn });
        idx
    }
}
