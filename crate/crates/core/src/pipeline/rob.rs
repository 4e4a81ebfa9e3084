use std::collections::VecDeque;

use crate::isa::{Opcode, WORD_BYTES};

use super::uop::{MicroOp, OpStatus};

/// Reorder buffer: in-flight ops in program order, oldest at the front.
/// Sequence numbers increase strictly but are not contiguous after squashes.
#[derive(Debug, Clone)]
pub struct Rob {
    entries: VecDeque<MicroOp>,
    capacity: usize,
    /// Every op with `seq <= visibility_point` can no longer be squashed.
    pub visibility_point: u64,
}

impl Rob {
    pub fn new(capacity: usize) -> Self {
        Rob {
            entries: VecDeque::with_capacity(capacity),
            capacity,
            visibility_point: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn push(&mut self, op: MicroOp) {
        debug_assert!(!self.is_full());
        debug_assert!(self.entries.back().is_none_or(|b| b.seq < op.seq));
        self.entries.push_back(op);
    }

    pub fn head(&self) -> Option<&MicroOp> {
        self.entries.front()
    }

    pub fn pop_head(&mut self) -> Option<MicroOp> {
        self.entries.pop_front()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &MicroOp> + ExactSizeIterator {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl DoubleEndedIterator<Item = &mut MicroOp> {
        self.entries.iter_mut()
    }

    pub fn get(&self, idx: usize) -> Option<&MicroOp> {
        self.entries.get(idx)
    }

    pub fn get_mut(&mut self, idx: usize) -> Option<&mut MicroOp> {
        self.entries.get_mut(idx)
    }

    pub fn index_of(&self, seq: u64) -> Option<usize> {
        self.entries.binary_search_by_key(&seq, |op| op.seq).ok()
    }

    pub fn find(&self, seq: u64) -> Option<&MicroOp> {
        self.index_of(seq).map(|i| &self.entries[i])
    }

    /// Removes every op with `seq >= first` and returns them, oldest first.
    pub fn squash_from(&mut self, first: u64) -> Vec<MicroOp> {
        let cut = self.entries.partition_point(|op| op.seq < first);
        let mut gone: Vec<MicroOp> = self.entries.drain(cut..).collect();
        for op in &mut gone {
            op.status = OpStatus::Squashed;
        }
        gone
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreEntry {
    pub seq: u64,
    pub addr: Option<u64>,
    pub value: Option<u64>,
}

/// Pending stores in program order; memory changes only when the oldest
/// entry drains at commit.
#[derive(Debug, Clone, Default)]
pub struct StoreBuffer {
    entries: VecDeque<StoreEntry>,
}

/// Where an 8-byte load gets its data, judged from resolved older stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Youngest overlapping older store has exactly this address.
    Forward {
        seq: u64,
        value: u64,
    },
    /// Youngest overlapping older store covers the load only partly.
    PartialOverlap {
        seq: u64,
    },
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dependence {
    pub source: Source,
    /// A store with an unknown address lies between the load and its source.
    pub unresolved_between: bool,
}

impl StoreBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoreEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, seq: u64) {
        self.entries.push_back(StoreEntry {
            seq,
            addr: None,
            value: None,
        });
    }

    pub fn resolve(&mut self, seq: u64, addr: u64, value: u64) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.seq == seq) {
            e.addr = Some(addr);
            e.value = Some(value);
        }
    }

    pub fn is_resolved(&self, seq: u64) -> bool {
        self.entries.iter().any(|e| e.seq == seq && e.addr.is_some())
    }

    pub fn pop_oldest(&mut self) -> Option<StoreEntry> {
        self.entries.pop_front()
    }

    pub fn truncate_from(&mut self, first: u64) {
        self.entries.retain(|e| e.seq < first);
    }

    /// Memory dependence of an 8-byte load at `addr` issued as `load_seq`.
    pub fn dependence(&self, load_seq: u64, addr: u64) -> Dependence {
        let mut unresolved = false;
        for e in self.entries.iter().rev().filter(|e| e.seq < load_seq) {
            match e.addr {
                None => unresolved = true,
                Some(a) if overlaps(a, addr) => {
                    let source = if a == addr {
                        Source::Forward {
                            seq: e.seq,
                            value: e.value.unwrap_or(0),
                        }
                    } else {
                        Source::PartialOverlap { seq: e.seq }
                    };
                    return Dependence {
                        source,
                        unresolved_between: unresolved,
                    };
                }
                Some(_) => {}
            }
        }
        Dependence {
            source: Source::Memory,
            unresolved_between: unresolved,
        }
    }
}

pub fn overlaps(a: u64, b: u64) -> bool {
    a < b.wrapping_add(WORD_BYTES) && b < a.wrapping_add(WORD_BYTES)
}

/// How an in-flight op limits the visibility point.
fn blocks_visibility(op: &MicroOp, store_buffer: &StoreBuffer) -> Option<u64> {
    if op.fetch_fault.is_some() {
        return Some(op.seq);
    }
    let i = &op.instr;
    if i.is_predicted_control() {
        // Unresolved direction or target: everything younger may be squashed.
        return (!op.is_executed()).then(|| op.seq - 1);
    }
    match i.opcode {
        Opcode::St => {
            if !store_buffer.is_resolved(op.seq) {
                Some(op.seq - 1)
            } else if op.mem_fault.is_some() {
                Some(op.seq)
            } else {
                None
            }
        }
        // The op itself is safe to execute once everything older is settled;
        // only younger ops depend on its translation outcome.
        Opcode::Ld | Opcode::Okld | Opcode::Flush => (!op.translated || op.mem_fault.is_some()).then_some(op.seq),
        _ => None,
    }
}

/// Recomputes the visibility point from the current ROB contents and
/// refreshes every op's `unsafe` flag. Never falls behind the last commit.
pub fn update_visibility_point(rob: &mut Rob, store_buffer: &StoreBuffer, last_committed: u64) -> u64 {
    let mut v = rob
        .iter()
        .find_map(|op| blocks_visibility(op, store_buffer))
        .unwrap_or_else(|| rob.iter().next_back().map_or(last_committed, |op| op.seq));
    v = v.max(last_committed);
    for op in rob.iter_mut() {
        op.flags.unsafe_ = op.seq > v;
    }
    rob.visibility_point = v;
    v
}

/// A load is `suspicious_load` iff some unsafe suspicious op is at or before
/// it. Including the load itself closes the case of a gadget whose very first
/// instruction is the load.
pub fn propagate_suspicious(rob: &mut Rob) {
    let mut seen = false;
    for op in rob.iter_mut() {
        seen |= op.flags.suspicious && op.flags.unsafe_;
        op.flags.suspicious_load = seen && op.is_load();
    }
}
