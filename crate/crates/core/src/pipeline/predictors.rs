//! Branch, target, return and memory-dependence predictors. None of them is
//! ever rolled back on a squash; that persistence is what mistraining exploits.

use std::collections::VecDeque;

use crate::isa::INSTR_BYTES;

fn slot(pc: u64, size: usize) -> usize {
    ((pc / INSTR_BYTES) % size as u64) as usize
}

/// 2-bit saturating direction counters, initialised weakly not-taken.
#[derive(Debug, Clone)]
pub struct Pht {
    counters: Vec<u8>,
}

impl Pht {
    pub fn new(size: usize) -> Self {
        Pht {
            counters: vec![1; size],
        }
    }

    pub fn counter(&self, pc: u64) -> u8 {
        self.counters[slot(pc, self.counters.len())]
    }

    pub fn predict_taken(&self, pc: u64) -> bool {
        self.counter(pc) >= 2
    }

    pub fn update(&mut self, pc: u64, taken: bool) {
        let i = slot(pc, self.counters.len());
        let c = &mut self.counters[i];
        *c = if taken { (*c + 1).min(3) } else { c.saturating_sub(1) };
    }
}

#[derive(Debug, Clone, Copy)]
struct BtbEntry {
    pc: u64,
    target: u64,
}

/// Direct-mapped, fully tagged indirect-target buffer.
#[derive(Debug, Clone)]
pub struct Btb {
    entries: Vec<Option<BtbEntry>>,
}

impl Btb {
    pub fn new(size: usize) -> Self {
        Btb {
            entries: vec![None; size],
        }
    }

    pub fn predict(&self, pc: u64) -> Option<u64> {
        self.entries[slot(pc, self.entries.len())]
            .filter(|e| e.pc == pc)
            .map(|e| e.target)
    }

    pub fn update(&mut self, pc: u64, target: u64) {
        let n = self.entries.len();
        self.entries[slot(pc, n)] = Some(BtbEntry { pc, target });
    }
}

/// Bounded return-address stack; pushing onto a full stack drops the oldest.
#[derive(Debug, Clone)]
pub struct Rsb {
    depth: usize,
    stack: VecDeque<u64>,
}

impl Rsb {
    pub fn new(depth: usize) -> Self {
        Rsb {
            depth,
            stack: VecDeque::with_capacity(depth),
        }
    }

    pub fn push(&mut self, ret: u64) {
        if self.stack.len() == self.depth {
            self.stack.pop_front();
        }
        self.stack.push_back(ret);
    }

    pub fn pop(&mut self) -> Option<u64> {
        self.stack.pop_back()
    }

    pub fn len(&self) -> usize {
        self.stack.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stack.is_empty()
    }
}

/// Memory-dependence predictor: per-load counters, bypass by default. A
/// detected ordering violation saturates the counter; every committed
/// instance of the load decays it.
#[derive(Debug, Clone)]
pub struct Mdp {
    entries: Vec<Option<(u64, u8)>>,
}

impl Mdp {
    pub fn new(size: usize) -> Self {
        Mdp {
            entries: vec![None; size],
        }
    }

    pub fn predict_wait(&self, pc: u64) -> bool {
        matches!(self.entries[slot(pc, self.entries.len())], Some((tag, c)) if tag == pc && c >= 2)
    }

    pub fn train_violation(&mut self, pc: u64) {
        let n = self.entries.len();
        self.entries[slot(pc, n)] = Some((pc, 3));
    }

    pub fn on_commit(&mut self, pc: u64) {
        let n = self.entries.len();
        if let Some((tag, c)) = &mut self.entries[slot(pc, n)] {
            if *tag == pc {
                *c = c.saturating_sub(1);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictorState {
    pub pht: Pht,
    pub btb: Btb,
    pub rsb: Rsb,
    pub mdp: Mdp,
}

impl PredictorState {
    pub fn new(pht: usize, btb: usize, rsb: usize, mdp: usize) -> Self {
        PredictorState {
            pht: Pht::new(pht),
            btb: Btb::new(btb),
            rsb: Rsb::new(rsb),
            mdp: Mdp::new(mdp),
        }
    }
}
