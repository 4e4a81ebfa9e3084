use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::isa::Fault;
use crate::policy::BlockReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PageCounts {
    pub code: usize,
    pub data: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub cycles: u64,
    pub committed_instructions: u64,
    pub dispatched_loads: u64,
    pub committed_loads: u64,
    /// Loads discarded without committing: squashed, faulted, or in flight at exit.
    pub squashed_loads: u64,
    pub loads_blocked_suspicious: u64,
    pub loads_blocked_no_safe_bit: u64,
    pub loads_blocked_reset: u64,
    pub loads_blocked_taint: u64,
    pub loads_blocked_rob_head: u64,
    pub loads_blocked_visibility: u64,
    /// Block events, one per (load, reason) pair.
    pub load_block_events: u64,
    /// Loads whose first issue attempt found the safe access bit already set.
    pub first_issue_safe_bit_hits: u64,
    pub safe_bit_clears: u64,
    pub okresets_executed: u64,
    pub privilege_switches: u64,
    pub branch_mispredicts: u64,
    pub memory_order_violations: u64,
    /// Distinct committed code/data pages per interval between privilege switches.
    pub pages_touched_between_switches: Vec<PageCounts>,
}

impl RunStats {
    pub fn blocked(&self, reason: BlockReason) -> u64 {
        match reason {
            BlockReason::NotSafeBit => self.loads_blocked_no_safe_bit,
            BlockReason::SuspiciousPending => self.loads_blocked_suspicious,
            BlockReason::ResetPending => self.loads_blocked_reset,
            BlockReason::TaintPending => self.loads_blocked_taint,
            BlockReason::RobHeadPending => self.loads_blocked_rob_head,
            BlockReason::VisibilityPending => self.loads_blocked_visibility,
        }
    }

    pub(crate) fn count_block(&mut self, reason: BlockReason) {
        self.load_block_events += 1;
        let c = match reason {
            BlockReason::NotSafeBit => &mut self.loads_blocked_no_safe_bit,
            BlockReason::SuspiciousPending => &mut self.loads_blocked_suspicious,
            BlockReason::ResetPending => &mut self.loads_blocked_reset,
            BlockReason::TaintPending => &mut self.loads_blocked_taint,
            BlockReason::RobHeadPending => &mut self.loads_blocked_rob_head,
            BlockReason::VisibilityPending => &mut self.loads_blocked_visibility,
        };
        *c += 1;
    }

    /// Sum of the per-reason counters.
    pub fn blocked_total(&self) -> u64 {
        BlockReason::ALL.iter().map(|&r| self.blocked(r)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClearCause {
    PrivilegeSwitch,
    OkReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    SafeBitSet {
        vpn: u64,
    },
    SafeBitsCleared {
        count: usize,
        cause: ClearCause,
    },
    TlbEvicted {
        vpn: u64,
        had_safe_bit: bool,
    },
    LoadBlocked {
        seq: u64,
        pc: u64,
        reason: BlockReason,
        vpn: u64,
    },
    LoadIssued {
        seq: u64,
        pc: u64,
        vpn: u64,
        speculative: bool,
    },
    Squash {
        from_seq: u64,
        redirect: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub cycle: u64,
    #[serde(flatten)]
    pub event: SimEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitReason {
    Halted,
    Fault(Fault),
    Timeout,
}

/// Distinct pages touched between privilege switches, fed from commits.
#[derive(Debug, Clone, Default)]
pub(crate) struct LocalityTracker {
    code: BTreeSet<u64>,
    data: BTreeSet<u64>,
    done: Vec<PageCounts>,
}

impl LocalityTracker {
    pub fn code(&mut self, page: u64) {
        self.code.insert(page);
    }

    pub fn data(&mut self, page: u64) {
        self.data.insert(page);
    }

    pub fn switch(&mut self) {
        self.done.push(PageCounts {
            code: self.code.len(),
            data: self.data.len(),
        });
        self.code.clear();
        self.data.clear();
    }

    pub fn finish(mut self) -> Vec<PageCounts> {
        if !self.code.is_empty() || !self.data.is_empty() {
            self.switch();
        }
        self.done
    }
}

/// Replays an event log and reports every load blocked for lack of a safe
/// bit on a page whose bit was set and not since reset or evicted.
pub fn repeat_delay_violations(events: &[TimedEvent]) -> Vec<TimedEvent> {
    let mut set = BTreeSet::new();
    let mut bad = Vec::new();
    for e in events {
        match e.event {
            SimEvent::SafeBitSet { vpn } => {
                set.insert(vpn);
            }
            SimEvent::SafeBitsCleared { .. } => set.clear(),
            SimEvent::TlbEvicted { vpn, .. } => {
                set.remove(&vpn);
            }
            SimEvent::LoadBlocked {
                reason: BlockReason::NotSafeBit,
                vpn,
                ..
            } if set.contains(&vpn) => bad.push(*e),
            _ => {}
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(cycle: u64, event: SimEvent) -> TimedEvent {
        TimedEvent { cycle, event }
    }

    #[test]
    fn repeat_delay_checker() {
        let blocked = |vpn| SimEvent::LoadBlocked {
            seq: 1,
            pc: 0,
            reason: BlockReason::NotSafeBit,
            vpn,
        };
        let ok = vec![
            at(0, blocked(8)),
            at(1, SimEvent::SafeBitSet { vpn: 8 }),
            at(
                2,
                SimEvent::SafeBitsCleared {
                    count: 1,
                    cause: ClearCause::OkReset,
                },
            ),
            at(3, blocked(8)),
        ];
        assert!(repeat_delay_violations(&ok).is_empty());
        let bad = vec![at(1, SimEvent::SafeBitSet { vpn: 8 }), at(3, blocked(8))];
        assert_eq!(repeat_delay_violations(&bad).len(), 1);
    }

    #[test]
    fn block_counters_sum() {
        let mut s = RunStats::default();
        s.count_block(BlockReason::NotSafeBit);
        s.count_block(BlockReason::TaintPending);
        s.count_block(BlockReason::NotSafeBit);
        assert_eq!(s.blocked_total(), s.load_block_events);
        assert_eq!(s.blocked(BlockReason::NotSafeBit), 2);
    }

    #[test]
    fn locality_intervals() {
        let mut t = LocalityTracker::default();
        for p in [5, 5, 6, 7] {
            t.data(p);
        }
        t.code(1);
        t.switch();
        t.code(2);
        assert_eq!(
            t.finish(),
            vec![PageCounts { code: 1, data: 3 }, PageCounts { code: 1, data: 0 }]
        );
    }
}
