use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PolicyKind;

/// Every tunable of one simulation. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub page_size: u64,
    pub rob_entries: usize,
    pub iq_entries: usize,
    pub lq_entries: usize,
    pub sq_entries: usize,
    pub fetch_width: usize,
    pub issue_width: usize,
    pub commit_width: usize,
    pub tlb_entries: usize,
    pub walk_latency: u64,
    pub cache_sets: usize,
    pub cache_ways: usize,
    pub line_bytes: u64,
    pub cache_hit_latency: u64,
    pub cache_miss_latency: u64,
    pub branch_resolve_latency: u64,
    pub pht_entries: usize,
    pub btb_entries: usize,
    pub rsb_depth: usize,
    pub mdp_entries: usize,
    pub policy: PolicyKind,
    pub max_cycles: u64,
    /// Reserved: the simulator is fully deterministic.
    pub seed: u64,
    /// 0 = no trace, 1 = commits, squashes and blocks, 2 = also issue/complete.
    pub trace_verbosity: u8,
    /// Keep the safe-bit / block event log.
    pub record_events: bool,
    /// Check pipeline invariants every cycle, including a from-scratch
    /// dataflow walk validating DIFT taint.
    pub check_invariants: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            page_size: 4096,
            rob_entries: 32,
            iq_entries: 16,
            lq_entries: 16,
            sq_entries: 16,
            fetch_width: 2,
            issue_width: 2,
            commit_width: 2,
            tlb_entries: 64,
            walk_latency: 20,
            cache_sets: 64,
            cache_ways: 4,
            line_bytes: 64,
            cache_hit_latency: 2,
            cache_miss_latency: 40,
            branch_resolve_latency: 3,
            pht_entries: 256,
            btb_entries: 64,
            rsb_depth: 8,
            mdp_entries: 64,
            policy: PolicyKind::Baseline,
            max_cycles: 2_000_000,
            seed: 0,
            trace_verbosity: 0,
            record_events: false,
            check_invariants: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("`{0}` must be a power of two")]
    NotPowerOfTwo(&'static str),
    #[error("`{0}` must be positive")]
    Zero(&'static str),
    #[error("cache hit latency must be below the miss latency")]
    LatencyOrder,
}

impl SimConfig {
    pub fn with_policy(mut self, policy: PolicyKind) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pow2 = [
            ("page_size", self.page_size),
            ("cache_sets", self.cache_sets as u64),
            ("line_bytes", self.line_bytes),
            ("pht_entries", self.pht_entries as u64),
            ("btb_entries", self.btb_entries as u64),
            ("mdp_entries", self.mdp_entries as u64),
        ];
        for (name, v) in pow2 {
            if !v.is_power_of_two() {
                return Err(ConfigError::NotPowerOfTwo(name));
            }
        }
        let positive = [
            ("rob_entries", self.rob_entries as u64),
            ("iq_entries", self.iq_entries as u64),
            ("lq_entries", self.lq_entries as u64),
            ("sq_entries", self.sq_entries as u64),
            ("fetch_width", self.fetch_width as u64),
            ("issue_width", self.issue_width as u64),
            ("commit_width", self.commit_width as u64),
            ("tlb_entries", self.tlb_entries as u64),
            ("cache_ways", self.cache_ways as u64),
            ("rsb_depth", self.rsb_depth as u64),
            ("max_cycles", self.max_cycles),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.page_size < 8 {
            return Err(ConfigError::Zero("page_size"));
        }
        if self.cache_hit_latency >= self.cache_miss_latency {
            return Err(ConfigError::LatencyOrder);
        }
        Ok(())
    }

    /// RDCYCLE delta separating a probe hit from a miss.
    pub fn hit_threshold(&self) -> u64 {
        (self.cache_hit_latency + self.cache_miss_latency) / 2
    }
}
