//! Speculation-gating policies. Each cycle the pipeline asks the active
//! policy whether a ready load may translate, and with which TLB access kind.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mem::TlbAccessKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Baseline,
    #[serde(alias = "naive_delay", alias = "naivedelay")]
    Naive,
    #[serde(alias = "eager_delay", alias = "eagerdelay")]
    Eager,
    Dift,
    Okapi,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Baseline,
        PolicyKind::Okapi,
        PolicyKind::Eager,
        PolicyKind::Naive,
        PolicyKind::Dift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Baseline => "baseline",
            PolicyKind::Naive => "naive",
            PolicyKind::Eager => "eager",
            PolicyKind::Dift => "dift",
            PolicyKind::Okapi => "okapi",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy `{0}` (expected baseline, naive, eager, dift or okapi)")]
pub struct UnknownPolicy(pub String);

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(PolicyKind::Baseline),
            "naive" | "naive_delay" | "naivedelay" => Ok(PolicyKind::Naive),
            "eager" | "eager_delay" | "eagerdelay" => Ok(PolicyKind::Eager),
            "dift" | "stt" => Ok(PolicyKind::Dift),
            "okapi" => Ok(PolicyKind::Okapi),
            _ => Err(UnknownPolicy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockReason {
    NotSafeBit,
    SuspiciousPending,
    ResetPending,
    TaintPending,
    RobHeadPending,
    VisibilityPending,
}

impl BlockReason {
    pub const ALL: [BlockReason; 6] = [
        BlockReason::NotSafeBit,
        BlockReason::SuspiciousPending,
        BlockReason::ResetPending,
        BlockReason::TaintPending,
        BlockReason::RobHeadPending,
        BlockReason::VisibilityPending,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockReason::NotSafeBit => "not_safe_bit",
            BlockReason::SuspiciousPending => "suspicious_pending",
            BlockReason::ResetPending => "reset_pending",
            BlockReason::TaintPending => "taint_pending",
            BlockReason::RobHeadPending => "rob_head_pending",
            BlockReason::VisibilityPending => "visibility_pending",
        }
    }

    pub(crate) fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for BlockReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the gate needs to know about a ready load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadView {
    pub seq: u64,
    pub is_okapi_load: bool,
    pub unsafe_: bool,
    pub suspicious_load: bool,
    pub at_rob_head: bool,
    /// An OKRESET older than this load is still in the ROB.
    pub older_okreset: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Allow(TlbAccessKind),
    Deny(BlockReason),
}

impl GateDecision {
    pub fn allowed(self) -> bool {
        matches!(self, GateDecision::Allow(_))
    }
}

/// Decides whether a load with resolved address operands may translate now.
/// DIFT transmitter checks happen separately in [`gate_transmitter`].
pub fn gate(policy: PolicyKind, load: &LoadView, visibility_point: u64) -> GateDecision {
    let ungated = if load.unsafe_ {
        TlbAccessKind::Unchecked
    } else if load.is_okapi_load {
        TlbAccessKind::OkapiLoadSafe
    } else {
        TlbAccessKind::SafeLoad
    };
    match policy {
        PolicyKind::Baseline | PolicyKind::Dift => GateDecision::Allow(ungated),
        PolicyKind::Naive => {
            if load.at_rob_head {
                GateDecision::Allow(ungated)
            } else {
                GateDecision::Deny(BlockReason::RobHeadPending)
            }
        }
        PolicyKind::Eager => {
            if load.seq <= visibility_point {
                GateDecision::Allow(ungated)
            } else {
                GateDecision::Deny(BlockReason::VisibilityPending)
            }
        }
        PolicyKind::Okapi => {
            if !load.unsafe_ {
                return GateDecision::Allow(ungated);
            }
            if load.suspicious_load {
                GateDecision::Deny(BlockReason::SuspiciousPending)
            } else if load.older_okreset {
                GateDecision::Deny(BlockReason::ResetPending)
            } else if load.is_okapi_load {
                GateDecision::Allow(TlbAccessKind::OkapiLoadUnsafe)
            } else {
                GateDecision::Allow(TlbAccessKind::UnsafeLoad)
            }
        }
    }
}

/// Taint of one value: the youngest still-speculative load it derives from.
/// A value is tainted while that root load lies beyond the visibility point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Taint(pub Option<u64>);

impl Taint {
    pub const CLEAN: Taint = Taint(None);

    pub fn is_tainted(self, visibility_point: u64) -> bool {
        self.0.is_some_and(|root| root > visibility_point)
    }

    /// Drops the root once it is no longer speculative.
    pub fn live(self, visibility_point: u64) -> Taint {
        if self.is_tainted(visibility_point) {
            self
        } else {
            Taint::CLEAN
        }
    }
}

/// Taint of a result: union of the live source taints, plus the op's own seq
/// if it is a load executing speculatively.
pub fn taint_propagate(sources: &[Taint], unsafe_load_seq: Option<u64>, visibility_point: u64) -> Taint {
    let root = sources
        .iter()
        .filter_map(|t| t.live(visibility_point).0)
        .chain(unsafe_load_seq)
        .max();
    Taint(root)
}

/// DIFT check for instructions that can form a side channel: load/store/flush
/// addresses, store data, branch conditions and indirect targets.
pub fn gate_transmitter(policy: PolicyKind, consumed: &[Taint], visibility_point: u64) -> Result<(), BlockReason> {
    if policy == PolicyKind::Dift && consumed.iter().any(|t| t.is_tainted(visibility_point)) {
        Err(BlockReason::TaintPending)
    } else {
        Ok(())
    }
}
