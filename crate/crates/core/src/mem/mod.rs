//! Memory subsystem: page table, data TLB with safe access bits, the
//! privilege-level monitor and a timed cache.

mod cache;
mod page_table;
mod tlb;

pub use cache::TimedCache;
pub use page_table::{Access, FaultKind, PageTable, PageTableEntry, Perms};
pub use tlb::{Tlb, TlbAccessKind, TlbEntry, TlbEvent, TlbOutcome};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Privilege {
    #[default]
    User,
    Supervisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrivilegeChange {
    NoChange,
    Switch,
}

/// Watches the committed privilege level. A switch means every safe access
/// bit must be dropped.
pub fn monitor_privilege(old: Privilege, new: Privilege) -> PrivilegeChange {
    if old == new {
        PrivilegeChange::NoChange
    } else {
        PrivilegeChange::Switch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn privilege_monitor() {
        assert_eq!(
            monitor_privilege(Privilege::User, Privilege::Supervisor),
            PrivilegeChange::Switch
        );
        assert_eq!(
            monitor_privilege(Privilege::Supervisor, Privilege::User),
            PrivilegeChange::Switch
        );
        assert_eq!(
            monitor_privilege(Privilege::Supervisor, Privilege::Supervisor),
            PrivilegeChange::NoChange
        );
    }
}
