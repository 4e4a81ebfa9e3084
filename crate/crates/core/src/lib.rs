//! Deterministic out-of-order CPU simulator with TLB safe access bits,
//! comparison speculation policies, Spectre-style attack scenarios and an
//! experiment harness.

pub mod attacks;
pub mod config;
pub mod harness;
pub mod isa;
pub mod mem;
pub mod pipeline;
pub mod policy;

pub use config::SimConfig;
pub use policy::PolicyKind;
