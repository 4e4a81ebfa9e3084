//! Address map shared by every scenario program.
//!
//! Cache placement: with 64 sets of 64-byte lines a page covers every set
//! exactly once. Probe bucket `b` lives in set `4b`; everything else the
//! attack touches sits in sets that are not multiples of four, so the reload
//! phase only ever measures probe lines.

use crate::config::SimConfig;

/// Number of probe buckets; secrets are drawn from `0..BUCKETS`.
pub const BUCKETS: u64 = 16;

/// Index of the extra bucket that training runs encode into. It lies outside
/// the probed range.
pub const SENTINEL: u64 = BUCKETS;

/// Highest number of secret bytes a scenario can plant.
pub const MAX_SECRET_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub page: u64,
    pub line: u64,
    /// Distance between probe buckets; maps bucket `b` to set `4b`.
    pub stride: u64,
    pub main: u64,
    pub victim: u64,
    pub gadget: u64,
    pub handler: u64,
    pub tenant_a: u64,
    pub tenant_b: u64,
    pub vault: u64,
    pub public: u64,
    /// Per-round message blocks streamed by the vault's hash.
    pub message: u64,
    pub probe: u64,
    pub results: u64,
    pub secret: u64,
}

impl Layout {
    pub fn new(cfg: &SimConfig) -> Self {
        let p = cfg.page_size;
        Layout {
            page: p,
            line: cfg.line_bytes,
            stride: cfg.line_bytes * cfg.cache_sets as u64 / BUCKETS,
            victim: 16 * p,
            gadget: 17 * p,
            handler: 18 * p,
            tenant_a: 19 * p,
            tenant_b: 20 * p,
            vault: 28 * p,
            public: 32 * p,
            message: 36 * p,
            probe: 48 * p,
            results: 64 * p,
            secret: 80 * p,
            main: 96 * p,
        }
    }

    fn line_at(&self, base: u64, index: u64) -> u64 {
        base + index * self.line
    }

    /// Cell `j` of the slow pointer chain (sets 1, 5, 9, ...).
    pub fn chain_cell(&self, j: u64) -> u64 {
        self.line_at(self.public, 4 * j + 1)
    }

    /// In-bounds array of the bounds-check victim; every element encodes the
    /// sentinel bucket.
    pub fn array(&self) -> u64 {
        self.line_at(self.public, 3)
    }

    pub const ARRAY_LEN_BYTES: u64 = 64;

    /// Word holding the sentinel value, used as a harmless pointer target.
    pub fn sentinel_ptr(&self) -> u64 {
        self.line_at(self.public, 7)
    }

    /// Store-to-load slot of the store-bypass victim.
    pub fn slot(&self) -> u64 {
        self.line_at(self.public, 11)
    }

    /// Harmless store target used while training the store-bypass victim.
    pub fn dummy(&self) -> u64 {
        self.line_at(self.public, 15)
    }

    /// Architectural outputs (e.g. the vault's hash).
    pub fn output(&self) -> u64 {
        self.line_at(self.public, 27)
    }

    /// Bytes of message the vault hashes per call: one line per secret
    /// load over two passes.
    pub fn message_block(&self) -> u64 {
        2 * MAX_SECRET_BYTES as u64 * self.line
    }

    pub fn message_at(&self, k: u64) -> u64 {
        self.message + k * self.message_block()
    }

    pub fn probe_bucket(&self, b: u64) -> u64 {
        self.probe + b * self.stride
    }

    /// A probe-page word outside every bucket line, for legal touches.
    pub fn probe_touch(&self) -> u64 {
        self.line_at(self.probe, 3)
    }

    /// Where round `k` stores the reload delta of bucket `b`.
    pub fn result_slot(&self, k: u64, b: u64) -> u64 {
        self.line_at(self.results, 4 * k + 1) + 8 * b
    }

    pub fn secret_word(&self, k: u64) -> u64 {
        self.line_at(self.secret, 19) + 8 * k
    }

    /// Pages that must be mapped to hold every probe bucket and the sentinel.
    pub fn probe_pages(&self) -> Vec<u64> {
        let last = self.probe_bucket(SENTINEL) + 7;
        (self.probe / self.page..=last / self.page)
            .map(|p| p * self.page)
            .collect()
    }
}
