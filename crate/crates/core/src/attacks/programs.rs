//! Assembly text generators for the attack scenarios.
//!
//! Register conventions: r1 carries the attacker-chosen argument, r13 holds
//! the bucket shift and r14 the probe base for the whole run. r15 is the
//! link register. Victims clobber r2..r9; the reload phase uses r7, r10..r12.

use std::fmt::Write as _;

use super::layout::{Layout, BUCKETS, MAX_SECRET_BYTES, SENTINEL};
use super::{AttackScenario, Hardening, Placement, Variant};

struct Gen<'a> {
    l: &'a Layout,
    s: &'a AttackScenario,
    depth: u64,
    out: String,
}

macro_rules! emit {
    ($g:expr, $($arg:tt)*) => {{
        writeln!($g.out, $($arg)*).expect("writing to a String");
    }};
}

impl<'a> Gen<'a> {
    fn tail(&self) -> u64 {
        self.l.chain_cell(self.depth - 1)
    }

    fn page(&mut self, addr: u64, sandbox: Option<u32>) {
        emit!(self, "\n.page {addr:#x}");
        if let Some(id) = sandbox {
            emit!(self, ".sandbox {id}");
        }
    }

    /// `dst` <- tail value, through `depth` dependent loads starting at the
    /// first chain cell.
    fn load_chain(&mut self, dst: &str) {
        emit!(self, "    LI r2, {:#x}", self.l.chain_cell(0));
        for _ in 1..self.depth {
            emit!(self, "    LD r2, [r2]");
        }
        emit!(self, "    LD {dst}, [r2]");
    }

    fn set_tail(&mut self, value: &str) {
        emit!(self, "    LI r2, {value}");
        emit!(self, "    LI r3, {:#x}", self.tail());
        emit!(self, "    ST r2, [r3]");
    }

    /// Evict the chain and every probe bucket, then drain the pipeline so
    /// the flushes are architecturally done before the attack call.
    fn flush_all(&mut self) {
        for j in 0..self.depth {
            emit!(self, "    LI r10, {:#x}", self.l.chain_cell(j));
            emit!(self, "    FLUSH [r10]");
        }
        for b in 0..BUCKETS {
            emit!(self, "    FLUSH [r14+{}]", b * self.l.stride);
        }
        emit!(self, "    FENCE");
    }

    fn touch_probe(&mut self) {
        if !self.s.cold_probe {
            emit!(self, "    LD r9, [r14+{}]", self.l.probe_touch() - self.l.probe);
        }
    }

    /// Timed reload of every bucket; deltas go to the round's result slots.
    fn reload(&mut self, k: u64) {
        for b in 0..BUCKETS {
            emit!(self, "    LI r10, {:#x}", self.l.probe_bucket(b));
            emit!(self, "    RDCYCLE r11");
            emit!(self, "    LD r12, [r10]");
            emit!(self, "    RDCYCLE r7");
            emit!(self, "    SUB r7, r7, r11");
            emit!(self, "    LI r10, {:#x}", self.l.result_slot(k, b));
            emit!(self, "    ST r7, [r10]");
        }
    }

    /// r8 <- [r1]; touch probe bucket r8.
    fn encode_gadget(&mut self) {
        emit!(self, "    LD r8, [r1]");
        emit!(self, "    SHL r8, r8, r13");
        emit!(self, "    ADD r8, r8, r14");
        emit!(self, "    LD r9, [r8]");
    }

    fn prologue(&mut self) {
        emit!(self, "_start:");
        emit!(self, "    LI r13, 8");
        emit!(self, "    LI r14, {:#x}", self.l.probe);
        self.touch_probe();
        emit!(self, "    FENCE");
    }

    fn data(&mut self, secret_base: u64) {
        let l = self.l;
        emit!(self, "\n.secret {:#x}, {:#x}", l.secret, l.page);
        for (k, &v) in self.s.secret.iter().enumerate() {
            emit!(self, ".word {:#x} {v}", secret_base + 8 * k as u64);
        }
        for j in 0..self.depth - 1 {
            emit!(self, ".word {:#x} {:#x}", l.chain_cell(j), l.chain_cell(j + 1));
        }
        let array_words = vec![SENTINEL.to_string(); (Layout::ARRAY_LEN_BYTES / 8) as usize];
        emit!(self, ".word {:#x} {}", l.array(), array_words.join(" "));
        emit!(self, ".word {:#x} {SENTINEL}", l.sentinel_ptr());
        emit!(self, ".word {:#x} {:#x}", l.slot(), l.sentinel_ptr());
        for base in l.probe_pages() {
            emit!(self, ".word {base:#x} 0");
        }
        emit!(self, ".word {:#x} 0", l.results);
        let msg_end = l.message_at(self.s.secret.len() as u64);
        let mut page = l.message;
        while page < msg_end {
            emit!(self, ".word {page:#x} 1");
            page += l.page;
        }
    }

    /// Bounds-checked array read whose length comes through the chain.
    fn bounds_victim(&mut self, label: &str) {
        emit!(self, "{label}:");
        self.load_chain("r3");
        emit!(self, "    ADDI r4, r3, -8");
        emit!(self, "    BLT r4, r1, {label}_out");
        emit!(self, "    LI r5, {:#x}", self.l.array());
        emit!(self, "    ADD r6, r5, r1");
        emit!(self, "    LD r8, [r6]");
        emit!(self, "    SHL r8, r8, r13");
        emit!(self, "    ADD r8, r8, r14");
        emit!(self, "    LD r9, [r8]");
        emit!(self, "{label}_out:");
        emit!(self, "    RET");
    }

    /// Train the bounds check in-bounds, then call it with an index that
    /// reaches `target`.
    fn pht_round(&mut self, victim: &str, training: u32, k: u64, target: u64) {
        for t in 0..training as u64 {
            emit!(self, "    LI r1, {}", (t % 8) * 8);
            emit!(self, "    CALL {victim}");
        }
        self.flush_all();
        emit!(self, "    LI r1, {:#x}", target - self.l.array());
        emit!(self, "    CALL {victim}");
        self.reload(k);
    }
}

/// Assembly source for `s` with `training` training calls per round.
pub fn build_source(s: &AttackScenario, l: &Layout, training: u32) -> String {
    let mut g = Gen {
        l,
        s,
        depth: s.chain_depth as u64,
        out: String::new(),
    };
    let rounds = s.secret.len() as u64;
    match s.variant {
        Variant::Pht => {
            g.page(l.main, None);
            g.prologue();
            for k in 0..rounds {
                g.pht_round("victim", training, k, l.secret_word(k));
            }
            emit!(g, "    HALT");
            g.page(l.victim, None);
            g.bounds_victim("victim");
            g.data(l.secret_word(0));
            emit!(g, ".word {:#x} 64", g.tail());
        }
        Variant::Btb => {
            g.page(l.main, None);
            g.prologue();
            for k in 0..rounds {
                for _ in 0..training {
                    g.set_tail("gadget");
                    emit!(g, "    LI r1, {:#x}", l.sentinel_ptr());
                    emit!(g, "    CALL victim");
                }
                g.set_tail("benign");
                g.flush_all();
                emit!(g, "    LI r1, {:#x}", l.secret_word(k));
                emit!(g, "    CALL victim");
                g.reload(k);
            }
            emit!(g, "    HALT");
            g.page(l.victim, None);
            emit!(g, "victim:");
            g.load_chain("r2");
            emit!(g, "    JMPR r2");
            emit!(g, "benign:");
            emit!(g, "    RET");
            if s.placement == Placement::CrossPage {
                g.page(l.gadget, None);
            }
            emit!(g, "gadget:");
            g.encode_gadget();
            emit!(g, "    RET");
            g.data(l.secret_word(0));
        }
        Variant::Rsb => {
            g.page(l.main, None);
            g.prologue();
            for k in 0..rounds {
                g.set_tail(&format!("after_{k}"));
                g.flush_all();
                emit!(g, "    LI r1, {:#x}", l.secret_word(k));
                emit!(g, "    CALL victim");
                // Reached only through the stale return prediction.
                g.encode_gadget();
                emit!(g, "after_{k}:");
                g.reload(k);
            }
            emit!(g, "    HALT");
            g.page(l.victim, None);
            emit!(g, "victim:");
            g.load_chain("r15");
            emit!(g, "    RET");
            g.data(l.secret_word(0));
        }
        Variant::Stl => {
            g.page(l.main, None);
            g.prologue();
            for k in 0..rounds {
                for _ in 0..training {
                    g.set_tail(&format!("{:#x}", l.dummy()));
                    emit!(g, "    LI r2, {:#x}", l.sentinel_ptr());
                    emit!(g, "    LI r3, {:#x}", l.slot());
                    emit!(g, "    ST r2, [r3]");
                    emit!(g, "    LI r1, {:#x}", l.sentinel_ptr());
                    emit!(g, "    CALL victim");
                }
                g.set_tail(&format!("{:#x}", l.slot()));
                // Stale pointer the bypassing load will see.
                emit!(g, "    LI r2, {:#x}", l.secret_word(k));
                emit!(g, "    LI r3, {:#x}", l.slot());
                emit!(g, "    ST r2, [r3]");
                g.flush_all();
                emit!(g, "    LI r1, {:#x}", l.sentinel_ptr());
                emit!(g, "    CALL victim");
                g.reload(k);
            }
            emit!(g, "    HALT");
            g.page(l.victim, None);
            emit!(g, "victim:");
            g.load_chain("r2");
            emit!(g, "    ST r1, [r2]");
            emit!(g, "    LI r3, {:#x}", l.slot());
            emit!(g, "    LD r5, [r3]");
            emit!(g, "    LD r8, [r5]");
            emit!(g, "    SHL r8, r8, r13");
            emit!(g, "    ADD r8, r8, r14");
            emit!(g, "    LD r9, [r8]");
            emit!(g, "    RET");
            g.data(l.secret_word(0));
        }
        Variant::Classic | Variant::MutualDistrust => {
            let reset = s.hardening == Hardening::OkapiresetOnTransition;
            let mutual = s.variant == Variant::MutualDistrust;
            g.page(l.main, Some(0));
            g.prologue();
            for k in 0..rounds {
                if mutual {
                    emit!(g, "    CALL tenant_a");
                } else {
                    emit!(g, "    LI r3, {:#x}", l.secret_word(k));
                    emit!(g, "    LD r4, [r3]");
                }
                if reset {
                    emit!(g, "    OKRESET");
                }
                emit!(g, "    JMP untrusted_{k}");
                emit!(g, "resume_{k}:");
                if reset {
                    emit!(g, "    OKRESET");
                }
            }
            emit!(g, "    HALT");
            if mutual {
                g.page(l.tenant_a, Some(1));
                emit!(g, "tenant_a:");
                emit!(g, "    LI r3, {:#x}", l.secret_word(0));
                for k in 0..rounds {
                    emit!(g, "    LD r4, [r3+{}]", 8 * k);
                }
                emit!(g, "    RET");
            }
            g.page(l.tenant_b, Some(2));
            g.bounds_victim("victim");
            for k in 0..rounds {
                emit!(g, "untrusted_{k}:");
                g.touch_probe();
                g.pht_round("victim", training, k, l.secret_word(k));
                emit!(g, "    JMP resume_{k}");
            }
            g.data(l.secret_word(0));
            emit!(g, ".word {:#x} 64", g.tail());
        }
        Variant::Syscall => {
            g.page(l.main, None);
            g.prologue();
            for k in 0..rounds {
                emit!(g, "    SYSCALL");
                g.touch_probe();
                g.pht_round("victim", training, k, l.secret_word(k));
            }
            emit!(g, "    HALT");
            g.page(l.victim, None);
            g.bounds_victim("victim");
            g.page(l.handler, None);
            emit!(g, "syscall_handler:");
            emit!(g, "    LI r3, {:#x}", l.secret_word(0));
            for k in 0..rounds {
                emit!(g, "    LD r4, [r3+{}]", 8 * k);
            }
            emit!(g, "    SYSRET");
            g.data(l.secret_word(0));
            emit!(g, ".word {:#x} 64", g.tail());
        }
        Variant::Vault => vault(&mut g, training),
    }
    g.out
}

/// Hash of the whole secret buffer (unused words are zero) with a fresh
/// public message block per call, so message reads miss in the cache; hardening
/// decides how secret reads interact with the safe bits.
/// Passes the vault's hash makes over its secret buffer.
const HASH_PASSES: u32 = 2;

fn vault(g: &mut Gen<'_>, training: u32) {
    let (l, s) = (g.l, g.s);
    let rounds = s.secret.len() as u64;
    g.page(l.main, None);
    g.prologue();
    for k in 0..rounds {
        emit!(g, "    LI r1, {:#x}", l.message_at(k));
        emit!(g, "    CALL vault_hash");
        for _ in 0..training {
            g.set_tail("gadget");
            emit!(g, "    LI r1, {:#x}", l.sentinel_ptr());
            emit!(g, "    CALL dispatch");
        }
        g.set_tail("benign");
        g.flush_all();
        emit!(g, "    LI r1, {:#x}", l.secret_word(k));
        emit!(g, "    CALL dispatch");
        g.reload(k);
    }
    emit!(g, "    HALT");

    g.page(l.vault, Some(1));
    let load = if s.hardening == Hardening::OkapiloadSecrets {
        "OKLD"
    } else {
        "LD"
    };
    emit!(g, "vault_hash:");
    emit!(g, "    LI r4, 0");
    emit!(g, "    ADDI r7, r1, 0");
    for pass in 0..HASH_PASSES {
        emit!(g, "    LI r2, {:#x}", l.secret_word(0));
        emit!(g, "    LI r3, {MAX_SECRET_BYTES}");
        emit!(g, "vault_loop_{pass}:");
        emit!(g, "    {load} r5, [r2]");
        if s.hardening == Hardening::ResetAfterSecret {
            emit!(g, "    OKRESET");
        }
        emit!(g, "    LD r6, [r7]");
        emit!(g, "    XOR r4, r4, r5");
        emit!(g, "    ADD r4, r4, r6");
        emit!(g, "    ADDI r2, r2, 8");
        emit!(g, "    ADDI r7, r7, {}", l.line);
        emit!(g, "    ADDI r3, r3, -1");
        emit!(g, "    BNE r3, r0, vault_loop_{pass}");
    }
    if s.hardening == Hardening::ResetOnReturn {
        emit!(g, "    OKRESET");
    }
    emit!(g, "    LI r2, {:#x}", l.output());
    emit!(g, "    ST r4, [r2]");
    emit!(g, "    RET");

    g.page(l.victim, Some(2));
    emit!(g, "dispatch:");
    g.touch_probe();
    g.load_chain("r2");
    emit!(g, "    JMPR r2");
    emit!(g, "benign:");
    emit!(g, "    RET");
    if s.placement == Placement::CrossPage {
        g.page(l.gadget, Some(2));
    }
    emit!(g, "gadget:");
    g.encode_gadget();
    emit!(g, "    RET");
    g.data(l.secret_word(0));
}
