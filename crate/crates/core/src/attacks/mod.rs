//! Spectre-style attack scenarios: program generators, a Flush+Reload
//! receiver and leak verdicts.
//!
//! Every scenario program plants small secrets (one probe bucket each),
//! mistrains a predictor, opens a transient window behind a chain of flushed
//! pointer loads and lets a gadget encode the secret into the probe array.
//! The program then times a reload of every bucket with RDCYCLE and stores
//! the deltas; [`run_attack`] reads them back from the final memory image.

mod layout;
mod programs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::isa::{assemble_with_page_size, AsmError, Program};
use crate::pipeline::{simulate, ExitReason, RunResult};
use crate::policy::PolicyKind;

pub use layout::{Layout, BUCKETS, MAX_SECRET_BYTES, SENTINEL};
pub use programs::build_source;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Bounds-check bypass through a mistrained conditional branch.
    Pht,
    /// Indirect jump steered to a gadget by a poisoned target buffer.
    Btb,
    /// Return predicted from the return stack while the real target is slow.
    Rsb,
    /// Load bypasses an older store whose address is still unknown.
    Stl,
    /// A trusted runtime reads its secret, then runs an untrusted module.
    Classic,
    /// Two tenants share one privilege level; B attacks A.
    MutualDistrust,
    /// A system call handler reads a kernel secret; user code attacks it.
    Syscall,
    /// A victim reads its own secrets legally, then a poisoned jump in the
    /// same victim leaks them.
    Vault,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Pht,
        Variant::Btb,
        Variant::Rsb,
        Variant::Stl,
        Variant::Classic,
        Variant::MutualDistrust,
        Variant::Syscall,
        Variant::Vault,
    ];

    /// Hardening options meaningful for this variant. Breakouts and the
    /// system call case have no software side to harden.
    pub fn accepts(self, h: Hardening) -> bool {
        match self {
            Variant::Classic | Variant::MutualDistrust => {
                matches!(h, Hardening::None | Hardening::OkapiresetOnTransition)
            }
            Variant::Vault => h != Hardening::OkapiresetOnTransition,
            _ => h == Hardening::None,
        }
    }

    /// Whether the victim legally touches the secret before the attack.
    pub fn mode(self) -> Mode {
        match self {
            Variant::Pht | Variant::Btb | Variant::Rsb | Variant::Stl => Mode::Breakout,
            _ => Mode::Poisoning,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The secret page is never accessed architecturally.
    Breakout,
    /// Some trusted code reads the secret before the transient window opens.
    Poisoning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hardening {
    #[default]
    None,
    /// OKRESET on every switch between trust domains.
    OkapiresetOnTransition,
    /// Secret reads use OKLD, which never sets the safe bit.
    OkapiloadSecrets,
    /// OKRESET right after every secret-dependent load.
    ResetAfterSecret,
    /// One OKRESET when the secret-handling function returns.
    ResetOnReturn,
}

impl Hardening {
    pub const ALL: [Hardening; 5] = [
        Hardening::None,
        Hardening::OkapiresetOnTransition,
        Hardening::OkapiloadSecrets,
        Hardening::ResetAfterSecret,
        Hardening::ResetOnReturn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Hardening::None => "none",
            Hardening::OkapiresetOnTransition => "okapireset_on_transition",
            Hardening::OkapiloadSecrets => "okapiload_secrets",
            Hardening::ResetAfterSecret => "reset_after_secret",
            Hardening::ResetOnReturn => "reset_on_return",
        }
    }
}

impl fmt::Display for Hardening {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Hardening {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Hardening::ALL
            .into_iter()
            .find(|h| h.name() == key)
            .ok_or_else(|| format!("unknown hardening '{s}'"))
    }
}

/// Where the leaking gadget sits relative to the mispredicted control
/// transfer that reaches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    SamePage,
    CrossPage,
}

fn default_trials() -> u32 {
    3
}

fn default_chain_depth() -> u32 {
    4
}

fn default_training() -> u32 {
    4
}

/// A declarative attack description; also the JSON scenario format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScenario {
    pub name: String,
    pub variant: Variant,
    /// One value per secret word, each below [`BUCKETS`].
    pub secret: Vec<u8>,
    #[serde(default)]
    pub hardening: Hardening,
    #[serde(default)]
    pub placement: Placement,
    /// The probe array is never legally touched before the transient encode.
    #[serde(default)]
    pub cold_probe: bool,
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// Flushed loads between the victim entry and the resolving branch.
    #[serde(default = "default_chain_depth")]
    pub chain_depth: u32,
    /// Base number of training calls per round; trial `t` adds `t % 3`.
    #[serde(default = "default_training")]
    pub training: u32,
    /// Overrides [`AttackScenario::claims_blocked`] when present.
    #[serde(default)]
    pub must_block: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("secret has {0} words; at most {MAX_SECRET_BYTES} are supported")]
    SecretTooLong(usize),
    #[error("secret value {0} is not below {BUCKETS}")]
    SecretOutOfRange(u8),
    #[error("secret is empty")]
    EmptySecret,
    #[error("chain depth {0} outside 1..=6")]
    ChainDepth(u32),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("hardening {hardening} does not apply to {variant:?}")]
    Hardening { variant: Variant, hardening: Hardening },
    #[error("generated program does not assemble: {0}")]
    Asm(AsmError),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("invalid scenario JSON: {0}")]
    Json(String),
}

impl AttackScenario {
    pub fn new(name: &str, variant: Variant) -> Self {
        AttackScenario {
            name: name.to_string(),
            variant,
            secret: vec![0xA, 0x3, 0xC, 0x5],
            hardening: Hardening::None,
            placement: Placement::SamePage,
            cold_probe: false,
            trials: default_trials(),
            chain_depth: default_chain_depth(),
            training: default_training(),
            must_block: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: AttackScenario = serde_json::from_str(text).map_err(|e| ScenarioError::Json(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.secret.is_empty() {
            return Err(ScenarioError::EmptySecret);
        }
        if self.secret.len() > MAX_SECRET_BYTES {
            return Err(ScenarioError::SecretTooLong(self.secret.len()));
        }
        if let Some(&v) = self.secret.iter().find(|&&v| v as u64 >= BUCKETS) {
            return Err(ScenarioError::SecretOutOfRange(v));
        }
        if !(1..=6).contains(&self.chain_depth) {
            return Err(ScenarioError::ChainDepth(self.chain_depth));
        }
        if self.trials == 0 {
            return Err(ScenarioError::NoTrials);
        }
        if !self.variant.accepts(self.hardening) {
            return Err(ScenarioError::Hardening {
                variant: self.variant,
                hardening: self.hardening,
            });
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.variant.mode()
    }

    /// Whether `policy` is expected to stop this scenario. Baseline never
    /// does; the conservative policies always do. Okapi stops every breakout,
    /// the system call case (privilege switches clear the bits), sandbox
    /// cases only with OKRESET on transitions, and the vault unless the
    /// gadget shares a page with the jump and no hardening is applied.
    pub fn claims_blocked(&self, policy: PolicyKind) -> bool {
        if let Some(b) = self.must_block {
            return b && policy != PolicyKind::Baseline;
        }
        match policy {
            PolicyKind::Baseline => false,
            PolicyKind::Naive | PolicyKind::Eager | PolicyKind::Dift => true,
            PolicyKind::Okapi => match self.variant {
                Variant::Pht | Variant::Btb | Variant::Rsb | Variant::Stl | Variant::Syscall => true,
                Variant::Classic | Variant::MutualDistrust => {
                    self.cold_probe || self.hardening == Hardening::OkapiresetOnTransition
                }
                Variant::Vault => {
                    self.cold_probe
                        || self.placement == Placement::CrossPage
                        || matches!(
                            self.hardening,
                            Hardening::OkapiloadSecrets | Hardening::ResetAfterSecret | Hardening::ResetOnReturn
                        )
                }
            },
        }
    }

    /// Program for trial `trial`; the number of training calls varies with
    /// the trial index.
    pub fn program(&self, cfg: &SimConfig, trial: u32) -> Result<Program, ScenarioError> {
        self.validate()?;
        let src = build_source(self, &Layout::new(cfg), self.training + trial % 3);
        assemble_with_page_size(&src, cfg.page_size).map_err(ScenarioError::Asm)
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 13] = [
    "pht",
    "btb",
    "btb-crosspage",
    "rsb",
    "stl",
    "classic",
    "classic-reset",
    "mutual",
    "mutual-reset",
    "syscall",
    "vault-sameline",
    "vault-crosspage",
    "vault-coldprobe",
];

pub fn builtin(name: &str) -> Result<AttackScenario, ScenarioError> {
    let s = match name {
        "pht" => AttackScenario::new(name, Variant::Pht),
        "btb" => AttackScenario::new(name, Variant::Btb),
        "btb-crosspage" => AttackScenario {
            placement: Placement::CrossPage,
            ..AttackScenario::new(name, Variant::Btb)
        },
        "rsb" => AttackScenario::new(name, Variant::Rsb),
        "stl" => AttackScenario::new(name, Variant::Stl),
        "classic" => AttackScenario::new(name, Variant::Classic),
        "classic-reset" => AttackScenario {
            hardening: Hardening::OkapiresetOnTransition,
            ..AttackScenario::new(name, Variant::Classic)
        },
        "mutual" => AttackScenario::new(name, Variant::MutualDistrust),
        "mutual-reset" => AttackScenario {
            hardening: Hardening::OkapiresetOnTransition,
            ..AttackScenario::new(name, Variant::MutualDistrust)
        },
        "syscall" => AttackScenario::new(name, Variant::Syscall),
        "vault-sameline" | "vault" => AttackScenario::new(name, Variant::Vault),
        "vault-crosspage" => AttackScenario {
            placement: Placement::CrossPage,
            ..AttackScenario::new(name, Variant::Vault)
        },
        "vault-coldprobe" => AttackScenario {
            cold_probe: true,
            secret: vec![0x9],
            ..AttackScenario::new(name, Variant::Vault)
        },
        _ => return Err(ScenarioError::UnknownScenario(name.to_string())),
    };
    Ok(s)
}

/// Outcome of running a scenario under one policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakVerdict {
    pub scenario: String,
    pub policy: PolicyKind,
    pub hardening: Hardening,
    /// At least 90% of trials recovered every secret word exactly.
    pub leaked: bool,
    /// Per-word recovery of the first trial; `None` when no single bucket
    /// was fast.
    pub recovered_bytes: Vec<Option<u8>>,
    pub trials: u32,
    pub trials_succeeded: u32,
    /// Reload latency of every bucket, per secret word, from the first trial.
    pub timing_histogram: Vec<Vec<u64>>,
    pub hit_threshold: u64,
    pub expected_blocked: bool,
    /// Total simulated cycles over all trials.
    pub cycles: u64,
    /// Set when a trial did not halt cleanly.
    pub error: Option<String>,
}

impl LeakVerdict {
    /// A leak that the scenario claims the policy prevents.
    pub fn violates_claim(&self) -> bool {
        self.leaked && self.expected_blocked
    }
}

/// Reload deltas stored by the probe phase of round `k`.
pub fn reload_timings(result: &RunResult, layout: &Layout, k: u64) -> Vec<u64> {
    (0..BUCKETS)
        .map(|b| result.state.mem.read_u64(layout.result_slot(k, b)).unwrap_or(u64::MAX))
        .collect()
}

/// The unique bucket reloaded faster than `threshold`, if exactly one was.
pub fn decode_bucket(timings: &[u64], threshold: u64) -> Option<u8> {
    let mut hits = timings.iter().enumerate().filter(|(_, &t)| t < threshold);
    match (hits.next(), hits.next()) {
        (Some((b, _)), None) => Some(b as u8),
        _ => None,
    }
}

/// Run every trial of `scenario` under `cfg` (whose policy is used).
pub fn run_attack(scenario: &AttackScenario, cfg: &SimConfig) -> Result<LeakVerdict, ScenarioError> {
    scenario.validate()?;
    let layout = Layout::new(cfg);
    let threshold = cfg.hit_threshold();
    let mut verdict = LeakVerdict {
        scenario: scenario.name.clone(),
        policy: cfg.policy,
        hardening: scenario.hardening,
        leaked: false,
        recovered_bytes: Vec::new(),
        trials: scenario.trials,
        trials_succeeded: 0,
        timing_histogram: Vec::new(),
        hit_threshold: threshold,
        expected_blocked: scenario.claims_blocked(cfg.policy),
        cycles: 0,
        error: None,
    };
    for trial in 0..scenario.trials {
        let program = scenario.program(cfg, trial)?;
        let result = simulate(&program, cfg);
        verdict.cycles += result.stats.cycles;
        if result.exit != ExitReason::Halted {
            verdict
                .error
                .get_or_insert_with(|| format!("trial {trial} ended with {:?}", result.exit));
            continue;
        }
        let timings: Vec<Vec<u64>> = (0..scenario.secret.len() as u64)
            .map(|k| reload_timings(&result, &layout, k))
            .collect();
        let recovered: Vec<Option<u8>> = timings.iter().map(|t| decode_bucket(t, threshold)).collect();
        let exact = recovered.iter().zip(&scenario.secret).all(|(r, &s)| *r == Some(s));
        if exact {
            verdict.trials_succeeded += 1;
        }
        if trial == 0 {
            verdict.recovered_bytes = recovered;
            verdict.timing_histogram = timings;
        }
    }
    verdict.leaked = verdict.trials_succeeded * 10 >= scenario.trials * 9;
    Ok(verdict)
}
