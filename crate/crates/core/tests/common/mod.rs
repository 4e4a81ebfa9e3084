//! Program corpus shared by the integration tests: hand-written programs,
//! the benchmark suite and every built-in attack scenario.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use okapi_core::attacks::{builtin, AttackScenario, Hardening, Placement, BUILTIN_NAMES};
use okapi_core::harness::{load_program, suite_files};
use okapi_core::isa::Program;
use okapi_core::SimConfig;

pub fn programs_dir(sub: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("programs").join(sub)
}

pub fn files(sub: &str) -> Vec<(String, PathBuf, Program)> {
    let page = SimConfig::default().page_size;
    suite_files(&programs_dir(sub))
        .unwrap()
        .into_iter()
        .map(|p| {
            let prog = load_program(&p, page).unwrap();
            (p.file_stem().unwrap().to_string_lossy().into_owned(), p, prog)
        })
        .collect()
}

/// Every built-in scenario plus the vault hardening variants.
pub fn scenarios() -> Vec<AttackScenario> {
    let mut out: Vec<AttackScenario> = BUILTIN_NAMES.iter().map(|n| builtin(n).unwrap()).collect();
    for h in [
        Hardening::OkapiloadSecrets,
        Hardening::ResetAfterSecret,
        Hardening::ResetOnReturn,
    ] {
        for placement in [Placement::SamePage, Placement::CrossPage] {
            let mut s = builtin("vault").unwrap();
            s.name = format!("vault-{}-{:?}", h.name(), placement);
            s.hardening = h;
            s.placement = placement;
            out.push(s);
        }
    }
    out
}

/// `(name, program)` for the whole corpus.
pub fn corpus() -> Vec<(String, Program)> {
    let cfg = SimConfig::default();
    let mut out: Vec<(String, Program)> = files("corpus")
        .into_iter()
        .chain(files("bench"))
        .map(|(n, _, p)| (n, p))
        .collect();
    for s in scenarios() {
        out.push((format!("attack:{}", s.name), s.program(&cfg, 0).unwrap()));
    }
    out
}
