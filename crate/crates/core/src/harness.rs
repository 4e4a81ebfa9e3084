//! Experiment commands behind the CLI: single runs, attack matrices, policy
//! comparison over a program suite and page-locality statistics. Every
//! command returns a [`Report`] that serialises deterministically apart from
//! its `timestamp`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::attacks::{builtin, run_attack, AttackScenario, Hardening, LeakVerdict, ScenarioError};
use crate::config::{ConfigError, SimConfig};
use crate::isa::{assemble_with_page_size, run_sequential, AccessKind, AsmError, Fault, MemAccess, Program};
use crate::pipeline::{simulate, ExitReason, PageCounts, RunResult, RunStats};
use crate::policy::PolicyKind;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Asm {
        path: PathBuf,
        #[source]
        source: AsmError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}: no programs found")]
    EmptySuite(PathBuf),
    #[error("{program} under {policy} did not halt: {exit:?}")]
    DidNotHalt {
        program: String,
        policy: PolicyKind,
        exit: ExitReason,
    },
}

impl HarnessError {
    /// Faults and timeouts, as opposed to bad input.
    pub fn is_run_failure(&self) -> bool {
        matches!(self, HarnessError::DidNotHalt { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramReport {
    pub program: String,
    pub policy: PolicyKind,
    pub exit: ExitReason,
    pub stats: RunStats,
    pub final_pc: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub program: String,
    pub policy: PolicyKind,
    pub cycles: u64,
    pub baseline_cycles: u64,
    /// `(cycles - baseline) * 100 / baseline`, from exact integer cycles.
    pub overhead_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub program: String,
    /// Distinct pages per interval between privilege switches.
    pub intervals: Vec<PageCounts>,
    pub mapped_code_pages: usize,
    pub mapped_data_pages: usize,
    pub touched_code_pages: usize,
    pub touched_data_pages: usize,
    pub code_fraction: f64,
    pub data_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub timestamp: u64,
    pub config: SimConfig,
    #[serde(default)]
    pub programs: Vec<ProgramReport>,
    #[serde(default)]
    pub verdicts: Vec<LeakVerdict>,
    #[serde(default)]
    pub comparison: Vec<ComparisonRow>,
    /// Per-program breaches of Baseline <= Okapi and
    /// Baseline <= Eager <= Naive.
    #[serde(default)]
    pub ordering_violations: Vec<String>,
    #[serde(default)]
    pub locality: Vec<LocalityReport>,
}

impl Report {
    fn new(command: &str, cfg: &SimConfig) -> Self {
        Report {
            command: command.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: cfg.clone(),
            programs: Vec::new(),
            verdicts: Vec::new(),
            comparison: Vec::new(),
            ordering_violations: Vec::new(),
            locality: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Verdicts that leaked although the scenario claims the policy blocks it.
    pub fn security_failures(&self) -> Vec<&LeakVerdict> {
        self.verdicts.iter().filter(|v| v.violates_claim()).collect()
    }

    /// Comparison table as CSV: program, policy, cycles, baseline, overhead.
    pub fn comparison_csv(&self) -> String {
        let mut out = String::from("program,policy,cycles,baseline_cycles,overhead_pct\n");
        for r in &self.comparison {
            out.push_str(&format!(
                "{},{},{},{},{:.4}\n",
                r.program,
                r.policy.name(),
                r.cycles,
                r.baseline_cycles,
                r.overhead_pct
            ));
        }
        out
    }
}

pub fn overhead_pct(cycles: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        return 0.0;
    }
    (cycles as i128 - baseline as i128) as f64 * 100.0 / baseline as f64
}

pub fn load_program(path: &Path, page_size: u64) -> Result<Program, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    assemble_with_page_size(&text, page_size).map_err(|source| HarnessError::Asm {
        path: path.to_path_buf(),
        source,
    })
}

fn program_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn program_report(name: &str, policy: PolicyKind, result: &RunResult) -> ProgramReport {
    ProgramReport {
        program: name.to_string(),
        policy,
        exit: result.exit,
        stats: result.stats.clone(),
        final_pc: result.state.pc,
    }
}

/// Run one program under `cfg`.
pub fn cmd_run(path: &Path, cfg: &SimConfig) -> Result<(Report, RunResult), HarnessError> {
    cfg.validate()?;
    let program = load_program(path, cfg.page_size)?;
    let result = simulate(&program, cfg);
    let mut report = Report::new("run", cfg);
    report
        .programs
        .push(program_report(&program_name(path), cfg.policy, &result));
    Ok((report, result))
}

/// Resolve a scenario name or JSON file path.
pub fn resolve_scenario(name_or_path: &str) -> Result<AttackScenario, HarnessError> {
    let path = Path::new(name_or_path);
    if path.extension().is_some_and(|e| e == "json") || path.is_file() {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        return Ok(AttackScenario::from_json(&text)?);
    }
    Ok(builtin(name_or_path)?)
}

/// Run `scenarios` under every policy in `policies`.
pub fn cmd_attack(
    scenarios: &[AttackScenario],
    policies: &[PolicyKind],
    cfg: &SimConfig,
    hardening: Option<Hardening>,
    trials: Option<u32>,
) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let mut report = Report::new("attack", cfg);
    for s in scenarios {
        let mut s = s.clone();
        if let Some(h) = hardening {
            s.hardening = h;
        }
        if let Some(t) = trials {
            s.trials = t;
        }
        s.validate()?;
        for &p in policies {
            report.verdicts.push(run_attack(&s, &cfg.clone().with_policy(p))?);
        }
    }
    Ok(report)
}

/// Assembly files (`.s`/`.asm`) in `dir`, sorted by name.
pub fn suite_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let io = |source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "s" || e == "asm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::EmptySuite(dir.to_path_buf()));
    }
    Ok(files)
}

/// Cycles of every suite program under every policy (Baseline always
/// included), overhead against Baseline, and the ordering check.
pub fn cmd_compare(dir: &Path, policies: &[PolicyKind], cfg: &SimConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let mut policies: Vec<PolicyKind> = policies.to_vec();
    if !policies.contains(&PolicyKind::Baseline) {
        policies.insert(0, PolicyKind::Baseline);
    }
    let mut report = Report::new("compare", cfg);
    for path in suite_files(dir)? {
        let name = program_name(&path);
        let program = load_program(&path, cfg.page_size)?;
        let mut cycles = Vec::new();
        for &p in &policies {
            let result = simulate(&program, &cfg.clone().with_policy(p));
            if result.exit != ExitReason::Halted {
                return Err(HarnessError::DidNotHalt {
                    program: name,
                    policy: p,
                    exit: result.exit,
                });
            }
            report.programs.push(program_report(&name, p, &result));
            cycles.push((p, result.stats.cycles));
        }
        let of = |k: PolicyKind| cycles.iter().find(|(p, _)| *p == k).map(|&(_, c)| c);
        let base = of(PolicyKind::Baseline).expect("baseline always runs");
        for &(p, c) in &cycles {
            report.comparison.push(ComparisonRow {
                program: name.clone(),
                policy: p,
                cycles: c,
                baseline_cycles: base,
                overhead_pct: overhead_pct(c, base),
            });
        }
        report.ordering_violations.extend(ordering_violations(&name, &cycles));
    }
    Ok(report)
}

/// Breaches of Baseline <= Okapi and Baseline <= Eager <= Naive among the
/// policies present. DIFT is not ordered.
pub fn ordering_violations(program: &str, cycles: &[(PolicyKind, u64)]) -> Vec<String> {
    let of = |k: PolicyKind| cycles.iter().find(|(p, _)| *p == k).map(|&(_, c)| c);
    let pairs = [
        (PolicyKind::Baseline, PolicyKind::Okapi),
        (PolicyKind::Baseline, PolicyKind::Eager),
        (PolicyKind::Eager, PolicyKind::Naive),
    ];
    pairs
        .iter()
        .filter_map(|&(lo, hi)| match (of(lo), of(hi)) {
            (Some(a), Some(b)) if a > b => Some(format!("{program}: {} ({a}) > {} ({b})", lo.name(), hi.name())),
            _ => None,
        })
        .collect()
}

/// Distinct code and data pages per interval between privilege switches in
/// an architectural access trace.
pub fn locality_intervals(trace: &[MemAccess], page_size: u64) -> Vec<PageCounts> {
    let mut out = Vec::new();
    let mut code = BTreeSet::new();
    let mut data = BTreeSet::new();
    let mut current = None;
    for a in trace {
        if current.is_some_and(|p| p != a.privilege) {
            out.push(PageCounts {
                code: code.len(),
                data: data.len(),
            });
            code.clear();
            data.clear();
        }
        current = Some(a.privilege);
        let page = a.vaddr / page_size;
        match a.kind {
            AccessKind::Ifetch => code.insert(page),
            AccessKind::Load | AccessKind::Store => data.insert(page),
        };
    }
    if !code.is_empty() || !data.is_empty() {
        out.push(PageCounts {
            code: code.len(),
            data: data.len(),
        });
    }
    out
}

fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

/// Page locality of `program`, measured on its sequential execution.
pub fn locality_report(name: &str, program: &Program, max_steps: u64) -> LocalityReport {
    let run = run_sequential(program, max_steps);
    let page = program.page_size;
    let touched = |kinds: &[AccessKind]| {
        run.trace
            .iter()
            .filter(|a| kinds.contains(&a.kind))
            .map(|a| a.vaddr / page)
            .collect::<BTreeSet<_>>()
            .len()
    };
    let touched_code = touched(&[AccessKind::Ifetch]);
    let touched_data = touched(&[AccessKind::Load, AccessKind::Store]);
    LocalityReport {
        program: name.to_string(),
        intervals: locality_intervals(&run.trace, page),
        mapped_code_pages: program.text_pages.len(),
        mapped_data_pages: program.data_pages.len(),
        touched_code_pages: touched_code,
        touched_data_pages: touched_data,
        code_fraction: fraction(touched_code, program.text_pages.len()),
        data_fraction: fraction(touched_data, program.data_pages.len()),
    }
}

pub fn cmd_locality(path: &Path, cfg: &SimConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let program = load_program(path, cfg.page_size)?;
    let mut report = Report::new("locality", cfg);
    report
        .locality
        .push(locality_report(&program_name(path), &program, cfg.max_cycles));
    Ok(report)
}

/// The final architectural fault, if the run ended in one.
pub fn exit_fault(result: &RunResult) -> Option<Fault> {
    match result.exit {
        ExitReason::Fault(f) => Some(f),
        _ => None,
    }
}
