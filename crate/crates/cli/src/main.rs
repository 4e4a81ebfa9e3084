use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use okapi_core::attacks::{Hardening, LeakVerdict, BUILTIN_NAMES};
use okapi_core::harness::{self, HarnessError, Report};
use okapi_core::pipeline::ExitReason;
use okapi_core::{PolicyKind, SimConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_RUN_FAILURE: u8 = 2;
const EXIT_SECURITY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sim",
    version,
    about = "Out-of-order CPU simulator with secure speculation policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file with SimConfig fields; flags below override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    max_cycles: Option<u64>,
    #[arg(long)]
    page_size: Option<u64>,
    #[arg(long)]
    rob_entries: Option<usize>,
    #[arg(long)]
    tlb_entries: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one assembly program.
    Run {
        file: PathBuf,
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Write the JSON report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        stats: Option<PathBuf>,
        /// Write a pipeline trace here.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run attack scenarios and report whether each leaked.
    Attack {
        /// Built-in scenario name, `all`, or a scenario JSON file.
        scenario: String,
        /// A policy name or `all`.
        #[arg(long, default_value = "all")]
        policy: String,
        #[arg(long)]
        hardening: Option<Hardening>,
        #[arg(long)]
        trials: Option<u32>,
        /// Write the JSON report here.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare policies over every program in a directory.
    Compare {
        dir: PathBuf,
        /// Comma-separated policies; Baseline is always included.
        #[arg(long, value_delimiter = ',', default_value = "baseline,naive,eager,dift,okapi")]
        policies: Vec<PolicyKind>,
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Count distinct pages touched between privilege switches.
    Locality {
        file: PathBuf,
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(String),
    Security(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_run_failure() {
            Failure::Run(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

impl ConfigArgs {
    fn load(&self) -> Result<SimConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
            }
            None => SimConfig::default(),
        };
        if let Some(v) = self.max_cycles {
            cfg.max_cycles = v;
        }
        if let Some(v) = self.page_size {
            cfg.page_size = v;
        }
        if let Some(v) = self.rob_entries {
            cfg.rob_entries = v;
        }
        if let Some(v) = self.tlb_entries {
            cfg.tlb_entries = v;
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn emit(report: &Report, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => write_file(path, &report.to_json()),
        None => {
            println!("{}", report.to_json());
            Ok(())
        }
    }
}

fn cmd_run(
    file: &Path,
    policy: Option<PolicyKind>,
    stats: Option<&Path>,
    trace: Option<&Path>,
    cfg: &ConfigArgs,
) -> Result<(), Failure> {
    let mut cfg = cfg.load()?;
    if let Some(p) = policy {
        cfg.policy = p;
    }
    if trace.is_some() && cfg.trace_verbosity == 0 {
        cfg.trace_verbosity = 2;
    }
    let (report, result) = harness::cmd_run(file, &cfg)?;
    emit(&report, stats)?;
    if let Some(path) = trace {
        let mut text = result.trace.join("\n");
        text.push('\n');
        write_file(path, &text)?;
    }
    match result.exit {
        ExitReason::Halted => Ok(()),
        ExitReason::Timeout => Err(Failure::Run(format!("timed out after {} cycles", result.stats.cycles))),
        ExitReason::Fault(f) => Err(Failure::Run(format!(
            "{:?} fault at pc {:#x}, address {:#x}",
            f.kind, f.pc, f.addr
        ))),
    }
}

fn verdict_line(v: &LeakVerdict) -> String {
    let outcome = if let Some(e) = &v.error {
        format!("error: {e}")
    } else if v.leaked {
        "LEAKED".to_string()
    } else {
        "safe".to_string()
    };
    let recovered: Vec<String> = v
        .recovered_bytes
        .iter()
        .map(|b| b.map_or("?".into(), |b| format!("{b:x}")))
        .collect();
    format!(
        "{:<18} {:<9} {:<26} {:<7} {}/{} trials  recovered [{}]  {} cycles",
        v.scenario,
        v.policy.name(),
        v.hardening.name(),
        outcome,
        v.trials_succeeded,
        v.trials,
        recovered.join(" "),
        v.cycles
    )
}

fn cmd_attack(
    scenario: &str,
    policy: &str,
    hardening: Option<Hardening>,
    trials: Option<u32>,
    json: Option<&Path>,
    cfg: &ConfigArgs,
) -> Result<(), Failure> {
    let cfg = cfg.load()?;
    let policies: Vec<PolicyKind> = if policy.eq_ignore_ascii_case("all") {
        PolicyKind::ALL.to_vec()
    } else {
        vec![policy.parse().map_err(|e| Failure::Usage(format!("{e}")))?]
    };
    let scenarios = if scenario == "all" {
        BUILTIN_NAMES
            .iter()
            .map(|n| harness::resolve_scenario(n))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![harness::resolve_scenario(scenario)?]
    };
    let report = harness::cmd_attack(&scenarios, &policies, &cfg, hardening, trials)?;
    for v in &report.verdicts {
        println!("{}", verdict_line(v));
    }
    if let Some(path) = json {
        write_file(path, &report.to_json())?;
    }
    let failures = report.security_failures();
    if failures.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = failures
            .iter()
            .map(|v| format!("{}/{}", v.scenario, v.policy))
            .collect();
        Err(Failure::Security(format!(
            "leaked where blocking is required: {}",
            names.join(", ")
        )))
    }
}

fn cmd_compare(
    dir: &Path,
    policies: &[PolicyKind],
    csv: Option<&Path>,
    json: Option<&Path>,
    cfg: &ConfigArgs,
) -> Result<(), Failure> {
    let cfg = cfg.load()?;
    let report = harness::cmd_compare(dir, policies, &cfg)?;
    println!("{:<16} {:<9} {:>10} {:>10}", "program", "policy", "cycles", "overhead");
    for r in &report.comparison {
        println!(
            "{:<16} {:<9} {:>10} {:>9.2}%",
            r.program,
            r.policy.name(),
            r.cycles,
            r.overhead_pct
        );
    }
    if let Some(path) = csv {
        write_file(path, &report.comparison_csv())?;
    }
    if let Some(path) = json {
        write_file(path, &report.to_json())?;
    }
    if report.ordering_violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Security(report.ordering_violations.join("; ")))
    }
}

fn cmd_locality(file: &Path, json: Option<&Path>, cfg: &ConfigArgs) -> Result<(), Failure> {
    let cfg = cfg.load()?;
    let report = harness::cmd_locality(file, &cfg)?;
    let loc = &report.locality[0];
    for (i, iv) in loc.intervals.iter().enumerate() {
        println!("interval {i}: {} code pages, {} data pages", iv.code, iv.data);
    }
    println!(
        "touched {}/{} code pages ({:.2}%), {}/{} data pages ({:.2}%)",
        loc.touched_code_pages,
        loc.mapped_code_pages,
        100.0 * loc.code_fraction,
        loc.touched_data_pages,
        loc.mapped_data_pages,
        100.0 * loc.data_fraction
    );
    if let Some(path) = json {
        write_file(path, &report.to_json())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Run {
            file,
            policy,
            stats,
            trace,
            cfg,
        } => cmd_run(file, *policy, stats.as_deref(), trace.as_deref(), cfg),
        Command::Attack {
            scenario,
            policy,
            hardening,
            trials,
            json,
            cfg,
        } => cmd_attack(scenario, policy, *hardening, *trials, json.as_deref(), cfg),
        Command::Compare {
            dir,
            policies,
            csv,
            json,
            cfg,
        } => cmd_compare(dir, policies, csv.as_deref(), json.as_deref(), cfg),
        Command::Locality { file, json, cfg } => cmd_locality(file, json.as_deref(), cfg),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(m)) => {
            eprintln!("run failed: {m}");
            ExitCode::from(EXIT_RUN_FAILURE)
        }
        Err(Failure::Security(m)) => {
            eprintln!("security assertion failed: {m}");
            ExitCode::from(EXIT_SECURITY)
        }
    }
}
