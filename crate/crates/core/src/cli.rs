//! Command-line entry points: `check`, `compile` and `run`.
//!
//! Exit codes are the contract. `check` and `compile` return 0 when clean,
//! 1 on diagnostics and 2 when the input cannot be read. `run` returns 0,
//! 3, 4 or 5 for a complete, aborted, timed-out or unsettled MPT, 6 if the
//! session never closed, and 1 for any configuration problem.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::codegen::{canonical_json, compile_ast, CompileError};
use crate::crypto::Address;
use crate::frontend::{parse_source, FrontendError};
use crate::protocol::{run_scenario, ScenarioConfig};
use crate::typecheck::{check_contract, Diagnostic, FunctionKind, Severity};

#[derive(Debug, Parser)]
#[command(name = "cloak", version, about = "Compile privacy-annotated contracts and simulate multi-party transactions")]
pub struct Cli {
    /// More logging on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and type-check a contract.
    Check { file: PathBuf },
    /// Write policy.json, private.cloak and verifier.json.
    Compile {
        file: PathBuf,
        #[arg(long, default_value = "cloak-out")]
        out: PathBuf,
        /// Enclave address the verifier will trust. Left as zero when the
        /// enclave is not known yet.
        #[arg(long)]
        enclave: Option<Address>,
    },
    /// Run a scenario end to end.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file; the same as `--scenario`.
    #[arg(conflicts_with = "scenario_flag")]
    pub scenario: Option<PathBuf>,
    #[arg(long = "scenario", value_name = "FILE")]
    pub scenario_flag: Option<PathBuf>,
    #[arg(long, default_value = "cloak-out")]
    pub out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, env = "CLOAK_SEED")]
    pub seed: Option<u64>,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Check { file } => cmd_check(file, cli.format, &mut out),
        Command::Compile { file, out: dir, enclave } => cmd_compile(file, dir, enclave.unwrap_or(Address::ZERO), cli.format, &mut out),
        Command::Run(a) => match a.scenario.as_ref().or(a.scenario_flag.as_ref()) {
            Some(s) => cmd_run(s, &a.out, a.seed, cli.format, &mut out),
            None => {
                eprintln!("error: a scenario file is required");
                1
            }
        },
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .without_time()
        .try_init();
}

#[derive(Serialize)]
struct FunctionSummary {
    name: String,
    kind: FunctionKind,
}

#[derive(Serialize)]
struct CheckReport {
    file: String,
    ok: bool,
    diagnostics: Vec<Diagnostic>,
    functions: Vec<FunctionSummary>,
}

fn frontend_diagnostic(e: &FrontendError) -> Diagnostic {
    let code = match e {
        FrontendError::Lex(_) => "LexError",
        FrontendError::Parse(_) => "ParseError",
    };
    Diagnostic {
        severity: Severity::Error,
        code: code.into(),
        position: e.pos(),
        message: e.to_string(),
    }
}

fn print_diagnostics(out: &mut impl Write, file: &Path, diags: &[Diagnostic]) {
    for d in diags {
        let _ = writeln!(
            out,
            "{}:{}:{}: {}[{}]: {}",
            file.display(),
            d.position.line,
            d.position.col,
            d.severity,
            d.code,
            d.message
        );
    }
}

fn sorted(mut diags: Vec<Diagnostic>) -> Vec<Diagnostic> {
    diags.sort_by(|a, b| (a.position, &a.code, &a.message).cmp(&(b.position, &b.code, &b.message)));
    diags
}

pub fn cmd_check(file: &Path, format: Format, out: &mut impl Write) -> i32 {
    let source = match fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return 2;
        }
    };
    let (diagnostics, functions) = match parse_source(&source) {
        Err(e) => (vec![frontend_diagnostic(&e)], Vec::new()),
        Ok(ast) => {
            let c = check_contract(&ast);
            let fs = c
                .functions
                .iter()
                .map(|f| FunctionSummary {
                    name: f.name.clone(),
                    kind: f.kind,
                })
                .collect();
            (sorted(c.diagnostics), fs)
        }
    };
    let errors = diagnostics.iter().filter(|d| d.severity == Severity::Error).count();
    match format {
        Format::Json => {
            let r = CheckReport {
                file: file.display().to_string(),
                ok: errors == 0,
                diagnostics,
                functions,
            };
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("serializes"));
        }
        Format::Text => {
            print_diagnostics(out, file, &diagnostics);
            if errors == 0 {
                for f in &functions {
                    let _ = writeln!(out, "{}: function {} is {}", file.display(), f.name, f.kind);
                }
            }
            let warnings = diagnostics.iter().filter(|d| d.severity == Severity::Warning).count();
            let _ = writeln!(out, "{}: {errors} error(s), {warnings} warning(s)", file.display());
        }
    }
    i32::from(errors > 0)
}

#[derive(Serialize)]
struct CompileReport {
    h_f: String,
    h_p: String,
    files: Vec<String>,
}

pub fn cmd_compile(file: &Path, dir: &Path, enclave: Address, format: Format, out: &mut impl Write) -> i32 {
    let source = match fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return 2;
        }
    };
    let art = match parse_source(&source).map_err(CompileError::from).and_then(|ast| compile_ast(&ast)) {
        Ok(a) => a,
        Err(CompileError::Frontend(e)) => {
            print_diagnostics(out, file, &[frontend_diagnostic(&e)]);
            return 1;
        }
        Err(CompileError::Type(diags)) => {
            print_diagnostics(out, file, &sorted(diags));
            return 1;
        }
    };
    let files: [(&str, Vec<u8>); 3] = [
        ("policy.json", art.policy_json()),
        ("private.cloak", art.private_source().into_bytes()),
        ("verifier.json", canonical_json(&art.verifier(enclave))),
    ];
    if let Err(e) = fs::create_dir_all(dir) {
        eprintln!("error: {}: {e}", dir.display());
        return 2;
    }
    let mut written = Vec::new();
    for (name, bytes) in &files {
        let p = dir.join(name);
        if let Err(e) = fs::write(&p, bytes) {
            eprintln!("error: {}: {e}", p.display());
            return 2;
        }
        written.push(p.display().to_string());
    }
    let h_f = format!("0x{}", art.h_f);
    let h_p = format!("0x{}", art.h_p);
    match format {
        Format::Json => {
            let r = CompileReport { h_f, h_p, files: written };
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("serializes"));
        }
        Format::Text => {
            let _ = writeln!(out, "H_F {h_f}");
            let _ = writeln!(out, "H_P {h_p}");
            for w in written {
                let _ = writeln!(out, "wrote {w}");
            }
        }
    }
    0
}

pub fn cmd_run(scenario: &Path, dir: &Path, seed: Option<u64>, format: Format, out: &mut impl Write) -> i32 {
    let (mut cfg, source) = match ScenarioConfig::load(scenario) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let run = match run_scenario(&cfg, &source) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let report_path = dir.join("report.json");
    let trace_path = dir.join("trace.jsonl");
    let report_json = serde_json::to_string_pretty(&run.report).expect("serializes");
    let written = fs::create_dir_all(dir)
        .and_then(|_| fs::write(&report_path, format!("{report_json}\n")))
        .and_then(|_| fs::write(&trace_path, run.trace_jsonl()));
    if let Err(e) = written {
        eprintln!("error: {}: {e}", dir.display());
        return 1;
    }
    let rep = &run.report;
    match format {
        Format::Json => {
            let _ = writeln!(out, "{report_json}");
        }
        Format::Text => {
            let _ = writeln!(out, "outcome {}", rep.outcome);
            for r in &rep.rounds {
                let kinds: Vec<String> = r.txs.iter().map(|(k, n)| format!("{k}×{n}")).collect();
                let _ = writeln!(out, "round {} {} id_p 0x{} txs [{}]", r.round, r.outcome, r.id_p, kinds.join(", "));
            }
            let _ = writeln!(out, "tx_count setup {} mpt {} reverted {}", rep.tx_count.setup, rep.tx_count.mpt, rep.tx_count.reverted);
            for a in rep.actors() {
                let who = a.index.map_or("executor".to_string(), |i| format!("party {i}"));
                let _ = writeln!(out, "{who} {} coins {} -> {}", a.behavior, a.coins_before, a.coins_after);
            }
            let _ = writeln!(out, "wrote {}", report_path.display());
            let _ = writeln!(out, "wrote {}", trace_path.display());
        }
    }
    rep.outcome.exit_code()
}
