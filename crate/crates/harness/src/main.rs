use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use byzreconf::simnet::{decode_trace, trace_hash};
use byzreconf_harness::runner::{self, RunOutput};
use byzreconf_harness::scenario::Scenario;
use byzreconf_harness::{attacks, checker, sweep};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "byzreconf", about = "Run, sweep, attack and check simulated byzreconf clusters")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario under one seed and check its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_steps: Option<u64>,
        /// Write the trace here (JSON lines).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run a scenario over a range of seeds.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// `A..B`; defaults to the scenario's `seeds` directive.
        #[arg(long, value_parser = parse_range)]
        seeds: Option<Range<u64>>,
    },
    /// Run generated scenarios (dbla, reconfig, maxreg, mixed, access).
    Generate {
        #[arg(long)]
        kind: String,
        #[arg(long, value_parser = parse_range, default_value = "0..100")]
        seeds: Range<u64>,
        /// Print the scenario of the first seed instead of running.
        #[arg(long)]
        show: bool,
    },
    /// Run a scripted attack.
    Attack {
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "dbla")]
        object: String,
        /// Same schedule without the adversary.
        #[arg(long)]
        control: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Every delivery order of two conflicting access requests.
    AcOrders,
    /// Check a saved trace offline.
    Check {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Re-run a saved trace from its header and compare hashes.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn parse_range(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.parse().map_err(|e| format!("{e}"))?;
    let b: u64 = b.parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err("empty range".into());
    }
    Ok(a..b)
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Scenario::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_trace(path: &Path) -> Result<(serde_json::Value, Vec<byzreconf::simnet::ScenarioEvent>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    decode_trace(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(mut out: RunOutput, trace: Option<&Path>, json: bool) -> Result<bool, String> {
    if let Some(p) = trace {
        fs::write(p, out.encode()).map_err(|e| format!("{}: {e}", p.display()))?;
        out.report.trace_path = Some(p.display().to_string());
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&out.report).expect("report serialises"));
    } else {
        println!("{}", out.report);
    }
    Ok(out.report.passed())
}

fn exec(cmd: Cmd) -> Result<bool, String> {
    match cmd {
        Cmd::Run { scenario, seed, max_steps, trace, json } => {
            let mut scn = load_scenario(&scenario)?;
            if let Some(m) = max_steps {
                scn.max_steps = m;
            }
            let out = runner::run(&scn, seed).map_err(|e| e.to_string())?;
            emit(out, trace.as_deref(), json)
        }
        Cmd::Sweep { scenario, seeds } => {
            let scn = load_scenario(&scenario)?;
            scn.validate().map_err(|e| e.to_string())?;
            let summary = sweep::sweep_scenario(&scn, seeds.unwrap_or_else(|| scn.seeds.clone()));
            println!("{summary}");
            Ok(summary.ok())
        }
        Cmd::Generate { kind, seeds, show } => {
            if show {
                let scn = sweep::generate(&kind, seeds.start).ok_or(format!("unknown generator `{kind}`"))?;
                print!("{}", scn.to_text());
                return Ok(true);
            }
            if !sweep::GENERATORS.contains(&kind.as_str()) {
                return Err(format!("unknown generator `{kind}` (known: {})", sweep::GENERATORS.join(", ")));
            }
            let summary = sweep::sweep(&format!("generated {kind}"), seeds, |s| sweep::run_generated(&kind, s));
            println!("{summary}");
            Ok(summary.ok())
        }
        Cmd::Attack { name, object, control, seed, trace } => {
            let out = attacks::run(&name, &object, control, seed).map_err(|e| e.to_string())?;
            emit(out, trace.as_deref(), false)
        }
        Cmd::AcOrders => {
            let summary = sweep::ac_exhaustive();
            println!("{summary}");
            Ok(summary.ok())
        }
        Cmd::Check { trace } => {
            let (header, events) = load_trace(&trace)?;
            let report = checker::check(&header, &events);
            println!("{report}");
            Ok(report.passed())
        }
        Cmd::Replay { trace } => {
            let (header, events) = load_trace(&trace)?;
            let recorded = trace_hash(&header, &events);
            let out = runner::replay(&header).map_err(|e| e.to_string())?;
            let same = out.report.trace_hash == recorded;
            println!(
                "recorded {recorded}\nreplayed {}\n{}",
                out.report.trace_hash,
                if same { "identical" } else { "DIFFERENT" }
            );
            Ok(same)
        }
    }
}

fn main() -> ExitCode {
    match exec(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
