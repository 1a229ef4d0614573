//! `lbist`: STUMPS logic BIST builder and simulator.
//!
//! Exit status: 0 success, 1 signature mismatch or unresolved timing
//! violation, 64 usage error, 65 bad design data, 74 I/O error, 78 bad
//! configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lbist::faultsim::FaultStatus;
use lbist::flow::{
    fault_universe, prepare, random_phase, run_flow, stuck_coverage, timing_phase, topup_phase, tpi_phase,
    transition_coverage, write_reports, ErrorKind, FlowError, Prepared, SessionConfig, Stage, Verdict,
};
use lbist::netlist::parse_bench;
use lbist::simkernel::SimModel;
use lbist::topup::format_patterns;
use serde_json::json;

const EXIT_MISMATCH: u8 = 1;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_IO: u8 = 74;
const EXIT_CONFIG: u8 = 78;

#[derive(Parser)]
#[command(name = "lbist", version, about = "STUMPS logic BIST builder and simulator")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Emit {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a .bench netlist and print its statistics.
    Parse {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        emit: Emit,
    },
    /// Build the BIST-ready core and print its scan chains.
    Dft {
        #[arg(long)]
        config: PathBuf,
        /// Write the BIST-ready netlist here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        emit: Emit,
    },
    /// Run the full flow and report; exits 1 when the signature mismatches.
    Bist {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        emit: Emit,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grade the collapsed fault list against the random BIST patterns.
    Faultsim {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured pattern count.
        #[arg(long)]
        patterns: Option<usize>,
        /// Write the fault list with statuses here.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        emit: Emit,
    },
    /// Select observation points from the random-pattern results.
    Tpi {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        emit: Emit,
    },
    /// Generate top-up patterns for the faults random patterns leave.
    Topup {
        #[arg(long)]
        config: PathBuf,
        /// Write the pattern file here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        emit: Emit,
    },
    /// Check shift-path timing and capture margins.
    Timing {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        emit: Emit,
    },
}

enum Failure {
    Flow(FlowError),
    Io(PathBuf, std::io::Error),
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        Failure::Flow(e)
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Flow(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Io => EXIT_IO,
            })
        }
        Err(Failure::Io(path, e)) => {
            eprintln!("error: {}: {e}", path.display());
            ExitCode::from(EXIT_IO)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Parse { file, emit } => parse(&file, emit),
        Command::Dft { config, out, emit } => dft(&load(&config)?, out.as_deref(), emit),
        Command::Bist { config, emit, out } => bist(&load(&config)?, emit, out.as_deref()),
        Command::Faultsim {
            config,
            patterns,
            dump,
            emit,
        } => {
            let mut cfg = load(&config)?;
            if let Some(p) = patterns {
                cfg.pattern_count = p;
            }
            faultsim(&cfg, dump.as_deref(), emit)
        }
        Command::Tpi { config, emit } => tpi(&load(&config)?, emit),
        Command::Topup { config, out, emit } => topup(&load(&config)?, out.as_deref(), emit),
        Command::Timing { config, emit } => timing(&load(&config)?, emit),
    }
}

fn load(path: &Path) -> Result<SessionConfig, Failure> {
    Ok(SessionConfig::load(path)?)
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(p.to_path_buf(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value");
    s.push('\n');
    s
}

fn parse(file: &Path, emit: Emit) -> Outcome {
    let text = std::fs::read_to_string(file).map_err(|e| Failure::Io(file.to_path_buf(), e))?;
    let n = parse_bench(&text)
        .map_err(|e| FlowError::new(Stage::Parse, ErrorKind::Data, format!("{}: {e}", file.display())))?;
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for g in n.gates() {
        *kinds.entry(g.kind.keyword()).or_default() += 1;
    }
    let stats = json!({
        "inputs": n.primary_inputs().len(),
        "outputs": n.primary_outputs().len(),
        "gates": n.logic_gate_count(),
        "flip_flops": n.flip_flops().len(),
        "nets": n.net_count(),
        "gate_kinds": kinds,
    });
    match emit {
        Emit::Json => print!("{}", pretty(&stats)),
        Emit::Text => {
            println!("inputs      {}", n.primary_inputs().len());
            println!("outputs     {}", n.primary_outputs().len());
            println!("gates       {}", n.logic_gate_count());
            println!("flip-flops  {}", n.flip_flops().len());
            println!("nets        {}", n.net_count());
            for (k, c) in kinds {
                println!("  {k:<10}{c}");
            }
        }
    }
    Ok(0)
}

fn dft(cfg: &SessionConfig, out: Option<&Path>, emit: Emit) -> Outcome {
    let prep = prepare(cfg)?;
    if let Some(p) = out {
        write_or_print(Some(p), &lbist::dft::emit_bist_ready(&prep.netlist, &prep.arch))?;
    }
    match emit {
        Emit::Text => {
            print!("{}", prep.arch.chain_description());
            println!("x sources blocked: {}", prep.blocked);
        }
        Emit::Json => {
            let chains: Vec<_> = prep
                .arch
                .chains
                .iter()
                .map(|c| {
                    json!({
                        "domain": prep.netlist.domains()[c.domain].name,
                        "cells": c.cells.iter().map(|&i| prep.arch.cells[i].name.clone()).collect::<Vec<_>>(),
                    })
                })
                .collect();
            print!(
                "{}",
                pretty(&json!({ "chains": chains, "x_sources_blocked": prep.blocked }))
            );
        }
    }
    Ok(0)
}

fn bist(cfg: &SessionConfig, emit: Emit, out: Option<&Path>) -> Outcome {
    let res = run_flow(cfg)?;
    write_reports(cfg, &res)?;
    let text = match emit {
        Emit::Text => res.report.to_text(),
        Emit::Json => res.report.to_json(),
    };
    write_or_print(out, &text)?;
    Ok(match res.report.result {
        Verdict::Pass => 0,
        Verdict::Fail => EXIT_MISMATCH,
    })
}

fn faultsim(cfg: &SessionConfig, dump: Option<&Path>, emit: Emit) -> Outcome {
    let prep = prepare(cfg)?;
    let fl = fault_universe(cfg, &prep.netlist);
    let r = random_phase(cfg, &prep, fl)?;
    if let Some(p) = dump {
        write_or_print(Some(p), &r.faults.dump(&prep.netlist))?;
    }
    let c = r.faults.counts();
    let stuck = stuck_coverage(&r.faults, cfg.exclude_untestable);
    let trans = cfg
        .transition_faults
        .then(|| transition_coverage(&r.faults, cfg.exclude_untestable));
    match emit {
        Emit::Json => print!(
            "{}",
            pretty(&json!({
                "patterns": cfg.pattern_count,
                "faults": c.total,
                "collapsed": c.collapsed,
                "detected": c.detected,
                "stuck_coverage": stuck,
                "transition_coverage": trans,
            }))
        ),
        Emit::Text => {
            println!("patterns            {}", cfg.pattern_count);
            println!("faults              {}", c.total);
            println!("collapsed           {}", c.collapsed);
            println!("detected            {}", c.detected);
            println!("stuck-at coverage   {stuck:.2}%");
            if let Some(t) = trans {
                println!("transition coverage {t:.2}%");
            }
        }
    }
    Ok(0)
}

fn tpi(cfg: &SessionConfig, emit: Emit) -> Outcome {
    let prep = prepare(cfg)?;
    let r = random_phase(cfg, &prep, fault_universe(cfg, &prep.netlist))?;
    let (_, sel) = tpi_phase(cfg, &prep, &r)?;
    let n = &prep.netlist;
    match emit {
        Emit::Json => {
            let points: Vec<_> = sel
                .points
                .iter()
                .map(|p| json!({ "net": n.net_name(p.net), "gain": p.gain }))
                .collect();
            print!("{}", pretty(&json!({ "points": points })));
        }
        Emit::Text => {
            for p in &sel.points {
                println!("{:<24}{}", n.net_name(p.net), p.gain);
            }
            println!("{} observation point(s)", sel.points.len());
        }
    }
    Ok(0)
}

fn topup_stage(
    cfg: &SessionConfig,
) -> Result<(Prepared, lbist::faultsim::FaultList, lbist::topup::TopUpResult), Failure> {
    let first = prepare(cfg)?;
    let universe = fault_universe(cfg, &first.netlist);
    let r = random_phase(cfg, &first, universe.clone())?;
    let (prep, _) = tpi_phase(cfg, &first, &r)?;
    let mut faults = random_phase(cfg, &prep, universe)?.faults;
    let res = topup_phase(cfg, &prep, &mut faults)?;
    Ok((prep, faults, res))
}

fn topup(cfg: &SessionConfig, out: Option<&Path>, emit: Emit) -> Outcome {
    let (prep, faults, res) = topup_stage(cfg)?;
    let model = SimModel::new(&prep.netlist, &prep.arch)
        .map_err(|e| FlowError::new(Stage::TopUp, ErrorKind::Data, e.to_string()))?;
    let patterns = format_patterns(&model, &res.patterns);
    let open = faults
        .representatives()
        .filter(|&i| !faults.faults[i].model.is_transition())
        .filter(|&i| {
            !matches!(
                faults.faults[i].status,
                FaultStatus::Detected(_) | FaultStatus::Untestable
            )
        })
        .count();
    match emit {
        Emit::Text => write_or_print(out, &patterns)?,
        Emit::Json => {
            if let Some(p) = out {
                write_or_print(Some(p), &patterns)?;
            }
            let pats: Vec<_> = patterns
                .lines()
                .zip(&res.patterns)
                .map(|(l, p)| json!({ "pattern": l, "detects": p.detects.len() }))
                .collect();
            print!(
                "{}",
                pretty(&json!({
                    "patterns": pats,
                    "untestable": res.untestable,
                    "aborted": res.aborted,
                    "open": open,
                    "coverage": stuck_coverage(&faults, cfg.exclude_untestable),
                }))
            );
        }
    }
    if emit == Emit::Text {
        eprintln!(
            "{} top-up pattern(s), {} untestable, {} aborted, {} open",
            res.patterns.len(),
            res.untestable,
            res.aborted,
            open
        );
    }
    Ok(0)
}

fn timing(cfg: &SessionConfig, emit: Emit) -> Outcome {
    let prep = prepare(cfg)?;
    let rep = timing_phase(cfg, &prep)?;
    match emit {
        Emit::Text => print!("{}", rep.to_text()),
        Emit::Json => print!("{}", pretty(&serde_json::to_value(&rep).expect("serializable"))),
    }
    Ok(if rep.is_clean() { 0 } else { EXIT_MISMATCH })
}
