//! Session configuration, full-flow orchestration and reports.
//!
//! The flow runs: parse, clock domains, X blocking, scan insertion, I/O
//! wrapping, random BIST with fault grading (coverage 1), observation
//! points, random BIST again on the new architecture, top-up ATPG
//! (coverage 2), timing checks and the signature session.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dft::{block_x_sources, emit_bist_ready, insert_observation_points, insert_scan, wrap_io, ScanArchitecture};
use crate::faultsim::{
    collapse, enumerate_faults, fault_simulate, EnumOptions, Fault, FaultList, FaultModel, FaultStatus, SimOptions,
};
use crate::netlist::{
    assign_clock_domains, find_x_sources, parse_bench, set_skew, ClockDomain, DomainId, DomainRule, Netlist,
    XSourceOptions,
};
use crate::odc::{Misr, Signature, SpaceCompactor};
use crate::simkernel::{
    check_x_reach, run_bist_session, BistStimulus, CaptureProgram, CaptureSchedule, DomainHw, SessionOptions, SimModel,
    StimulusBlock, Trace, SLOTS,
};
use crate::time::{self, Time};
use crate::timing::{check_paths, default_paths, TimingReport};
use crate::topup::{
    format_patterns, generate_top_up, select_observation_points, TopUpLimits, TopUpResult, TpiSelection,
};
use crate::tpg::{DomainTpg, PhaseShifter, Polynomial, Prpg, SpaceExpander};

pub use config::{
    DomainConfig, InjectConfig, MisrConfig, Ns, PrpgConfig, ReportPaths, ScheduleConfig, SessionConfig, SkewConfig,
    TopUpConfig,
};
pub use report::{
    area_overhead_estimate, dft_ge, duration, grouped, kilo, netlist_ge, BistReport, DomainSignature, Verdict, GE_FF,
    GE_GATE, GE_MUX,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Parse,
    Domains,
    XBlock,
    Scan,
    Hardware,
    Schedule,
    Random,
    Tpi,
    TopUp,
    Timing,
    Session,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Parse => "parse",
            Stage::Domains => "clock domains",
            Stage::XBlock => "x blocking",
            Stage::Scan => "scan insertion",
            Stage::Hardware => "bist hardware",
            Stage::Schedule => "capture schedule",
            Stage::Random => "random phase",
            Stage::Tpi => "test points",
            Stage::TopUp => "top-up atpg",
            Stage::Timing => "timing",
            Stage::Session => "bist session",
            Stage::Report => "report",
        })
    }
}

/// Whether a failure comes from the configuration, the design data or I/O.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Io,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{stage}: {message}")]
pub struct FlowError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl FlowError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl Into<String>) -> Self {
        FlowError {
            stage,
            kind,
            message: message.into(),
        }
    }
}

fn config_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> FlowError {
    move |e| FlowError::new(stage, ErrorKind::Config, e.to_string())
}

fn data_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> FlowError {
    move |e| FlowError::new(stage, ErrorKind::Data, e.to_string())
}

/// BIST-ready design plus its hardware and capture program.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub original: Netlist,
    pub netlist: Netlist,
    pub arch: ScanArchitecture,
    pub hw: Vec<DomainHw>,
    pub schedule: CaptureSchedule,
    pub program: CaptureProgram,
    pub blocked: usize,
}

pub fn parse_netlist(cfg: &SessionConfig) -> Result<Netlist, FlowError> {
    let path = cfg.resolve(&cfg.netlist);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| FlowError::new(Stage::Parse, ErrorKind::Data, format!("{}: {e}", path.display())))?;
    parse_bench(&text).map_err(|e| FlowError::new(Stage::Parse, ErrorKind::Data, format!("{}: {e}", path.display())))
}

fn declared_domains(cfg: &SessionConfig) -> Result<Vec<ClockDomain>, FlowError> {
    let mut domains: Vec<ClockDomain> = if cfg.domains.is_empty() {
        vec![ClockDomain::new(0, "clk", Time::from(10), 0)]
    } else {
        cfg.domains
            .iter()
            .enumerate()
            .map(|(i, d)| ClockDomain::new(i, d.name.clone(), d.period, d.capture_order.unwrap_or(i)))
            .collect()
    };
    for s in &cfg.skew {
        if s.a >= domains.len() || s.b >= domains.len() {
            return Err(FlowError::new(
                Stage::Config,
                ErrorKind::Config,
                format!("skew entry names undeclared domain {}", s.a.max(s.b)),
            ));
        }
        set_skew(&mut domains, s.a, s.b, s.skew);
    }
    Ok(domains)
}

/// Seed of the PRPG of `domain` when the config gives none: nonzero, fits
/// the register.
fn derived_seed(seed: u64, domain: DomainId, length: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ (domain as u64) << 40);
    let mask = if length >= 64 { !0 } else { (1u64 << length) - 1 };
    let s = rng.gen::<u64>() & mask;
    if s == 0 {
        1
    } else {
        s
    }
}

/// One PRPG, phase shifter, expander, optional compactor and MISR per
/// chained domain.
pub fn build_hw(cfg: &SessionConfig, arch: &ScanArchitecture) -> Result<Vec<DomainHw>, FlowError> {
    let err = config_err(Stage::Hardware);
    let min_sep = arch.max_chain_length();
    let mut out = Vec::new();
    for d in arch.domains() {
        let chains = arch.chains_of(d).count();
        let pc = cfg.prpg.get(d).cloned().unwrap_or_default();
        let poly = match &pc.polynomial {
            Some(e) => {
                let p = Polynomial::from_exponents(e).map_err(|e| err(&e))?;
                if p.degree() != pc.length {
                    return Err(err(&format!(
                        "domain {d}: PRPG polynomial {p} does not have degree {}",
                        pc.length
                    )));
                }
                p
            }
            None => Polynomial::primitive(pc.length)
                .ok_or_else(|| err(&format!("no built-in primitive polynomial of degree {}", pc.length)))?,
        };
        let seed = pc.seed.unwrap_or_else(|| derived_seed(cfg.seed, d, pc.length));
        let prpg = Prpg::new(poly, seed).map_err(|e| err(&e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(d as u64));
        let shifter = PhaseShifter::generate(&prpg, chains, min_sep, &mut rng).map_err(|e| err(&e))?;
        let tpg = DomainTpg::new(prpg, shifter, SpaceExpander::identity(chains)).map_err(|e| err(&e))?;
        let compactor = match cfg.compactor {
            Some(k) => Some(SpaceCompactor::round_robin(chains, k.clamp(1, chains)).map_err(|e| err(&e))?),
            None => None,
        };
        let outs = compactor.as_ref().map_or(chains, |c| c.outputs());
        let mc = cfg.misr.get(d).cloned().unwrap_or_default();
        let len = mc.length.unwrap_or(outs.max(19));
        let mpoly = match &mc.polynomial {
            Some(e) => Polynomial::from_exponents(e).map_err(|e| err(&e))?,
            None => Polynomial::default_for(len),
        };
        let mut misr = Misr::direct(mpoly, outs).map_err(|e| err(&format!("domain {d}: {e}")))?;
        if let Some(hex) = &mc.init {
            let sig = Signature::from_hex(misr.length, hex)
                .ok_or_else(|| err(&format!("domain {d}: bad MISR init `{hex}`")))?;
            misr = misr.with_state(sig).map_err(|e| err(&e))?;
        }
        out.push(DomainHw {
            domain: d,
            tpg,
            misr,
            compactor,
        });
    }
    Ok(out)
}

pub fn build_schedule(
    cfg: &SessionConfig,
    domains: &[ClockDomain],
    scheduled: &[DomainId],
) -> Result<CaptureSchedule, FlowError> {
    let mut s = CaptureSchedule::default_for(domains, scheduled);
    if let Some(sc) = &cfg.schedule {
        if let Some(v) = sc.d1 {
            s.d1 = v;
        }
        if let Some(v) = sc.d3 {
            s.d3 = v;
        }
        if let Some(v) = sc.d5 {
            s.d5 = v;
        }
        for (&d, &Ns(t)) in &sc.d2 {
            s.d2.insert(d, t);
        }
        if let Some(p) = &sc.pulses {
            s.pulses = p.clone();
        }
    }
    s.validate(domains, scheduled)
        .map_err(|e| config_err(Stage::Schedule)(&e))?;
    Ok(s)
}

/// Elaborate the design into a BIST-ready core with its hardware.
///
/// Every non-scan flip-flop output is blocked along with the X sources the
/// analysis finds.
pub fn prepare(cfg: &SessionConfig) -> Result<Prepared, FlowError> {
    let original = parse_netlist(cfg)?;
    let domains = declared_domains(cfg)?;
    let rules = if cfg.domain_rules.is_empty() {
        vec![DomainRule::new("*", 0)]
    } else {
        cfg.domain_rules.clone()
    };
    let mut n = assign_clock_domains(&original, domains, &rules).map_err(|e| config_err(Stage::Domains)(&e))?;
    for g in &cfg.non_scan {
        let k = n
            .update_matching(g, |ff| ff.scannable = false)
            .map_err(|e| config_err(Stage::Domains)(&e))?;
        if k == 0 {
            log::warn!("non-scan pattern `{g}` matches no flip-flop");
        }
    }
    for g in &cfg.reset {
        let k = n
            .update_matching(g, |ff| ff.has_reset = true)
            .map_err(|e| config_err(Stage::Domains)(&e))?;
        if k == 0 {
            log::warn!("reset pattern `{g}` matches no flip-flop");
        }
    }
    let mut xs = find_x_sources(
        &n,
        &XSourceOptions {
            seed: cfg.seed,
            ..Default::default()
        },
    );
    for ff in n.flip_flops() {
        if !ff.scannable {
            xs.insert(n.gate(ff.gate).output);
        }
    }
    let blocked = xs.len();
    let n = block_x_sources(&n, &xs).map_err(|e| data_err(Stage::XBlock)(&e))?;
    let domain_count = n.domains().len();
    if cfg.wrap_io && cfg.wrapper_domain >= domain_count {
        return Err(FlowError::new(
            Stage::Config,
            ErrorKind::Config,
            format!("wrapper domain {} is not declared", cfg.wrapper_domain),
        ));
    }
    let mut per = BTreeMap::new();
    for d in 0..domain_count {
        let has_ffs = n.flip_flops().iter().any(|ff| ff.scannable && ff.domain == Some(d));
        if has_ffs || (cfg.wrap_io && d == cfg.wrapper_domain) {
            per.insert(d, cfg.chains.get(d).copied().unwrap_or(1));
        }
    }
    let (n, arch) = insert_scan(&n, &per).map_err(|e| config_err(Stage::Scan)(&e))?;
    let (n, arch) = if cfg.wrap_io {
        wrap_io(&n, &arch, cfg.wrapper_domain).map_err(|e| config_err(Stage::Scan)(&e))?
    } else {
        (n, arch)
    };
    if arch.cells.is_empty() {
        return Err(FlowError::new(
            Stage::Scan,
            ErrorKind::Config,
            "design has no scan cells",
        ));
    }
    check_x_reach(&n, &arch, false).map_err(|e| data_err(Stage::XBlock)(&e))?;
    let hw = build_hw(cfg, &arch)?;
    let schedule = build_schedule(cfg, n.domains(), &arch.domains())?;
    let program = CaptureProgram::double(&schedule);
    Ok(Prepared {
        original,
        netlist: n,
        arch,
        hw,
        schedule,
        program,
        blocked,
    })
}

/// Collapsed stuck-at faults, plus transition faults when configured.
pub fn fault_universe(cfg: &SessionConfig, n: &Netlist) -> FaultList {
    let models: &[FaultModel] = if cfg.transition_faults {
        &[FaultModel::Sa0, FaultModel::Sa1, FaultModel::Str, FaultModel::Stf]
    } else {
        &FaultModel::STUCK
    };
    collapse(&enumerate_faults(n, models, EnumOptions::default()), n)
}

fn model_coverage(fl: &FaultList, exclude_untestable: bool, transition: bool) -> f64 {
    let mut total = 0usize;
    let mut detected = 0usize;
    for i in fl.representatives() {
        let f = &fl.faults[i];
        if f.model.is_transition() != transition {
            continue;
        }
        match f.status {
            FaultStatus::Detected(_) => {
                detected += 1;
                total += 1;
            }
            FaultStatus::Untestable if exclude_untestable => {}
            _ => total += 1,
        }
    }
    if total == 0 {
        100.0
    } else {
        100.0 * detected as f64 / total as f64
    }
}

/// Stuck-at coverage over collapsed faults.
pub fn stuck_coverage(fl: &FaultList, exclude_untestable: bool) -> f64 {
    model_coverage(fl, exclude_untestable, false)
}

pub fn transition_coverage(fl: &FaultList, exclude_untestable: bool) -> f64 {
    model_coverage(fl, exclude_untestable, true)
}

#[derive(Clone, Debug)]
pub struct RandomPhase {
    pub faults: FaultList,
    /// The last `tpi_sample` patterns, rounded up to whole blocks.
    pub sample: Vec<StimulusBlock>,
}

/// Grade `fl` against the `pattern_count` PRPG patterns of the session.
pub fn random_phase(cfg: &SessionConfig, prep: &Prepared, mut fl: FaultList) -> Result<RandomPhase, FlowError> {
    let err = data_err(Stage::Random);
    let model = SimModel::new(&prep.netlist, &prep.arch).map_err(|e| err(&e))?;
    let blocks = BistStimulus::new(&model, &prep.hw)
        .map_err(|e| err(&e))?
        .blocks(cfg.pattern_count);
    let opts = SimOptions {
        drop: true,
        exec: cfg.exec(),
        first_pattern: 0,
    };
    fault_simulate(&model, &prep.program, &blocks, &mut fl, &opts).map_err(|e| err(&e))?;
    let keep = cfg.tpi_sample.div_ceil(SLOTS).min(blocks.len());
    let sample = blocks[blocks.len() - keep..].to_vec();
    Ok(RandomPhase { faults: fl, sample })
}

/// Observation-point budget: `tpi_budget`, or a percentage of the flip-flops.
pub fn tpi_budget(cfg: &SessionConfig, ff_count: usize) -> Result<usize, FlowError> {
    match cfg.tpi_budget_percent {
        Some(p) if p.is_nan() || p < 0.0 => Err(FlowError::new(
            Stage::Config,
            ErrorKind::Config,
            format!("tpi_budget_percent {p} is negative"),
        )),
        Some(p) => Ok((p / 100.0 * ff_count as f64).ceil() as usize),
        None => Ok(cfg.tpi_budget),
    }
}

/// Pick observation points from the random phase and rebuild the design
/// around them.
pub fn tpi_phase(
    cfg: &SessionConfig,
    prep: &Prepared,
    random: &RandomPhase,
) -> Result<(Prepared, TpiSelection), FlowError> {
    let budget = tpi_budget(cfg, prep.original.flip_flops().len())?;
    let model = SimModel::new(&prep.netlist, &prep.arch).map_err(|e| data_err(Stage::Tpi)(&e))?;
    let sel = select_observation_points(
        &prep.netlist,
        &prep.arch,
        &model,
        &prep.program,
        &random.faults,
        &random.sample,
        budget,
        cfg.exec(),
    );
    let ins = insert_observation_points(&prep.netlist, &prep.arch, &sel.nets(), None)
        .map_err(|e| data_err(Stage::Tpi)(&e))?;
    let hw = build_hw(cfg, &ins.arch)?;
    let next = Prepared {
        netlist: ins.netlist,
        arch: ins.arch,
        hw,
        ..prep.clone()
    };
    Ok((next, sel))
}

pub fn topup_phase(cfg: &SessionConfig, prep: &Prepared, fl: &mut FaultList) -> Result<TopUpResult, FlowError> {
    let model = SimModel::new(&prep.netlist, &prep.arch).map_err(|e| data_err(Stage::TopUp)(&e))?;
    let limits = TopUpLimits {
        batch: cfg.topup.batch,
        backtrack_limit: cfg.topup.backtrack_limit,
        max_patterns: cfg.topup.max_patterns,
        seed: cfg.seed,
        exec: cfg.exec(),
        first_pattern: cfg.pattern_count as u64,
    };
    generate_top_up(&model, fl, &limits).map_err(|e| data_err(Stage::TopUp)(&e))
}

pub fn timing_phase(cfg: &SessionConfig, prep: &Prepared) -> Result<TimingReport, FlowError> {
    let domains = prep.netlist.domains();
    let paths = match &cfg.timing_paths {
        Some(p) => p.clone(),
        None => prep
            .arch
            .domains()
            .iter()
            .flat_map(|&d| default_paths(&domains[d]))
            .collect(),
    };
    check_paths(&paths, Some(&prep.schedule), domains).map_err(|e| config_err(Stage::Timing)(&e))
}

/// Resolve a fault named as in fault-list dumps.
pub fn find_fault(n: &Netlist, inj: &InjectConfig) -> Result<Fault, FlowError> {
    enumerate_faults(n, &[inj.model], EnumOptions::default())
        .faults
        .into_iter()
        .find(|f| f.site.describe(n) == inj.site)
        .ok_or_else(|| {
            FlowError::new(
                Stage::Config,
                ErrorKind::Config,
                format!("no fault site `{}`", inj.site),
            )
        })
}

/// Everything a flow run produces.
#[derive(Clone, Debug)]
pub struct FlowOutput {
    pub report: BistReport,
    pub prepared: Prepared,
    /// Final fault statuses.
    pub faults: FaultList,
    pub selection: TpiSelection,
    pub topup: TopUpResult,
    pub patterns: String,
    pub trace: Trace,
    pub timing: TimingReport,
    pub golden: Vec<(DomainId, Signature)>,
}

pub fn run_flow(cfg: &SessionConfig) -> Result<FlowOutput, FlowError> {
    let start = Instant::now();
    log::info!("flow start: {}", cfg.netlist.display());
    let first = prepare(cfg)?;
    log::info!(
        "bist-ready core: {} cells in {} chains, {} X source(s) blocked",
        first.arch.cells.len(),
        first.arch.chains.len(),
        first.blocked
    );
    let universe = fault_universe(cfg, &first.netlist);
    let r1 = random_phase(cfg, &first, universe.clone())?;
    let fc1 = stuck_coverage(&r1.faults, cfg.exclude_untestable);
    log::info!("fault coverage 1: {fc1:.2}%");
    let (prep, selection) = tpi_phase(cfg, &first, &r1)?;
    log::info!("{} observation point(s) inserted", selection.points.len());
    let mut faults = random_phase(cfg, &prep, universe)?.faults;
    log::info!(
        "random patterns with test points: {:.2}%",
        stuck_coverage(&faults, cfg.exclude_untestable)
    );
    if cfg.transition_faults {
        log::info!(
            "transition coverage: {:.2}%",
            transition_coverage(&faults, cfg.exclude_untestable)
        );
    }
    let topup = if cfg.topup.enabled {
        topup_phase(cfg, &prep, &mut faults)?
    } else {
        TopUpResult::default()
    };
    let fc2 = stuck_coverage(&faults, cfg.exclude_untestable);
    log::info!(
        "fault coverage 2: {fc2:.2}% ({} top-up, {} untestable, {} aborted)",
        topup.patterns.len(),
        topup.untestable,
        topup.aborted
    );
    if fc2 < fc1 {
        log::warn!("fault coverage 2 ({fc2:.2}%) is below fault coverage 1 ({fc1:.2}%)");
    }
    let timing = timing_phase(cfg, &prep)?;
    if !timing.is_clean() {
        log::warn!("timing checks report unresolved violations");
    }
    let session = |fault: Option<Fault>| {
        let opts = SessionOptions {
            exec: cfg.exec(),
            fault,
            trace_capacity: cfg.trace_windows,
        };
        run_bist_session(
            &prep.netlist,
            &prep.arch,
            &prep.hw,
            &prep.program,
            cfg.pattern_count,
            &opts,
        )
        .map_err(|e| data_err(Stage::Session)(&e))
    };
    let golden = session(None)?;
    let observed = match &cfg.inject_fault {
        Some(inj) => session(Some(find_fault(&prep.netlist, inj)?))?,
        None => golden.clone(),
    };
    let result = if observed.signatures == golden.signatures {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let domains = prep.netlist.domains();
    let model = SimModel::new(&prep.netlist, &prep.arch).map_err(|e| data_err(Stage::Report)(&e))?;
    let patterns = format_patterns(&model, &topup.patterns);
    let report = BistReport {
        gate_count: prep.original.logic_gate_count(),
        ff_count: prep.original.flip_flops().len(),
        chain_count: prep.arch.chains.len(),
        max_chain_length: prep.arch.max_chain_length(),
        domain_count: domains.len(),
        frequency_mhz: domains
            .iter()
            .map(|d| 1000.0 / time::to_f64(d.period))
            .fold(0.0, f64::max),
        prpg_count: prep.hw.len(),
        prpg_length: prep.hw.iter().map(|h| h.tpg.prpg.length).collect(),
        misr_count: prep.hw.len(),
        misr_lengths: prep.hw.iter().map(|h| h.misr.length).collect(),
        test_point_count: selection.points.len(),
        random_pattern_count: cfg.pattern_count,
        fault_coverage_1: round2(fc1),
        cpu_time: start.elapsed().as_secs_f64(),
        area_overhead_estimate: area_overhead_estimate(&prep.original, &prep.netlist, &prep.arch, &prep.hw),
        top_up_pattern_count: topup.patterns.len(),
        fault_coverage_2: round2(fc2),
        signatures: observed
            .signatures
            .iter()
            .map(|(d, s)| DomainSignature {
                domain: domains[*d].name.clone(),
                misr: s.to_hex(),
            })
            .collect(),
        result,
    };
    log::info!("flow finish: {:?}", report.result);
    Ok(FlowOutput {
        report,
        prepared: prep,
        faults,
        selection,
        topup,
        patterns,
        trace: observed.trace,
        timing,
        golden: golden.signatures,
    })
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Write every report file the config names.
pub fn write_reports(cfg: &SessionConfig, out: &FlowOutput) -> Result<(), FlowError> {
    let r = &cfg.reports;
    let p = &out.prepared;
    type Render<'a> = Box<dyn Fn() -> String + 'a>;
    let files: [(&Option<std::path::PathBuf>, Render); 8] = [
        (&r.text, Box::new(|| out.report.to_text())),
        (&r.json, Box::new(|| out.report.to_json())),
        (&r.faults, Box::new(|| out.faults.dump(&p.netlist))),
        (&r.patterns, Box::new(|| out.patterns.clone())),
        (&r.trace, Box::new(|| out.trace.dump())),
        (&r.bench, Box::new(|| emit_bist_ready(&p.netlist, &p.arch))),
        (&r.chains, Box::new(|| p.arch.chain_description())),
        (&r.timing, Box::new(|| out.timing.to_text())),
    ];
    for (path, render) in files {
        if let Some(path) = path {
            let path = cfg.resolve(path);
            std::fs::write(&path, render())
                .map_err(|e| FlowError::new(Stage::Report, ErrorKind::Io, format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}
