//! Acceptance criteria, one line each. Run with `cargo test --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use lbist::dft::{insert_observation_points, insert_scan, wrap_io, ScanArchitecture};
use lbist::faultsim::{
    collapse, enumerate_faults, fault_simulate, serial_fault_simulate, EnumOptions, Fault, FaultList, FaultModel,
    FaultStatus, SimOptions, Site,
};
use lbist::flow::{
    fault_universe, prepare, random_phase, run_flow, stuck_coverage, tpi_phase, ErrorKind, SessionConfig, SkewConfig,
    Stage,
};
use lbist::netlist::{
    assign_clock_domains, parse_bench, random_netlist, set_skew, ClockDomain, DomainRule, GateKind, Netlist,
    NetlistBuilder, RandomSpec, Sink,
};
use lbist::odc::{signature_of, Misr};
use lbist::par::Exec;
use lbist::simkernel::{
    run_bist_session, CaptureProgram, CaptureSchedule, DomainHw, SessionOptions, SimModel, StimulusBlock,
};
use lbist::time::Time;
use lbist::timing::{apply_retiming, classify, discipline_applies, PathKind, ShiftPath};
use lbist::topup::{extend_blocks, select_observation_points};
use lbist::tpg::{lfsr_step, DomainTpg, PhaseShifter, Polynomial, Prpg, SpaceExpander};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn bench_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../benchmarks")
        .join(name)
}

fn load(name: &str) -> Netlist {
    parse_bench(&std::fs::read_to_string(bench_path(name)).unwrap()).unwrap()
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Flip-flop k in domain k % domains, `chains` chains per domain, I/O wrapped.
fn scanned(n: &Netlist, domains: usize, chains: usize) -> (Netlist, ScanArchitecture) {
    let doms: Vec<ClockDomain> = (0..domains)
        .map(|d| ClockDomain::new(d, format!("clk{d}"), Time::from(10 - 2 * d as i64), d))
        .collect();
    let rules: Vec<DomainRule> = n
        .flip_flops()
        .iter()
        .enumerate()
        .map(|(k, ff)| DomainRule::new(n.ff_name(ff), k % domains))
        .chain(std::iter::once(DomainRule::new("*", 0)))
        .collect();
    let n = assign_clock_domains(n, doms, &rules).unwrap();
    let per: BTreeMap<_, _> = (0..domains).map(|d| (d, chains)).collect();
    let (n, arch) = insert_scan(&n, &per).unwrap();
    wrap_io(&n, &arch, 0).unwrap()
}

fn random_patterns(model: &SimModel, count: usize, seed: u64) -> Vec<(Vec<bool>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (
                (0..model.cell_count()).map(|_| rng.gen()).collect(),
                (0..model.free_inputs().len()).map(|_| rng.gen()).collect(),
            )
        })
        .collect()
}

fn detected_set(fl: &FaultList) -> BTreeSet<usize> {
    (0..fl.faults.len())
        .filter(|&i| matches!(fl.faults[i].status, FaultStatus::Detected(_)))
        .collect()
}

fn lfsr_maximality() -> Verdict {
    let mut t19 = Duration::ZERO;
    for d in 4..=19 {
        let start = Instant::now();
        let p = Prpg::new(Polynomial::primitive(d).unwrap(), 1).unwrap();
        let mut q = lfsr_step(&p);
        let mut k: u64 = 1;
        while q.state != p.state {
            if q.state == 0 {
                return Err(format!("degree {d} reached the zero state"));
            }
            q.advance();
            k += 1;
        }
        if k != (1 << d) - 1 {
            return Err(format!("degree {d}: period {k}, expected {}", (1u64 << d) - 1));
        }
        if d == 19 {
            t19 = start.elapsed();
        }
    }
    check(
        t19 < Duration::from_secs(5),
        format!(
            "degrees 4-19 maximal; degree 19 cycle of 524287 in {:.3}s (limit 5s)",
            t19.as_secs_f64()
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut designs: Vec<(String, Netlist, ScanArchitecture)> = vec![
        {
            let (n, a) = scanned(&load("c17.bench"), 1, 1);
            ("c17".into(), n, a)
        },
        {
            let (n, a) = scanned(&load("s27.bench"), 2, 1);
            ("s27".into(), n, a)
        },
    ];
    for seed in [11u64, 12, 13] {
        let spec = RandomSpec {
            inputs: 5,
            outputs: 3,
            gates: 45,
            flip_flops: 8,
            max_fanin: 3,
        };
        let n = random_netlist(&spec, seed);
        assert!(n.gates().len() <= 60);
        let (n, a) = scanned(&n, 2, 2);
        designs.push((format!("random#{seed}"), n, a));
    }
    let mut compared = 0;
    for (name, n, arch) in &designs {
        let model = SimModel::new(n, arch).unwrap();
        let sched = CaptureSchedule::default_for(n.domains(), &arch.domains());
        let prog = CaptureProgram::double(&sched);
        let pats = random_patterns(&model, 64, 7);
        let blocks = StimulusBlock::pack(&model, &pats);
        for (mode, models) in [
            ("stuck", &FaultModel::STUCK[..]),
            ("transition", &FaultModel::TRANSITION[..]),
        ] {
            let fl = enumerate_faults(n, models, EnumOptions::default());
            let serial = serial_fault_simulate(n, arch, &prog, &pats, &fl);
            for exec in [Exec::Sequential, Exec::Parallel] {
                let mut par = fl.clone();
                let opts = SimOptions {
                    drop: false,
                    exec,
                    first_pattern: 0,
                };
                fault_simulate(&model, &prog, &blocks, &mut par, &opts).unwrap();
                if detected_set(&par) != detected_set(&serial) {
                    return Err(format!("{name} {mode} {exec:?}: detected sets differ"));
                }
                compared += 1;
            }
            if mode == "stuck" && detected_set(&serial).is_empty() {
                return Err(format!("{name}: nothing detected"));
            }
        }
    }
    Ok(format!(
        "{} designs (c17, s27, 3 random), stuck and transition, 64 patterns: {compared} identical detected sets",
        designs.len()
    ))
}

fn c17_exhaustive() -> Verdict {
    let n = load("c17.bench");
    let arch = insert_scan(&n, &BTreeMap::new()).unwrap().1;
    let model = SimModel::new(&n, &arch).unwrap();
    let prog = CaptureProgram::single(0);
    let k = model.free_inputs().len();
    let pats: Vec<(Vec<bool>, Vec<bool>)> = (0..1u64 << k)
        .map(|v| (Vec::new(), (0..k).map(|i| v >> i & 1 == 1).collect()))
        .collect();
    let all = enumerate_faults(&n, &FaultModel::STUCK, EnumOptions::default());
    let mut fl = collapse(&all, &n);
    fault_simulate(
        &model,
        &prog,
        &StimulusBlock::pack(&model, &pats),
        &mut fl,
        &SimOptions::default(),
    )
    .unwrap();
    let cov = stuck_coverage(&fl, false);

    // gate-local oracle: faults on one gate's pins and output are equivalent
    // when their detection sets over every local input vector coincide
    let mut rep: Vec<usize> = (0..all.faults.len()).collect();
    fn root(rep: &mut [usize], mut i: usize) -> usize {
        while rep[i] != i {
            rep[i] = rep[rep[i]];
            i = rep[i];
        }
        i
    }
    for (gid, g) in n.gates().iter().enumerate() {
        let k = g.inputs.len();
        let pin_site = |pin: usize| {
            let net = g.inputs[pin];
            if n.fanout(net).len() > 1 {
                Site::Branch {
                    net,
                    sink: Sink::Gate { gate: gid, pin },
                }
            } else {
                Site::Stem(net)
            }
        };
        let eval = |v: u64, pin: Option<usize>, stuck: bool| {
            let ins = (0..k).map(|i| {
                let bit = if Some(i) == pin { stuck } else { v >> i & 1 == 1 };
                if bit {
                    !0u64
                } else {
                    0
                }
            });
            g.kind.eval_word(ins) & 1 == 1
        };
        let mut local: Vec<(usize, u64)> = Vec::new();
        for (pin, stuck) in (0..=k).flat_map(|p| [(p, false), (p, true)]) {
            let (site, model) = if pin == k {
                (
                    Site::Stem(g.output),
                    if stuck { FaultModel::Sa1 } else { FaultModel::Sa0 },
                )
            } else {
                (pin_site(pin), if stuck { FaultModel::Sa1 } else { FaultModel::Sa0 })
            };
            let set = (0..1u64 << k).fold(0u64, |m, v| {
                let good = eval(v, None, false);
                let bad = if pin == k { stuck } else { eval(v, Some(pin), stuck) };
                m | ((good != bad) as u64) << v
            });
            local.push((all.find(site, model).unwrap(), set));
        }
        for x in 0..local.len() {
            for y in x + 1..local.len() {
                if local[x].1 == local[y].1 {
                    let (a, b) = (root(&mut rep, local[x].0), root(&mut rep, local[y].0));
                    rep[a] = b;
                }
            }
        }
    }
    let classes: BTreeSet<usize> = (0..rep.len()).map(|i| root(&mut rep, i)).collect();
    let collapsed = fl.counts().collapsed;
    let agree = (0..rep.len()).all(|i| {
        (0..rep.len())
            .all(|j| (root(&mut rep, i) == root(&mut rep, j)) == (fl.faults[i].class_rep == fl.faults[j].class_rep))
    });

    // whole-circuit detection sets, reported for reference
    let mut sets = vec![0u64; all.faults.len()];
    for (p, pat) in pats.iter().enumerate() {
        let r = serial_fault_simulate(&n, &arch, &prog, std::slice::from_ref(pat), &all);
        for i in detected_set(&r) {
            sets[i] |= 1 << p;
        }
    }
    let functional: BTreeSet<u64> = sets.iter().copied().collect();
    check(
        format!("{cov:.2}") == "100.00" && collapsed == classes.len() && agree,
        format!(
            "coverage {cov:.2}% over {collapsed} collapsed faults; gate-local detection-set oracle: {} classes, same partition: {agree} ({} whole-circuit detection-set classes)",
            classes.len(),
            functional.len()
        ),
    )
}

fn misr_sensitivity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let m16 = Misr::direct(Polynomial::primitive(16).unwrap(), 4).unwrap();
    let trials = 2000;
    let mut aliases = 0;
    for _ in 0..trials {
        let len = rng.gen_range(20..200);
        let stream: Vec<Vec<bool>> = (0..len).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let mut bad = stream.clone();
        let (t, b) = (rng.gen_range(0..len), rng.gen_range(0..4));
        bad[t][b] = !bad[t][b];
        if signature_of(&stream, &m16).unwrap() == signature_of(&bad, &m16).unwrap() {
            aliases += 1;
        }
    }
    let m8 = Misr::direct(Polynomial::primitive(8).unwrap(), 4).unwrap();
    let pairs = 40_000u32;
    let mut hits = 0u32;
    for _ in 0..pairs {
        let mut draw = || -> Vec<Vec<bool>> { (0..32).map(|_| (0..4).map(|_| rng.gen()).collect()).collect() };
        let (a, b) = (draw(), draw());
        if signature_of(&a, &m8).unwrap() == signature_of(&b, &m8).unwrap() {
            hits += 1;
        }
    }
    let p = 1.0 / 256.0;
    let mean = pairs as f64 * p;
    let sigma = (pairs as f64 * p * (1.0 - p)).sqrt();
    let z = (hits as f64 - mean) / sigma;
    check(
        aliases <= 1 && z.abs() <= 3.0,
        format!(
            "degree 16: {aliases} alias(es) in {trials} single-flip trials (limit 1); m=8: {hits} collisions in {pairs} pairs, expected {mean:.1}, z = {z:.2} (limit 3)"
        ),
    )
}

fn flow_trend() -> Verdict {
    let mut cfg = SessionConfig::new(bench_path("s13207r.bench"));
    cfg.pattern_count = 20_000;
    cfg.tpi_budget_percent = Some(1.0);
    let start = Instant::now();
    let out = run_flow(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let r = &out.report;

    // replay the random phases, then credit each top-up pattern independently
    let first = prepare(&cfg).unwrap();
    let universe = fault_universe(&cfg, &first.netlist);
    let r1 = random_phase(&cfg, &first, universe.clone()).unwrap();
    let (prep, _) = tpi_phase(&cfg, &first, &r1).unwrap();
    let mut open = random_phase(&cfg, &prep, universe).unwrap().faults;
    let prog = CaptureProgram::single(prep.netlist.domains().len());
    let mut silent = 0;
    for p in &out.topup.patterns {
        let pat = [(p.cells.clone(), p.pis.clone())];
        let after = serial_fault_simulate(&prep.netlist, &prep.arch, &prog, &pat, &open);
        let new = detected_set(&after).len() - detected_set(&open).len();
        if new == 0 {
            silent += 1;
        }
        open = after;
    }
    check(
        r.fault_coverage_2 > r.fault_coverage_1 && silent == 0 && elapsed < Duration::from_secs(600),
        format!(
            "s13207r ({} FFs), 20K patterns, {} test points, {} top-up: FC1 {:.2}% -> FC2 {:.2}%; top-up patterns without a new detection: {silent}; {:.1}s (limit 600s)",
            r.ff_count,
            r.test_point_count,
            r.top_up_pattern_count,
            r.fault_coverage_1,
            r.fault_coverage_2,
            elapsed.as_secs_f64()
        ),
    )
}

fn twin_masked_tpi() -> Verdict {
    let n = NetlistBuilder::new()
        .input("a")
        .input("b")
        .input("c")
        .input("e")
        .input("f")
        .gate(GateKind::And, "p", &["a", "b"])
        .gate(GateKind::And, "q", &["c", "e"])
        .gate(GateKind::Xor, "d", &["p", "q"])
        .gate(GateKind::Not, "fn", &["f"])
        .gate(GateKind::And, "k", &["f", "fn"])
        .gate(GateKind::And, "z", &["d", "k"])
        .gate(GateKind::Dff, "r", &["z"])
        .output("r")
        .clone()
        .build()
        .unwrap();
    let doms = vec![ClockDomain::new(0, "clk", Time::from(10), 0)];
    let n = assign_clock_domains(&n, doms, &[DomainRule::new("*", 0)]).unwrap();
    let (n, arch) = insert_scan(&n, &BTreeMap::from([(0, 1)])).unwrap();
    let model = SimModel::new(&n, &arch).unwrap();
    let prog = CaptureProgram::single(1);
    let sample = StimulusBlock::pack(&model, &random_patterns(&model, 128, 5));
    let mut fl = collapse(&enumerate_faults(&n, &FaultModel::STUCK, EnumOptions::default()), &n);
    fault_simulate(&model, &prog, &sample, &mut fl, &SimOptions::default()).unwrap();
    let net = |s: &str| n.net_id(s).unwrap();
    let p0 = fl.find(Site::Stem(net("p")), FaultModel::Sa0).unwrap();
    let q0 = fl.find(Site::Stem(net("q")), FaultModel::Sa0).unwrap();
    let open = |f: &FaultList, i: usize| f.faults[f.faults[i].class_rep].status.is_open();
    if !open(&fl, p0) || !open(&fl, q0) {
        return Err("twin faults detected before insertion".into());
    }
    let sel = select_observation_points(&n, &arch, &model, &prog, &fl, &sample, 1, Exec::Sequential);
    let ins = insert_observation_points(&n, &arch, &sel.nets(), None).unwrap();
    let m2 = SimModel::new(&ins.netlist, &ins.arch).unwrap();
    let mut f2 = fl.clone();
    fault_simulate(
        &m2,
        &prog,
        &extend_blocks(&sample, m2.cell_count()),
        &mut f2,
        &SimOptions::default(),
    )
    .unwrap();
    let names: Vec<&str> = sel.nets().iter().map(|&s| n.net_name(s)).collect();
    check(
        sel.nets() == vec![net("d")] && !open(&f2, p0) && !open(&f2, q0),
        format!(
            "selected {names:?} (dominator d); p/sa0 and q/sa0 detected after insertion: {}",
            !open(&f2, p0) && !open(&f2, q0)
        ),
    )
}

/// a (domain 0) loads NOT c; b and c (domain 1) load a and b.
fn cross_domain() -> (Netlist, ScanArchitecture) {
    let n = NetlistBuilder::new()
        .input("x")
        .gate(GateKind::Not, "na", &["c"])
        .gate(GateKind::Dff, "a", &["na"])
        .gate(GateKind::Dff, "b", &["a"])
        .gate(GateKind::Dff, "c", &["b"])
        .gate(GateKind::And, "y", &["x", "c"])
        .output("y")
        .clone()
        .build()
        .unwrap();
    let doms = vec![
        ClockDomain::new(0, "fast", Time::from(4), 0),
        ClockDomain::new(1, "slow", Time::from(10), 1),
    ];
    let rules = vec![DomainRule::new("a", 0), DomainRule::new("*", 1)];
    let n = assign_clock_domains(&n, doms, &rules).unwrap();
    insert_scan(&n, &BTreeMap::from([(0, 1), (1, 1)])).unwrap()
}

/// a (domain 0) loads NOT c; b (domain 1) loads g = a AND c; c (domain 1) loads b.
fn cross_path() -> (Netlist, ScanArchitecture) {
    let n = NetlistBuilder::new()
        .input("x")
        .gate(GateKind::Not, "na", &["c"])
        .gate(GateKind::Dff, "a", &["na"])
        .gate(GateKind::And, "g", &["a", "c"])
        .gate(GateKind::Dff, "b", &["g"])
        .gate(GateKind::Dff, "c", &["b"])
        .gate(GateKind::And, "y", &["x", "c"])
        .output("y")
        .clone()
        .build()
        .unwrap();
    let doms = vec![
        ClockDomain::new(0, "fast", Time::from(4), 0),
        ClockDomain::new(1, "slow", Time::from(10), 1),
    ];
    let rules = vec![DomainRule::new("a", 0), DomainRule::new("*", 1)];
    let n = assign_clock_domains(&n, doms, &rules).unwrap();
    insert_scan(&n, &BTreeMap::from([(0, 1), (1, 1)])).unwrap()
}

fn small_hw(arch: &ScanArchitecture) -> Vec<DomainHw> {
    arch.domains()
        .into_iter()
        .map(|d| {
            let k = arch.chains_of(d).count();
            let prpg = Prpg::new(Polynomial::primitive(8).unwrap(), 3 + d as u64).unwrap();
            let tpg = DomainTpg::new(prpg, PhaseShifter::identity(k, 8).unwrap(), SpaceExpander::identity(k)).unwrap();
            DomainHw {
                domain: d,
                tpg,
                misr: Misr::direct(Polynomial::primitive(8).unwrap(), k).unwrap(),
                compactor: None,
            }
        })
        .collect()
}

fn double_capture() -> Verdict {
    let (n, arch) = cross_domain();
    let model = SimModel::new(&n, &arch).unwrap();
    let cell = |s: &str| arch.cells.iter().position(|c| c.name == s).unwrap();
    let (a, b, c) = (cell("a"), cell("b"), cell("c"));
    let sched = CaptureSchedule::default_for(n.domains(), &[0, 1]);
    sched.validate(n.domains(), &[0, 1]).map_err(|e| e.to_string())?;
    let prog = CaptureProgram::double(&sched);
    let run = model.simulate_good(&StimulusBlock::zeros(&model, 1), &prog);
    let st = |k: usize| (run.states[k][a] & 1, run.states[k][b] & 1, run.states[k][c] & 1);
    // from (0,0,0), pulses fast1 fast2 slow1 slow2: a <- !c, then b <- a, then c <- b
    let hand = [(1, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)];
    let traced = (1..=4).all(|k| st(k) == hand[k - 1]);

    let (pn, parch) = cross_path();
    let pprog = CaptureProgram::double(&CaptureSchedule::default_for(pn.domains(), &[0, 1]));
    let hw = small_hw(&parch);
    let session = |fault: Option<Fault>| {
        let opts = SessionOptions {
            exec: Exec::Sequential,
            fault,
            trace_capacity: None,
        };
        run_bist_session(&pn, &parch, &hw, &pprog, 64, &opts)
            .unwrap()
            .signatures
    };
    let golden = session(None);
    let planted = Fault {
        site: Site::Stem(pn.net_id("g").unwrap()),
        model: FaultModel::Str,
        status: FaultStatus::Undetected,
        class_rep: 0,
    };
    let flipped = session(Some(planted)) != golden;

    let mut doms = n.domains().to_vec();
    set_skew(&mut doms, 0, 1, Time::new(3, 2));
    let mut at = sched.clone();
    at.d3 = Time::new(3, 2);
    let mut below = sched.clone();
    below.d3 = Time::from(1);
    let mut above = sched.clone();
    above.d3 = Time::from(2);
    let rejected = at.validate(&doms, &[0, 1]).is_err() && below.validate(&doms, &[0, 1]).is_err();
    let accepted = above.validate(&doms, &[0, 1]).is_ok();

    // the same rule through the configuration
    let mut cfg = SessionConfig::new(bench_path("s27.bench"));
    cfg.domains = serde_json::from_str(r#"[{"name": "a", "period": "10"}, {"name": "b", "period": "8"}]"#).unwrap();
    cfg.domain_rules = vec![DomainRule::new("G7", 1), DomainRule::new("*", 0)];
    cfg.skew = vec![SkewConfig {
        a: 0,
        b: 1,
        skew: Time::from(2),
    }];
    cfg.schedule = Some(serde_json::from_str(r#"{"d3": "2"}"#).unwrap());
    let cfg_rejected = matches!(prepare(&cfg), Err(e) if e.kind == ErrorKind::Config && e.stage == Stage::Schedule);

    check(
        traced && flipped && rejected && accepted && cfg_rejected,
        format!(
            "hand trace matched: {traced}; planted g/str on the a -> b path flips the signature: {flipped}; d3 <= skew rejected: {}; d3 > skew accepted: {accepted}",
            rejected && cfg_rejected
        ),
    )
}

fn hundredths(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Time {
    Time::new(rng.gen_range(lo..=hi), 100)
}

fn timing_discipline() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 1000;
    let (mut setup_bad, mut hold_bad, mut uncovered) = (0, 0, 0);
    for i in 0..2 * n {
        let prpg = i % 2 == 0;
        let period = hundredths(&mut rng, 100, 2000);
        let t_setup = period * Time::new(rng.gen_range(0..=20), 100);
        let t_hold = period * Time::new(rng.gen_range(0..=20), 100);
        let gap = period * Time::new(rng.gen_range(1..=40), 100);
        let early = hundredths(&mut rng, 0, 500);
        let room = period - t_setup - gap;
        let (launch, capture, d_min, d_max) = if prpg {
            let d_max = room * Time::new(rng.gen_range(0..=1000), 1000);
            let d_min = d_max * Time::new(rng.gen_range(0..=1000), 1000);
            (early, early + gap, d_min, d_max)
        } else {
            let t_hold = t_hold.min(room);
            let d_min = t_hold + (room - t_hold) * Time::new(rng.gen_range(0..=1000), 1000);
            let d_max = d_min + (room - d_min) * Time::new(rng.gen_range(0..=1000), 1000);
            (early + gap, early, d_min, d_max)
        };
        let p = ShiftPath {
            id: format!("p{i}"),
            kind: if prpg {
                PathKind::PrpgToChain
            } else {
                PathKind::ChainToMisr
            },
            domain: None,
            launch_offset: launch,
            capture_offset: capture,
            d_min,
            d_max,
            t_setup,
            t_hold: if prpg { t_hold } else { t_hold.min(room) },
            period,
            retimed: false,
        };
        if !discipline_applies(&p) {
            uncovered += 1;
        }
        let v = classify(&p);
        if prpg && v.setup {
            setup_bad += 1;
        }
        if !prpg && v.hold {
            hold_bad += 1;
        }
    }

    let (mut generated, mut cleared) = (0, 0);
    while generated < n {
        let period = hundredths(&mut rng, 100, 2000);
        let p = ShiftPath {
            id: format!("h{generated}"),
            kind: PathKind::PrpgToChain,
            domain: None,
            launch_offset: hundredths(&mut rng, 0, 500),
            capture_offset: hundredths(&mut rng, 0, 500),
            d_min: hundredths(&mut rng, 0, 300),
            d_max: hundredths(&mut rng, 300, 1500),
            t_setup: hundredths(&mut rng, 0, 50),
            t_hold: hundredths(&mut rng, 0, 200),
            period,
            retimed: false,
        };
        let slack = p.capture_offset - p.launch_offset + p.t_hold - p.d_min;
        if !classify(&p).hold || p.period / 2 <= slack {
            continue;
        }
        generated += 1;
        let q = apply_retiming(&p).map_err(|e| e.to_string())?;
        if q.retimed && !classify(&q).hold {
            cleared += 1;
        }
    }
    check(
        setup_bad == 0 && hold_bad == 0 && uncovered == 0 && cleared == n,
        format!(
            "{n} prpg_to_chain + {n} chain_to_misr conforming paths: {setup_bad} setup / {hold_bad} hold violations, {uncovered} outside the discipline; retiming cleared {cleared}/{n} clearable hold violations"
        ),
    )
}

fn scratch() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lbist-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn determinism() -> Verdict {
    let dir = scratch();
    let cfg = dir.join("bist.json");
    let text = serde_json::json!({
        "netlist": bench_path("s27.bench"),
        "domains": [{"name": "core", "period": "10"}, {"name": "io", "period": "6"}],
        "domain_rules": [{"pattern": "G5", "domain": 1}, {"pattern": "*", "domain": 0}],
        "pattern_count": 3000,
        "tpi_budget": 2,
        "transition_faults": true,
    });
    std::fs::write(&cfg, serde_json::to_string_pretty(&text).unwrap()).unwrap();
    let run = || -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_lbist"))
            .args(["bist", "--config"])
            .arg(&cfg)
            .args(["--emit", "json"])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("bist exited with {}", out.status));
        }
        let s = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
        Ok(s.lines()
            .filter(|l| !l.trim_start().starts_with("\"cpu_time\""))
            .collect::<Vec<_>>()
            .join("\n"))
    };
    let (a, b) = (run()?, run()?);
    let v: serde_json::Value = serde_json::from_str(&a).map_err(|e| e.to_string())?;
    let sigs = v["signatures"].as_array().map_or(0, Vec::len);
    check(
        a == b && sigs == 2,
        format!(
            "two `bist --emit json` runs byte-identical without cpu_time: {}; {sigs} MISR signatures",
            a == b
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("LFSR maximality", lfsr_maximality),
        ("oracle equivalence", oracle_equivalence),
        ("c17 exhaustive coverage and collapsing", c17_exhaustive),
        ("MISR single-error sensitivity and collisions", misr_sensitivity),
        ("flow trend", flow_trend),
        ("TPI soundness", twin_masked_tpi),
        ("double-capture at-speed semantics", double_capture),
        ("timing discipline", timing_discipline),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
